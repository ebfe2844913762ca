import zlib

import numpy as np
import pytest

from sopanomaly import nncore as nn
from sopanomaly.errors import NonScalarLoss, ShapeMismatch

from oracles import central_difference, loop_conv2d, loop_conv2d_transpose, rel_error

FD_STEP = 1e-5
FD_TOL = 1e-4


def check_gradients(build, arrays, seed=0):
    """``build(*tensors)`` -> Tensor; compares analytic vs central differences.

    The scalar loss is a fixed random projection of the output so that every
    output element contributes with a distinct weight.
    """
    rng = np.random.default_rng(seed)
    out_shape = build(*[nn.tensor(a) for a in arrays]).shape
    proj = rng.normal(size=out_shape)

    def loss_value():
        return float(np.sum(build(*[nn.tensor(a) for a in arrays]).data * proj))

    leaves = [nn.tensor(a, requires_grad=True) for a in arrays]
    loss = nn.reduce_sum(nn.mul(build(*leaves), nn.tensor(proj)))
    analytic = nn.backward(loss, leaves)
    numeric = central_difference(loss_value, arrays, FD_STEP)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


# ---------------------------------------------------------------- forward examples


def test_identity_kernel_conv():
    x = np.random.default_rng(0).normal(size=(1, 1, 4, 4))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out = nn.conv2d(nn.tensor(x), nn.tensor(w), stride=1, pad=1)
    np.testing.assert_array_equal(out.data, x)


def test_pointwise_values_at_zero():
    z = nn.tensor(np.zeros(3))
    assert np.all(nn.tanh(z).data == 0.0)
    assert np.all(nn.sigmoid(z).data == 0.5)


def test_sigmoid_extremes_finite():
    out = nn.sigmoid(nn.tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_conv2d_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(1, 1, 3, 3)), rng.normal(size=1)
    out = nn.conv2d(nn.tensor(x), nn.tensor(w), nn.tensor(b), stride=2, pad=1)
    assert out.shape == (1, 1, 3, 3)
    assert np.max(np.abs(out.data - loop_conv2d(x, w, b, 2, 1))) <= 1e-12


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 4), (2, 0, 3), (3, 1, 4)])
def test_conv_shapes_and_loops(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 3, 9, 7))
    w = rng.normal(size=(4, 3, k, k))
    out = nn.conv2d(nn.tensor(x), nn.tensor(w), None, stride, pad)
    assert out.shape[2:] == (nn.conv_out_size(9, k, stride, pad), nn.conv_out_size(7, k, stride, pad))
    np.testing.assert_allclose(out.data, loop_conv2d(x, w, None, stride, pad), atol=1e-11)
    y = rng.normal(size=(2, 4, 3, 3))
    wt = rng.normal(size=(4, 2, k, k))
    bt = rng.normal(size=2)
    outt = nn.conv2d_transpose(nn.tensor(y), nn.tensor(wt), nn.tensor(bt), stride, pad)
    np.testing.assert_allclose(outt.data, loop_conv2d_transpose(y, wt, bt, stride, pad), atol=1e-11)


@pytest.mark.parametrize("seed", range(10))
def test_conv_transpose_is_adjoint(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 4, size=2)
    x = rng.normal(size=(2, c_in, 8, 8))
    w = rng.normal(size=(c_out, c_in, 4, 4))
    y = rng.normal(size=(2, c_out, 4, 4))
    lhs = np.sum(nn.conv2d(nn.tensor(x), nn.tensor(w), None, 2, 1).data * y)
    rhs = np.sum(x * nn.conv2d_transpose(nn.tensor(y), nn.tensor(w), None, 2, 1).data)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_shape_mismatch_messages():
    with pytest.raises(ShapeMismatch, match=r"\(2, 3\)"):
        nn.add(nn.tensor(np.zeros((2, 3))), nn.tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeMismatch, match="channels"):
        nn.conv2d(nn.tensor(np.zeros((1, 2, 4, 4))), nn.tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeMismatch):
        nn.dense(nn.tensor(np.zeros((2, 3))), nn.tensor(np.zeros((4, 1))))


def test_batch_norm_train_statistics():
    rng = np.random.default_rng(0)
    x = nn.tensor(rng.normal(3.0, 5.0, size=(8, 4, 6, 6)))
    stats = nn.BatchNormStats.fresh(4)
    out = nn.batch_norm(x, nn.tensor(np.ones(4)), nn.tensor(np.zeros(4)), stats, training=True).data
    assert np.max(np.abs(out.mean(axis=(0, 2, 3)))) <= 1e-6
    assert np.max(np.abs(out.var(axis=(0, 2, 3)) - 1.0)) <= 1e-4
    # running stats moved by (1 - momentum) toward the batch stats
    np.testing.assert_allclose(stats.running_mean, 0.1 * x.data.mean(axis=(0, 2, 3)))


def test_batch_norm_eval_uses_running_stats():
    stats = nn.BatchNormStats(np.array([1.0]), np.array([4.0]))
    x = nn.tensor(np.full((2, 1), 5.0))
    out = nn.batch_norm(x, nn.tensor([2.0]), nn.tensor([0.5]), stats, training=False).data
    np.testing.assert_allclose(out, 2.0 * 4.0 / np.sqrt(4.0 + 1e-5) + 0.5)
    assert stats.running_mean[0] == 1.0


# ---------------------------------------------------------------- backward examples


def test_grad_of_sum_is_ones():
    p = nn.tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    (g,) = nn.backward(nn.reduce_sum(p), [p])
    assert np.all(g == 1.0)


def test_grad_of_tanh_at_zero():
    p = nn.tensor(np.zeros((2, 5)), requires_grad=True)
    (g,) = nn.backward(nn.reduce_sum(nn.tanh(p)), [p])
    assert np.all(g == 1.0)


def test_non_scalar_loss():
    p = nn.tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(NonScalarLoss):
        nn.backward(nn.tanh(p), [p])


def test_shared_subgraph_accumulates():
    p = nn.tensor(np.array([2.0]), requires_grad=True)
    q = nn.mul(p, p) + p  # d/dp = 2p + 1
    (g,) = nn.backward(nn.reduce_sum(q), [p])
    assert g[0] == 5.0


def test_unrelated_leaf_gets_zero_grad():
    p = nn.tensor(np.ones(2), requires_grad=True)
    q = nn.tensor(np.ones(3), requires_grad=True)
    gp, gq = nn.backward(nn.reduce_sum(p), [p, q])
    assert np.all(gq == 0.0)


def test_frozen_parameters_skip_weight_grads():
    x = nn.tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
    w = nn.tensor(np.ones((1, 1, 3, 3)))
    out = nn.conv2d(x, w, pad=1)
    assert out.requires_grad
    assert not nn.conv2d(nn.tensor(np.ones((1, 1, 4, 4))), w).requires_grad


OP_CASES = {
    "add": (lambda a, b: nn.add(a, b), [(2, 3), (2, 3)]),
    "mul": (lambda a, b: nn.mul(a, b), [(2, 3), (2, 3)]),
    "scalar": (lambda a: (a * 3.0 - 1.5) / 2.0, [(2, 3)]),
    "abs": (lambda a: nn.abs_(a), [(3, 4)]),
    "relu": (lambda a: nn.relu(a), [(3, 4)]),
    "leaky_relu": (lambda a: nn.leaky_relu(a, 0.2), [(3, 4)]),
    "tanh": (lambda a: nn.tanh(a), [(3, 4)]),
    "sigmoid": (lambda a: nn.sigmoid(a), [(3, 4)]),
    "flatten": (lambda a: nn.flatten(nn.tanh(a)), [(2, 3, 2, 2)]),
    "reduce_sum": (lambda a: nn.reduce_sum(nn.tanh(a)), [(2, 3)]),
    "mean": (lambda a: nn.mean(nn.tanh(a)), [(2, 3)]),
    "dense": (lambda x, w, b: nn.dense(x, w, b), [(3, 5), (5, 4), (4,)]),
    "conv2d": (lambda x, w, b: nn.conv2d(x, w, b, 2, 1), [(2, 3, 8, 8), (2, 3, 4, 4), (2,)]),
    "conv2d_s1": (lambda x, w: nn.conv2d(x, w, None, 1, 1), [(2, 2, 5, 5), (3, 2, 3, 3)]),
    "conv2d_transpose": (lambda x, w, b: nn.conv2d_transpose(x, w, b, 2, 1),
                         [(2, 3, 4, 4), (3, 2, 4, 4), (2,)]),
    "batch_norm_train": (lambda x, g, b: nn.batch_norm(x, g, b, nn.BatchNormStats.fresh(3), True),
                         [(2, 3, 4, 4), (3,), (3,)]),
    "batch_norm_eval": (lambda x, g, b: nn.batch_norm(
        x, g, b, nn.BatchNormStats(np.array([0.1, -0.2, 0.3]), np.array([0.5, 1.5, 2.0])), False),
        [(2, 3, 4, 4), (3,), (3,)]),
    "batch_norm_2d": (lambda x, g, b: nn.batch_norm(x, g, b, nn.BatchNormStats.fresh(3), True),
                      [(5, 3), (3,), (3,)]),
    "log_clip": (lambda a: nn.log(nn.clip(nn.sigmoid(a), 1e-7, 1 - 1e-7)), [(3, 3)]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_finite_difference(name):
    build, shapes = OP_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    # keep abs/relu inputs away from their kink for a clean central difference
    arrays = [rng.uniform(0.1, 1.0, size=s) * rng.choice([-1.0, 1.0], size=s) for s in shapes]
    assert check_gradients(build, arrays) <= FD_TOL


# ---------------------------------------------------------------- Adam


def test_adam_zero_grad_keeps_params():
    p = [np.array([1.0, -2.0])]
    nn.adam_step(p, [np.zeros(2)], nn.AdamState(lr=0.1))
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_closed_form():
    p = [np.array([1.0])]
    state = nn.AdamState(lr=0.1)
    nn.adam_step(p, [np.array([1.0])], state)
    # m_hat = g, v_hat = g^2 after bias correction
    assert p[0][0] == pytest.approx(1.0 - 0.1 * 1.0 / (1.0 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_constant_gradient_monotone():
    p = [np.array([0.0])]
    state = nn.AdamState(lr=0.01)
    prev = []
    for _ in range(100):
        nn.adam_step(p, [np.array([0.7])], state)
        prev.append(p[0][0])
    assert np.all(np.diff(prev) < 0)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        nn.adam_step([np.zeros(2)], [np.zeros(3)], nn.AdamState())
    with pytest.raises(ValueError):
        nn.AdamState(beta1=1.0)


def test_determinism_bit_identical():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(4, 2, 8, 8)), rng.normal(size=(3, 2, 4, 4))
    runs = []
    for _ in range(2):
        X, W = nn.tensor(x, True), nn.tensor(w, True)
        loss = nn.reduce_sum(nn.tanh(nn.conv2d(X, W, None, 2, 1)))
        runs.append([loss.data.copy()] + nn.backward(loss, [X, W]))
    for a, b in zip(*runs):
        assert np.array_equal(a, b)
