"""Small reverse-mode autodiff engine on float64 numpy arrays.

Only the layers the GAN needs are provided: strided convolution and its
transpose, batch normalisation, a dense layer, a handful of pointwise
nonlinearities and reductions.  No broadcasting beyond scalars.

A ``Tensor`` records the op that produced it; :func:`backward` walks the
recorded graph in reverse topological order.  Gradients are only
propagated into subgraphs that contain a leaf with ``requires_grad``.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import NonScalarLoss, ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def numpy(self):
        return self.data

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul_scalar(other, -1.0))
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __truediv__(self, c):
        return mul_scalar(self, 1.0 / c)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _node(data, parents, backward_fn, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward_fn if needs else None, op=op)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- graph


def topo_order(loss):
    """Nodes reachable from ``loss`` that carry gradient, parents first."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, wrt):
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors in ``wrt`` that the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    keep = {id(t) for t in wrt}
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo_order(loss)):
        if node._backward is None:
            continue
        g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


# ---------------------------------------------------------------- pointwise


def add(a, b):
    _same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    _same_shape("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def add_scalar(a, c):
    return _node(a.data + c, (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a, c):
    return _node(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def abs_(a):
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a):
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def leaky_relu(a, slope=0.2):
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    return _node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    # split form avoids overflow in exp for large |x|
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(a):
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- shape / reduce


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a):
    """(N, ...) -> (N, prod(...))"""
    return reshape(a, (a.shape[0], -1))


def reduce_sum(a):
    return _node(np.sum(a.data), (a,), lambda g: (np.full(a.shape, float(g)),), "reduce_sum")


def mean(a):
    return mul_scalar(reduce_sum(a), 1.0 / a.size)


# ---------------------------------------------------------------- dense


def dense(x, w, b=None):
    """x: (N, in), w: (in, out), b: (out,)"""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw, "dense")


# ---------------------------------------------------------------- convolution


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, k, stride, ho, wo):
    """Contiguous patch matrix (N, C*k*k, Ho*Wo) of padded input ``xp``."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    view = as_strided(xp, shape=(n, c, k, k, ho, wo),
                      strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    return np.ascontiguousarray(view).reshape(n, c * k * k, ho * wo)


def _col2im(cols, channels, k, out_hw, padded_hw, stride):
    """Adjoint of :func:`_im2col`: scatter-add (N, C*k*k, Ho*Wo) into (N, C, Hp, Wp).

    Taps are accumulated per stride phase into contiguous buffers, then
    interleaved once.
    """
    n = cols.shape[0]
    ho, wo = out_hw
    hp, wp = padded_hw
    c, s = channels, stride
    cols = cols.reshape(n, c, k, k, ho, wo)
    phases = np.zeros((s, s, n, c, -(-hp // s), -(-wp // s)), dtype=DTYPE)
    for i in range(k):
        a, u = i % s, i // s
        for j in range(k):
            b, v = j % s, j // s
            phases[a, b, :, :, u:u + ho, v:v + wo] += cols[:, :, i, j]
    if s == 1:
        return phases[0, 0, :, :, :hp, :wp]
    out = np.empty((n, c, hp, wp), dtype=DTYPE)
    for a in range(s):
        for b in range(s):
            out[:, :, a::s, b::s] = phases[a, b, :, :, :-(-(hp - a) // s), :-(-(wp - b) // s)]
    return out


def _pad(a, pad):
    if pad == 0:
        return np.ascontiguousarray(a)
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _crop(a, pad):
    if pad == 0:
        return a
    return a[:, :, pad:-pad, pad:-pad]


def _check_conv(op, x, w, b, in_axis):
    if x.data.ndim != 4 or w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"{op}: input {x.shape} / kernel {w.shape} must be 4-D with square kernel")
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeMismatch(f"{op}: input channels {x.shape[1]} do not match kernel {w.shape}")
    out_ch = w.shape[1 - in_axis]
    if b is not None and b.shape != (out_ch,):
        raise ShapeMismatch(f"{op}: bias {b.shape} does not match {out_ch} output channels")


def conv2d(x, w, b=None, stride=1, pad=0):
    """Cross-correlation with zero padding.

    x: (N, C, H, W); w: (O, C, k, k); b: (O,) -> (N, O, Ho, Wo)
    """
    _check_conv("conv2d", x, w, b, in_axis=1)
    k = w.shape[2]
    n, c, h, wd = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: kernel {k} too large for input {x.shape} with pad {pad}")
    xp = _pad(x.data, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = w.data.reshape(w.shape[0], -1)
    out = np.matmul(wmat, cols).reshape(n, -1, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(g):
        g2 = g.reshape(n, g.shape[1], ho * wo)
        gx = gw = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            gx = np.ascontiguousarray(_crop(_col2im(gcols, c, k, (ho, wo), xp.shape[2:], stride), pad))
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw, "conv2d")


def conv_transpose_out_size(n, k, stride, pad):
    return (n - 1) * stride + k - 2 * pad


def conv2d_transpose(x, w, b=None, stride=1, pad=0):
    """Adjoint of :func:`conv2d` with respect to its input.

    x: (N, Ci, H, W); w: (Ci, Co, k, k) -- the same layout a conv2d mapping
    Co -> Ci channels would use -- b: (Co,) -> (N, Co, Ho, Wo) with
    Ho = (H - 1) * stride + k - 2 * pad.
    """
    _check_conv("conv2d_transpose", x, w, b, in_axis=0)
    k = w.shape[2]
    n, ci, h, wd = x.shape
    ho, wo = conv_transpose_out_size(h, k, stride, pad), conv_transpose_out_size(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d_transpose: padding {pad} too large for input {x.shape}")
    padded = ((h - 1) * stride + k, (wd - 1) * stride + k)
    co = w.shape[1]
    wmat = w.data.reshape(ci, -1)
    xm = x.data.reshape(n, ci, h * wd)
    cols = np.matmul(wmat.T, xm)
    out = np.ascontiguousarray(_crop(_col2im(cols, co, k, (h, wd), padded, stride), pad))
    if b is not None:
        out += b.data[None, :, None, None]

    def bw(g):
        gcols = _im2col(_pad(g, pad), k, stride, h, wd)
        gx = gw = None
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(x.shape)
        if w.requires_grad:
            gw = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if b.requires_grad else None)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw, "conv2d_transpose")


# ---------------------------------------------------------------- batch norm


@dataclass
class BatchNormStats:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def fresh(cls, channels, momentum=0.9):
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batch_norm(x, gamma, beta, stats, training, eps=1e-5):
    """Per-channel normalisation of (N, C) or (N, C, H, W) input.

    In training mode batch statistics are used and ``stats`` is updated in
    place: ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.data.ndim not in (2, 4):
        raise ShapeMismatch(f"batch_norm: expected 2-D or 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batch_norm: gamma {gamma.shape} / beta {beta.shape} vs {c} channels")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.data.ndim == 2 else (1, c, 1, 1)

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = stats.momentum
        stats.running_mean = m * stats.running_mean + (1.0 - m) * mu
        stats.running_var = m * stats.running_var + (1.0 - m) * var
    else:
        mu, var = stats.running_mean, stats.running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    count = x.data.size // c

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gxhat.sum(axis=axes).reshape(bshape)
                s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (inv.reshape(bshape) / count) * (count * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


def adam_step(params, grads, state):
    """Bias-corrected Adam update of ``params`` (list of arrays) in place.

    Moment buffers are created lazily on the first call.  Returns
    ``(params, state)``.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"adam_step: {len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"adam_step: param {p.shape} vs grad {g.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise ShapeMismatch("adam_step: moment buffers do not match params")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
