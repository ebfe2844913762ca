"""Convolutional generator/discriminator pair and the adversarial training loop.

Generator::

    z (latent) -> dense -> reshape [4b, H/4, W/4]
      -> convT 4x4/2 -> batch_norm -> relu        [2b, H/2, W/2]
      -> convT 4x4/2 -> tanh                      [C, H, W]

Discriminator::

    x [C, H, W] -> conv 4x4/2 -> leaky_relu(0.2)               [b, H/2, W/2]
      -> conv 4x4/2 -> batch_norm -> leaky_relu(0.2)            [2b, H/4, W/4]
      -> flatten -> dense -> sigmoid                            scalar

All convolutions use kernel 4, stride 2, zero padding 1, so each stage
exactly halves (or doubles) the spatial size.  The feature extractor f(x)
is the flattened output of one of the two conv blocks (the last by default).
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from . import rng as rng_mod
from .errors import EmptyTrainingSet, InvalidShape, ShapeMismatch

log = logging.getLogger(__name__)

KERNEL, STRIDE, PAD = 4, 2, 1
PROB_CLAMP = 1e-7
LEAK = 0.2


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    seed: int = 0
    d_steps_per_g_step: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ValueError("epochs must be >= 0; batch_size and d_steps_per_g_step >= 1")
        if not (self.lr_g > 0 and self.lr_d > 0 and 0 <= self.beta1 < 1):
            raise ValueError("learning rates must be positive and beta1 in [0, 1)")


class GanModel:
    """Parameters, batch-norm running statistics and architecture metadata."""

    def __init__(self, latent_dim, image_shape, base_channels, params, bn_stats,
                 norm_stats=None, feature_layer=1):
        self.latent_dim = int(latent_dim)
        self.image_shape = tuple(int(v) for v in image_shape)
        self.base_channels = int(base_channels)
        self.params = params
        self.bn_stats = bn_stats
        self.norm_stats = norm_stats
        if feature_layer not in (0, 1):
            raise InvalidShape(f"feature_layer must address conv block 0 or 1, got {feature_layer}")
        self.feature_layer = feature_layer

    def copy(self):
        return GanModel(self.latent_dim, self.image_shape, self.base_channels,
                        {k: v.copy() for k, v in self.params.items()},
                        {k: nn.BatchNormStats(s.running_mean.copy(), s.running_var.copy(), s.momentum)
                         for k, s in self.bn_stats.items()},
                        self.norm_stats, self.feature_layer)

    @property
    def g_names(self):
        return sorted(k for k in self.params if k.startswith("g."))

    @property
    def d_names(self):
        return sorted(k for k in self.params if k.startswith("d."))

    def param_shapes(self):
        return expected_shapes(self.latent_dim, self.image_shape, self.base_channels)

    def feature_size(self):
        c, h, w = self.image_shape
        b = self.base_channels
        if self.feature_layer == 0:
            return b * (h // 2) * (w // 2)
        return 2 * b * (h // 4) * (w // 4)

    def leaves(self, names, requires_grad):
        return {k: nn.Tensor(self.params[k], requires_grad=requires_grad) for k in names}

    # -- forward passes -------------------------------------------------

    def generator(self, z, training=False, p=None):
        """z: Tensor (N, latent_dim) -> Tensor (N, C, H, W)."""
        p = p or self.leaves(self.g_names, False)
        if z.data.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeMismatch(f"latent batch must be (N, {self.latent_dim}), got {z.shape}")
        c, h, w = self.image_shape
        b = self.base_channels
        x = nn.dense(z, p["g.dense.w"], p["g.dense.b"])
        x = nn.reshape(x, (z.shape[0], 4 * b, h // 4, w // 4))
        x = nn.conv2d_transpose(x, p["g.convt1.w"], None, STRIDE, PAD)
        x = nn.batch_norm(x, p["g.bn1.gamma"], p["g.bn1.beta"], self.bn_stats["g.bn1"], training)
        x = nn.relu(x)
        x = nn.conv2d_transpose(x, p["g.convt2.w"], p["g.convt2.b"], STRIDE, PAD)
        return nn.tanh(x)

    def discriminator(self, x, training=False, p=None, features_only=False):
        """x: Tensor (N, C, H, W) -> (prob Tensor (N, 1), feature Tensor (N, F))."""
        p = p or self.leaves(self.d_names, False)
        if x.data.ndim != 4 or tuple(x.shape[1:]) != self.image_shape:
            raise ShapeMismatch(f"image batch must be (N, {self.image_shape}), got {x.shape}")
        h = nn.conv2d(x, p["d.conv1.w"], p["d.conv1.b"], STRIDE, PAD)
        h = nn.leaky_relu(h, LEAK)
        if self.feature_layer == 0 and features_only:
            return None, nn.flatten(h)
        feat0 = h
        h = nn.conv2d(h, p["d.conv2.w"], None, STRIDE, PAD)
        h = nn.batch_norm(h, p["d.bn2.gamma"], p["d.bn2.beta"], self.bn_stats["d.bn2"], training)
        h = nn.leaky_relu(h, LEAK)
        feat = nn.flatten(h if self.feature_layer == 1 else feat0)
        if features_only:
            return None, feat
        prob = nn.sigmoid(nn.dense(nn.flatten(h), p["d.dense.w"], p["d.dense.b"]))
        return prob, feat

    # -- numpy conveniences (eval mode) ----------------------------------

    def generate(self, z):
        return self.generator(nn.Tensor(np.atleast_2d(z))).data

    def discriminate(self, x):
        return self.discriminator(nn.Tensor(_as_batch(x)))[0].data[:, 0]

    def features(self, x):
        return self.discriminator(nn.Tensor(_as_batch(x)), features_only=True)[1].data


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def expected_shapes(latent_dim, image_shape, base_channels):
    c, h, w = image_shape
    b = base_channels
    return {
        "g.dense.w": (latent_dim, 4 * b * (h // 4) * (w // 4)),
        "g.dense.b": (4 * b * (h // 4) * (w // 4),),
        "g.convt1.w": (4 * b, 2 * b, KERNEL, KERNEL),
        "g.bn1.gamma": (2 * b,),
        "g.bn1.beta": (2 * b,),
        "g.convt2.w": (2 * b, c, KERNEL, KERNEL),
        "g.convt2.b": (c,),
        "d.conv1.w": (b, c, KERNEL, KERNEL),
        "d.conv1.b": (b,),
        "d.conv2.w": (2 * b, b, KERNEL, KERNEL),
        "d.bn2.gamma": (2 * b,),
        "d.bn2.beta": (2 * b,),
        "d.dense.w": (2 * b * (h // 4) * (w // 4), 1),
        "d.dense.b": (1,),
    }


def build_model(latent_dim=16, image_shape=(1, 64, 64), base_channels=16, seed=0,
                norm_stats=None, feature_layer=1):
    """Fresh model with N(0, 0.02) weights, unit BN scales and zero biases."""
    c, h, w = image_shape
    if latent_dim < 1 or base_channels < 1 or c < 1:
        raise InvalidShape("latent_dim, base_channels and channel count must be >= 1")
    if h % 4 or w % 4 or h < 4 or w < 4:
        raise InvalidShape(f"image height and width must be positive multiples of 4, got {h}x{w}")
    gen = rng_mod.stream(seed, "gan", "init")
    params = {}
    for name, shape in sorted(expected_shapes(latent_dim, image_shape, base_channels).items()):
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith(".b") or name.endswith(".beta"):
            params[name] = np.zeros(shape)
        else:
            params[name] = gen.normal(0.0, 0.02, size=shape)
    b = base_channels
    bn = {"g.bn1": nn.BatchNormStats.fresh(2 * b), "d.bn2": nn.BatchNormStats.fresh(2 * b)}
    return GanModel(latent_dim, image_shape, base_channels, params, bn, norm_stats, feature_layer)


def sample_noise(gen, n, latent_dim):
    return gen.uniform(-1.0, 1.0, size=(n, latent_dim))


# ---------------------------------------------------------------- losses


def _neg_mean_log(prob):
    return -nn.mean(nn.log(nn.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)))


def d_loss_tensor(model, real, fake, p=None, training=True):
    pr, _ = model.discriminator(real, training, p)
    pf, _ = model.discriminator(fake, training, p)
    return _neg_mean_log(pr) + _neg_mean_log(1.0 - pf)


def g_loss_tensor(model, z, pg=None, training=True):
    fake = model.generator(z, training, pg)
    pf, _ = model.discriminator(fake, training)
    return _neg_mean_log(pf)


def _check_batch(model, batch, what):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[0] == 0 or tuple(batch.shape[1:]) != model.image_shape:
        raise ShapeMismatch(f"{what} batch must be (N>0, {model.image_shape}), got {batch.shape}")
    return batch


def d_loss(model, real, fake, training=True):
    """-mean log D(real) - mean log(1 - D(fake)), probabilities clamped."""
    real = _check_batch(model, real, "real")
    fake = _check_batch(model, fake, "fake")
    return float(d_loss_tensor(model, nn.Tensor(real), nn.Tensor(fake), training=training).data)


def g_loss(model, z, training=True):
    """Non-saturating generator loss -mean log D(G(z))."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 0:
        raise ShapeMismatch("noise batch is empty")
    return float(g_loss_tensor(model, nn.Tensor(z), training=training).data)


# ---------------------------------------------------------------- training


@dataclass
class Optimisers:
    g: nn.AdamState
    d: nn.AdamState


def make_optimisers(cfg):
    return Optimisers(nn.AdamState(lr=cfg.lr_g, beta1=cfg.beta1),
                      nn.AdamState(lr=cfg.lr_d, beta1=cfg.beta1))


def d_step(model, real, fake, opt):
    """One Adam step on the discriminator; returns the pre-step loss."""
    names = model.d_names
    p = model.leaves(names, True)
    loss = d_loss_tensor(model, nn.Tensor(real), nn.Tensor(fake), p)
    grads = nn.backward(loss, [p[k] for k in names])
    nn.adam_step([model.params[k] for k in names], grads, opt)
    return float(loss.data)


def g_step(model, z, opt):
    names = model.g_names
    p = model.leaves(names, True)
    loss = g_loss_tensor(model, nn.Tensor(z), p)
    grads = nn.backward(loss, [p[k] for k in names])
    nn.adam_step([model.params[k] for k in names], grads, opt)
    return float(loss.data)


def train(model, spectrograms, cfg, progress=None):
    """Adversarial training on normal-only images of shape (N, C, H, W).

    Returns ``(model, history)`` where history holds one
    ``(mean d_loss, mean g_loss)`` pair per epoch.  The model is updated in
    place.
    """
    data = np.asarray(spectrograms, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] == 0:
        raise EmptyTrainingSet("training set is empty")
    if tuple(data.shape[1:]) != model.image_shape:
        raise ShapeMismatch(f"training images {data.shape[1:]} do not match model {model.image_shape}")
    if cfg.batch_size > data.shape[0]:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {data.shape[0]}")

    opt = make_optimisers(cfg)
    shuffle = rng_mod.stream(cfg.seed, "gan", "shuffle")
    noise = rng_mod.stream(cfg.seed, "gan", "noise")
    n, bs = data.shape[0], cfg.batch_size
    history = []
    for epoch in range(cfg.epochs):
        perm = shuffle.permutation(n)
        d_losses, g_losses = [], []
        # incomplete trailing batches are dropped: batch-norm needs a real batch
        for start in range(0, n - bs + 1, bs):
            real = data[perm[start:start + bs]]
            for _ in range(cfg.d_steps_per_g_step):
                z = sample_noise(noise, bs, model.latent_dim)
                fake = model.generator(nn.Tensor(z), training=True).data
                d_losses.append(d_step(model, real, fake, opt.d))
            g_losses.append(g_step(model, sample_noise(noise, bs, model.latent_dim), opt.g))
        history.append((float(np.mean(d_losses)), float(np.mean(g_losses))))
        log.info("epoch %d d_loss %.4f g_loss %.4f", epoch, *history[-1])
        if progress is not None:
            progress(epoch, *history[-1])
    return model, history
