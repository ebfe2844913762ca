"""Latent inversion, weighted anomaly scoring and threshold calibration."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from . import rng as rng_mod
from .errors import DomainError, EmptyCalibrationSet, ShapeMismatch


@dataclass
class ScoreConfig:
    lam: float = 0.9
    invert_steps: int = 200
    invert_lr: float = 0.05
    restarts: int = 3
    seed: int = 0
    chunk: int = 32  # windows inverted together; fixed so results are reproducible

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.invert_steps < 0 or self.restarts < 1 or self.chunk < 1:
            raise ValueError("invert_steps must be >= 0, restarts and chunk >= 1")
        if not self.invert_lr > 0:
            raise ValueError("invert_lr must be positive")


@dataclass
class AnomalyReport:
    window_index: int
    source_span: tuple
    l_r: float
    l_d: float
    score: float
    is_anomaly: bool = None
    best_z: np.ndarray = None
    inversion_final_objective: float = None
    reconstruction: np.ndarray = None


@dataclass
class Threshold:
    value: float
    calibration_percentile: float
    calibration_set_size: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"threshold must be finite, got {self.value}")


@dataclass
class Inversion:
    best_z: np.ndarray
    reconstruction: np.ndarray
    trace: np.ndarray  # objective of the winning restart, before each step and after the last
    final_objective: float


def _pixels(x):
    return getattr(x, "pixels", x)


def residual_loss(x, gz):
    """Sum of absolute pixel differences over all channels."""
    x, gz = np.asarray(_pixels(x), dtype=np.float64), np.asarray(_pixels(gz), dtype=np.float64)
    if x.shape != gz.shape:
        raise ShapeMismatch(f"residual_loss: {x.shape} vs {gz.shape}")
    return float(np.sum(np.abs(x - gz)))


def feature_loss(model, x, gz):
    """Sum of absolute differences of the discriminator features f(x), f(gz)."""
    x, gz = np.asarray(_pixels(x), dtype=np.float64), np.asarray(_pixels(gz), dtype=np.float64)
    if x.shape != gz.shape:
        raise ShapeMismatch(f"feature_loss: {x.shape} vs {gz.shape}")
    return float(np.sum(np.abs(model.features(x) - model.features(gz))))


def anomaly_score(l_r, l_d, lam):
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    if l_r < 0 or l_d < 0:
        raise DomainError(f"losses must be non-negative, got l_r={l_r}, l_d={l_d}")
    return lam * l_r + (1.0 - lam) * l_d


def _per_item_objective(model, z, x, fx, lam):
    """Graph for sum over items of lam*|x-G(z)| + (1-lam)*|f(x)-f(G(z))|.

    Also returns per-item objective values.  Items are independent in eval
    mode, so the gradient of the sum w.r.t. row i of z is the gradient of
    item i's objective alone.
    """
    gz = model.generator(z)
    _, fgz = model.discriminator(gz, features_only=True)
    r = nn.abs_(gz - nn.Tensor(x))
    d = nn.abs_(fgz - nn.Tensor(fx))
    n = z.shape[0]
    per_item = lam * r.data.reshape(n, -1).sum(axis=1) + (1.0 - lam) * d.data.reshape(n, -1).sum(axis=1)
    total = nn.reduce_sum(r) * lam + nn.reduce_sum(d) * (1.0 - lam)
    return total, per_item, gz.data


def initial_latents(model, cfg):
    """Restart starting points; identical for every window under one seed."""
    return rng_mod.stream(cfg.seed, "detector", "invert").uniform(
        -1.0, 1.0, size=(cfg.restarts, model.latent_dim))


def invert_batch(model, xs, cfg, init=None):
    """Invert several images at once; returns a list of :class:`Inversion`.

    ``init`` optionally overrides the starting latents, shape
    ``(restarts, latent_dim)`` shared by all images.
    """
    xs = np.asarray([_pixels(x) for x in xs], dtype=np.float64)
    if xs.ndim != 4 or tuple(xs.shape[1:]) != model.image_shape:
        raise ShapeMismatch(f"query images {xs.shape[1:]} do not match model {model.image_shape}")
    z0 = initial_latents(model, cfg) if init is None else np.atleast_2d(np.asarray(init, dtype=np.float64))
    if z0.shape[1] != model.latent_dim:
        raise ShapeMismatch(f"initial latents must have {model.latent_dim} columns, got {z0.shape}")
    r, m = z0.shape[0], xs.shape[0]

    # item (i, k) = image i, restart k, flattened as i * r + k
    x_rep = np.repeat(xs, r, axis=0)
    fx = np.repeat(model.features(xs), r, axis=0)
    z = np.tile(z0, (m, 1))
    opt = nn.AdamState(lr=cfg.invert_lr, beta1=0.9, beta2=0.999)
    trace = np.empty((cfg.invert_steps + 1, m * r))
    for step in range(cfg.invert_steps + 1):
        zt = nn.Tensor(z, requires_grad=step < cfg.invert_steps)
        total, per_item, gz = _per_item_objective(model, zt, x_rep, fx, cfg.lam)
        trace[step] = per_item
        if step == cfg.invert_steps:
            break
        (gzgrad,) = nn.backward(total, [zt])
        nn.adam_step([z], [gzgrad], opt)
        np.clip(z, -1.0, 1.0, out=z)

    final = trace[-1].reshape(m, r)
    best = np.argmin(final, axis=1)
    out = []
    for i in range(m):
        j = i * r + best[i]
        out.append(Inversion(z[j].copy(), gz[j].copy(), trace[:, j].copy(), float(final[i, best[i]])))
    return out


def invert_latent(model, x, cfg, init=None):
    """Reconstruct one spectrogram; returns ``(best_z, G(best_z), objective trace)``."""
    inv = invert_batch(model, [x], cfg, init)[0]
    return inv.best_z, inv.reconstruction, inv.trace


def _report(model, x, inv, cfg, index, span):
    l_r = residual_loss(x, inv.reconstruction)
    l_d = feature_loss(model, x, inv.reconstruction)
    return AnomalyReport(index, span, l_r, l_d, anomaly_score(l_r, l_d, cfg.lam), None,
                         inv.best_z, inv.final_objective, inv.reconstruction)


def score_windows(model, spectrograms, cfg, progress=None):
    """Reports (without verdict) for a list of spectrograms, in order."""
    reports = []
    for start in range(0, len(spectrograms), cfg.chunk):
        chunk = spectrograms[start:start + cfg.chunk]
        for k, (x, inv) in enumerate(zip(chunk, invert_batch(model, chunk, cfg))):
            span = tuple(getattr(x, "source_span", (0, 0)))
            reports.append(_report(model, _pixels(x), inv, cfg, start + k, span))
        if progress is not None:
            progress(len(reports), len(spectrograms))
    return reports


def score_window(model, x, cfg, index=0, init=None):
    inv = invert_batch(model, [x], cfg, init)[0]
    return _report(model, _pixels(x), inv, cfg, index, tuple(getattr(x, "source_span", (0, 0))))


def threshold_from_scores(scores, percentile):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyCalibrationSet("no calibration scores")
    if not 0.0 < percentile <= 100.0:
        raise DomainError(f"percentile must lie in (0, 100], got {percentile}")
    return Threshold(float(np.percentile(scores, percentile)), float(percentile), int(scores.size))


def calibrate_threshold(model, normals, cfg, percentile=99.0):
    """Percentile (linear interpolation) of held-out normal scores."""
    if len(normals) == 0:
        raise EmptyCalibrationSet("calibration set is empty")
    scores = [r.score for r in score_windows(model, normals, cfg)]
    return threshold_from_scores(scores, percentile)


def apply_threshold(reports, threshold):
    """Strict ``score > threshold``: a score equal to the threshold is normal."""
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    for r in reports:
        r.is_anomaly = bool(r.score > value)
    return reports


def detect(model, threshold, windows, cfg, progress=None):
    if len(windows) == 0:
        return []
    return apply_threshold(score_windows(model, windows, cfg, progress), threshold)


# ---------------------------------------------------------------- export

REPORT_HEADER = ["window_index", "start_sample", "end_sample", "l_r", "l_d", "score", "is_anomaly"]


def write_reports(reports, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow([r.window_index, r.source_span[0], r.source_span[1],
                    repr(r.l_r), repr(r.l_d), repr(r.score), int(bool(r.is_anomaly))])


def read_reports(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [AnomalyReport(int(r["window_index"]), (int(r["start_sample"]), int(r["end_sample"])),
                          float(r["l_r"]), float(r["l_d"]), float(r["score"]), r["is_anomaly"] == "1")
            for r in rows]


def export_features(model, spectrograms, path):
    """Save f(x) for each spectrogram as an (N, F) ``.npy`` array."""
    feats = model.features(np.stack([_pixels(s) for s in spectrograms]))
    np.save(path, feats)
    return feats
