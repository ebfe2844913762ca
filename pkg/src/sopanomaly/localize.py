"""Pixel-residual localization of anomalies and red overlay rendering."""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatch


@dataclass
class ResidualMask:
    residuals: np.ndarray  # (H, W), >= 0
    mask: np.ndarray       # (H, W) bool
    pixel_threshold: float
    time_extent: tuple = None  # (first column, last column)
    freq_extent: tuple = None  # (first row, last row)


def _pixels(x):
    return np.asarray(getattr(x, "pixels", x), dtype=np.float64)


def residual_map(x, gz):
    """Per-pixel maximum over channels of ``|x - gz|``; (C, H, W) -> (H, W)."""
    x, gz = _pixels(x), _pixels(gz)
    if x.shape != gz.shape:
        raise ShapeMismatch(f"residual_map: {x.shape} vs {gz.shape}")
    if x.ndim == 2:
        return np.abs(x - gz)
    return np.abs(x - gz).max(axis=0)


def make_mask(residuals, percentile=98.0):
    """Flag pixels strictly above this map's own ``percentile``."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.size == 0:
        raise ValueError("empty residual map")
    if not 0.0 < percentile < 100.0:
        raise DomainError(f"percentile must lie in (0, 100), got {percentile}")
    thr = float(np.percentile(residuals, percentile))
    mask = residuals > thr
    if not mask.any():
        return ResidualMask(residuals, mask, thr)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return ResidualMask(residuals, mask, thr, (int(cols[0]), int(cols[-1])),
                        (int(rows[0]), int(rows[-1])))


def to_gray(x):
    """[-1, 1] pixels (channel mean for multi-channel) -> float gray in [0, 255]."""
    x = _pixels(x)
    if x.ndim == 3:
        x = x.mean(axis=0)
    return (np.clip(x, -1.0, 1.0) + 1.0) / 2.0 * 255.0


def render_overlay(x, mask):
    """uint8 RGB image (H, W, 3); flagged pixels blended 50% toward red."""
    gray = to_gray(x)
    m = mask.mask if isinstance(mask, ResidualMask) else np.asarray(mask, dtype=bool)
    if gray.shape != m.shape:
        raise ShapeMismatch(f"render_overlay: image {gray.shape} vs mask {m.shape}")
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[m] = 0.5 * rgb[m] + 0.5 * np.array([255.0, 0.0, 0.0])
    return np.floor(rgb + 1e-9).clip(0, 255).astype(np.uint8)


def localize(x, gz, percentile=98.0):
    """Residual map + mask for one original/reconstruction pair."""
    return make_mask(residual_map(x, gz), percentile)


def write_ppm(path, rgb):
    """Binary PPM (P6, maxval 255), rows top to bottom."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not a maxval-255 P6 file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h * 3], dtype=np.uint8).reshape(h, w, 3)
