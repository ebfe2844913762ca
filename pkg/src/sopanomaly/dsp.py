"""Stokes time series ingestion, windowing and STFT spectrogram images."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (DataError, EmptyTrainingSet, ParseError, SeriesTooShort,
                     WindowTooShort)

CHANNEL_IDS = ("S1", "S2", "S3")


@dataclass
class StokesSeries:
    """Multi-channel polarization series; ``channels`` has shape (C, n)."""

    sample_rate_hz: float
    channels: np.ndarray
    channel_ids: tuple
    t: np.ndarray = None

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=np.float64))
        self.channel_ids = tuple(c.upper() for c in self.channel_ids)
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if len(self.channel_ids) != self.channels.shape[0] or not self.channel_ids:
            raise DataError(f"{self.channels.shape[0]} channel arrays but ids {self.channel_ids}")
        unknown = set(self.channel_ids) - set(CHANNEL_IDS)
        if unknown or len(set(self.channel_ids)) != len(self.channel_ids):
            raise DataError(f"channel ids must be distinct members of {CHANNEL_IDS}, got {self.channel_ids}")
        if self.channels.shape[1] < 1:
            raise DataError("series is empty")
        if not np.all(np.isfinite(self.channels)):
            raise DataError("series contains NaN or Inf samples")
        if self.t is None:
            self.t = np.arange(self.length) / self.sample_rate_hz

    @property
    def length(self):
        return self.channels.shape[1]

    def select(self, channel_ids):
        """Sub-series restricted to ``channel_ids`` (in the order given)."""
        wanted = tuple(c.upper() for c in channel_ids)
        missing = [c for c in wanted if c not in self.channel_ids]
        if missing:
            raise DataError(f"series has channels {self.channel_ids}, missing {missing}")
        rows = [self.channel_ids.index(c) for c in wanted]
        return StokesSeries(self.sample_rate_hz, self.channels[rows], wanted, self.t)


def read_csv(path, sample_rate_hz):
    """Parse ``t,s1[,s2][,s3]`` CSV.  Errors carry 1-based line numbers."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    header = [h.strip().lower() for h in rows[0]]
    if not header or header[0] != "t":
        raise ParseError(f"header must start with 't', got {rows[0]}", line=1)
    ids = header[1:]
    if not ids or any(h not in ("s1", "s2", "s3") for h in ids) or len(set(ids)) != len(ids):
        raise ParseError(f"header columns after 't' must be distinct s1/s2/s3, got {ids}", line=1)

    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            data[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not np.all(np.isfinite(data[i])):
            raise ParseError("non-finite value", line=lineno)
        if i > 0 and not data[i, 0] > data[i - 1, 0]:
            raise ParseError("timestamps must be strictly increasing", line=lineno)
    if data.shape[0] == 0:
        raise ParseError("no data rows", line=2)
    return StokesSeries(sample_rate_hz, data[:, 1:].T, tuple(h.upper() for h in ids), t=data[:, 0])


def write_csv(series, path):
    with open(path, "w", newline="") as fh:
        fh.write("t," + ",".join(c.lower() for c in series.channel_ids) + "\n")
        for k in range(series.length):
            vals = [series.t[k]] + list(series.channels[:, k])
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


# ---------------------------------------------------------------- windowing


@dataclass
class WindowPlan:
    window_len: int
    hop: int = None
    mode: str = "training"

    def __post_init__(self):
        if self.mode not in ("training", "streaming"):
            raise ValueError(f"mode must be 'training' or 'streaming', got {self.mode!r}")
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.hop is None:
            self.hop = self.window_len if self.mode == "training" else max(1, self.window_len // 2)
        if self.mode == "training" and self.hop != self.window_len:
            raise ValueError("training windows are non-overlapping: hop must equal window_len")
        if not 1 <= self.hop <= self.window_len:
            raise ValueError(f"hop must lie in [1, {self.window_len}], got {self.hop}")


@dataclass
class Window:
    data: np.ndarray  # (C, window_len)
    start: int
    end: int
    channel_ids: tuple


def segment(series, plan):
    """Chronological windows; a trailing remainder shorter than a window is dropped."""
    if series.length < plan.window_len:
        raise SeriesTooShort(f"series has {series.length} samples, window needs {plan.window_len}")
    count = (series.length - plan.window_len) // plan.hop + 1
    out = []
    for i in range(count):
        s = i * plan.hop
        out.append(Window(series.channels[:, s:s + plan.window_len], s, s + plan.window_len,
                          series.channel_ids))
    return out


# ---------------------------------------------------------------- STFT


@dataclass
class StftConfig:
    fft_size: int = 128
    seg_len: int = 128
    seg_hop: int = 31
    window_fn: str = "hann"
    log_floor_db: float = -100.0
    out_height: int = 64
    out_width: int = 64

    def __post_init__(self):
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 1 <= self.seg_len <= self.fft_size:
            raise ValueError("seg_len must lie in [1, fft_size]")
        if not 1 <= self.seg_hop <= self.seg_len:
            raise ValueError("seg_hop must lie in [1, seg_len]")
        if self.window_fn not in ("hann", "rectangular"):
            raise ValueError(f"window_fn must be 'hann' or 'rectangular', got {self.window_fn!r}")
        if self.out_height % 4 or self.out_width % 4 or self.out_height < 4 or self.out_width < 4:
            raise ValueError("output height and width must be positive multiples of 4")

    @property
    def eps(self):
        return 10.0 ** (self.log_floor_db / 20.0)

    def taper(self):
        if self.window_fn == "rectangular":
            return np.ones(self.seg_len)
        # periodic Hann
        n = np.arange(self.seg_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.seg_len)

    def n_frames(self, window_len):
        return (window_len - self.seg_len) // self.seg_hop + 1


def stft_magnitude(window, cfg):
    """|STFT| of a 1-D window, shape (fft_size // 2 + 1, frames)."""
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D window, got shape {x.shape}")
    if x.size < cfg.seg_len:
        raise WindowTooShort(f"window has {x.size} samples, STFT segment needs {cfg.seg_len}")
    segs = sliding_window_view(x, cfg.seg_len)[::cfg.seg_hop] * cfg.taper()
    return np.abs(np.fft.rfft(segs, n=cfg.fft_size, axis=1)).T


def to_db(grid, cfg):
    return 20.0 * np.log10(np.asarray(grid, dtype=np.float64) + cfg.eps)


@dataclass
class NormStats:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"invalid normalisation range [{self.lo}, {self.hi}]")


def fit_norm_stats(grids, cfg):
    """1st/99th percentile of all dB values in the training magnitude grids."""
    grids = list(grids)
    if not grids:
        raise EmptyTrainingSet("no training grids to fit normalisation on")
    db = np.concatenate([to_db(g, cfg).ravel() for g in grids])
    lo, hi = np.percentile(db, [1.0, 99.0])
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    return NormStats(float(lo), float(hi))


def resize_bilinear(img, height, width):
    """Corner-aligned bilinear resize of a 2-D array."""
    h, w = img.shape

    def axis_weights(n_in, n_out):
        pos = np.zeros(n_out) if n_out == 1 or n_in == 1 else np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis_weights(h, height)
    c0, c1, fc = axis_weights(w, width)
    rows = img[r0] * (1.0 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


@dataclass
class Spectrogram:
    pixels: np.ndarray  # (C, H, W) in [-1, 1]
    channel_ids: tuple = ("S1",)
    source_span: tuple = (0, 0)

    @property
    def shape(self):
        return self.pixels.shape


def to_spectrogram(grid, cfg, stats):
    """Magnitude grid -> (H, W) image in [-1, 1] (log, clamp, affine, resize)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty magnitude grid")
    db = np.clip(to_db(grid, cfg), stats.lo, stats.hi)
    scaled = 2.0 * (db - stats.lo) / (stats.hi - stats.lo) - 1.0
    # interpolation can drift an ulp outside the clamp range
    return np.clip(resize_bilinear(scaled, cfg.out_height, cfg.out_width), -1.0, 1.0)


def window_grids(window, cfg):
    return [stft_magnitude(ch, cfg) for ch in window.data]


def window_to_spectrogram(window, cfg, stats):
    """Each Stokes channel becomes one image channel."""
    pixels = np.stack([to_spectrogram(g, cfg, stats) for g in window_grids(window, cfg)])
    return Spectrogram(pixels, window.channel_ids, (window.start, window.end))


def sample_to_column(sample, window_len, cfg):
    """Fractional image column whose STFT frame is centred on ``sample``."""
    frames = cfg.n_frames(window_len)
    frame = (sample - cfg.seg_len / 2.0) / cfg.seg_hop
    frame = min(max(frame, 0.0), frames - 1.0)
    if frames == 1:
        return 0.0
    return frame * (cfg.out_width - 1) / (frames - 1)


def span_to_columns(onset, duration, window_len, cfg):
    """Integer column interval covering the frames that touch [onset, onset+duration)."""
    frames = cfg.n_frames(window_len)
    first = max(0, math.ceil((onset - cfg.seg_len + 1) / cfg.seg_hop))
    last = min(frames - 1, (onset + duration - 1) // cfg.seg_hop)
    scale = (cfg.out_width - 1) / max(frames - 1, 1)
    return int(math.floor(first * scale)), int(math.ceil(last * scale))


@dataclass
class SpectrogramSet:
    """Spectrograms of a whole series plus the norm stats used to build them."""

    items: list = field(default_factory=list)
    stats: NormStats = None

    def pixels(self):
        return np.stack([s.pixels for s in self.items])


def series_to_spectrograms(series, plan, cfg, stats=None):
    """Segment ``series`` and convert every window; fits ``stats`` when not given."""
    windows = segment(series, plan)
    if stats is None:
        stats = fit_norm_stats([g for w in windows for g in window_grids(w, cfg)], cfg)
    return SpectrogramSet([window_to_spectrogram(w, cfg, stats) for w in windows], stats)
