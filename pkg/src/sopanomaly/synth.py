"""Seeded synthetic SOP data: slow polarization drift plus injected bursts.

Normal windows are sums of a few low-frequency sinusoids with white noise.
Anomalous windows add one transient disturbance (chirp, broadband burst or
square-wave flap) at a random onset; the ground-truth span is returned
separately so the detector never sees it.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .dsp import StokesSeries, write_csv

BURST_KINDS = ("chirp", "broadband", "square")


@dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 256
    n_calib: int = 64
    n_test_normal: int = 64
    n_test_anomalous: int = 64
    window_len: int = 2000
    sample_rate_hz: float = 100.0
    channels: tuple = ("S1", "S2", "S3")
    n_tones: int = 3
    normal_band_hz: tuple = (0.1, 2.0)
    amplitude_range: tuple = (0.2, 1.0)
    noise_sigma: float = 0.05
    burst_kind: str = "chirp"
    burst_amplitude: float = 1.0
    burst_band_hz: tuple = (5.0, 40.0)
    duration_range: tuple = (200, 600)
    onset_range: tuple = None

    def __post_init__(self):
        if isinstance(self.channels, str):
            self.channels = self.channels.split(",")
        self.channels = tuple(c.strip().upper() for c in self.channels)
        for name in ("normal_band_hz", "amplitude_range", "burst_band_hz", "duration_range"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.onset_range is not None:
            self.onset_range = tuple(self.onset_range)
        counts = (self.n_train, self.n_calib, self.n_test_normal, self.n_test_anomalous)
        if min(counts) < 0:
            raise ValueError("window counts must be non-negative")
        if self.burst_kind not in BURST_KINDS:
            raise ValueError(f"burst_kind must be one of {BURST_KINDS}, got {self.burst_kind!r}")
        lo, hi = self.duration_range
        if not 1 <= lo <= hi < self.window_len:
            raise ValueError("burst durations must satisfy 1 <= min <= max < window_len")


@dataclass
class AnomalousWindow:
    data: np.ndarray   # (C, window_len), background + burst
    clean: np.ndarray  # the same background without the burst
    onset: int
    duration: int
    kind: str


def normal_window(t, freqs, amps, phases, noise):
    """Closed form of one normal channel: sum of tones plus a noise vector."""
    t = np.asarray(t, dtype=np.float64)
    sig = np.zeros_like(t)
    for f, a, p in zip(freqs, amps, phases):
        sig += a * np.sin(2.0 * np.pi * f * t + p)
    return sig + noise


def _background(cfg, gen):
    t = np.arange(cfg.window_len) / cfg.sample_rate_hz
    rows = []
    for _ in cfg.channels:
        freqs = gen.uniform(*cfg.normal_band_hz, size=cfg.n_tones)
        amps = gen.uniform(*cfg.amplitude_range, size=cfg.n_tones)
        phases = gen.uniform(0.0, 2.0 * np.pi, size=cfg.n_tones)
        noise = gen.normal(0.0, cfg.noise_sigma, size=cfg.window_len) if cfg.noise_sigma > 0 else 0.0
        rows.append(normal_window(t, freqs, amps, phases, noise))
    return np.stack(rows)


def gen_normal(cfg, n, split="normal"):
    """``n`` normal windows, each of shape (C, window_len)."""
    return [_background(cfg, rng_mod.stream(cfg.seed, "synth", split, i)) for i in range(n)]


def burst(kind, duration, amplitude, band_hz, sample_rate_hz, gen):
    """One disturbance of ``duration`` samples (single channel)."""
    t = np.arange(duration) / sample_rate_hz
    f0, f1 = band_hz
    if kind == "chirp":
        length = duration / sample_rate_hz
        phase = 2.0 * np.pi * (f0 * t + (f1 - f0) * t * t / (2.0 * length))
        return amplitude * np.sin(phase + gen.uniform(0.0, 2.0 * np.pi))
    if kind == "broadband":
        return amplitude * gen.standard_normal(duration)
    if kind == "square":
        f = gen.uniform(f0, f1)
        return amplitude * np.sign(np.sin(2.0 * np.pi * f * t + gen.uniform(0.0, 2.0 * np.pi)))
    raise ValueError(f"unknown burst kind {kind!r}")


def gen_anomalous(cfg, n, split="anomalous"):
    """``n`` windows with one injected burst each, plus their ground truth."""
    out = []
    for i in range(n):
        clean = _background(cfg, rng_mod.stream(cfg.seed, "synth", split, i))
        gen = rng_mod.stream(cfg.seed, "synth", split, "burst", i)
        duration = int(gen.integers(cfg.duration_range[0], cfg.duration_range[1] + 1))
        lo, hi = cfg.onset_range or (0, cfg.window_len - duration)
        hi = min(hi, cfg.window_len - duration)
        onset = int(gen.integers(lo, hi + 1))
        data = clean.copy()
        for c in range(data.shape[0]):
            data[c, onset:onset + duration] += burst(cfg.burst_kind, duration, cfg.burst_amplitude,
                                                     cfg.burst_band_hz, cfg.sample_rate_hz, gen)
        out.append(AnomalousWindow(data, clean, onset, duration, cfg.burst_kind))
    return out


def windows_to_series(windows, cfg, t0=0.0):
    data = np.concatenate(windows, axis=1) if windows else np.zeros((len(cfg.channels), 0))
    t = t0 + np.arange(data.shape[1]) / cfg.sample_rate_hz
    return StokesSeries(cfg.sample_rate_hz, data, cfg.channels, t=t)


@dataclass
class SynthDataset:
    train: list
    calib: list
    test_normal: list
    test_anomalous: list
    # test order: shuffled interleaving of normal (None) and anomalous entries
    test_order: list

    def test_windows(self):
        return [w for w, _ in self.test_order]

    def labels(self):
        """(window_index, label, onset, duration) rows; onset is window-relative."""
        rows = []
        for i, (_, a) in enumerate(self.test_order):
            rows.append((i, 1, a.onset, a.duration) if a is not None else (i, 0, 0, 0))
        return rows


def generate(cfg):
    normals = gen_normal(cfg, cfg.n_test_normal, split="test_normal")
    anomalies = gen_anomalous(cfg, cfg.n_test_anomalous)
    order = [(w, None) for w in normals] + [(a.data, a) for a in anomalies]
    perm = rng_mod.stream(cfg.seed, "synth", "test_order").permutation(len(order))
    return SynthDataset(
        train=gen_normal(cfg, cfg.n_train, split="train"),
        calib=gen_normal(cfg, cfg.n_calib, split="calib"),
        test_normal=normals,
        test_anomalous=anomalies,
        test_order=[order[k] for k in perm],
    )


def write_dataset(ds, cfg, out_dir):
    """Write ``train.csv``, ``calib.csv``, ``test.csv`` and ``labels.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, windows in (("train", ds.train), ("calib", ds.calib), ("test", ds.test_windows())):
        paths[name] = os.path.join(out_dir, f"{name}.csv")
        write_csv(windows_to_series(windows, cfg), paths[name])
    paths["labels"] = os.path.join(out_dir, "labels.csv")
    with open(paths["labels"], "w", newline="") as fh:
        fh.write("window_index,label,onset,duration\n")
        for row in ds.labels():
            fh.write(",".join(str(v) for v in row) + "\n")
    return paths


def read_labels(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return [tuple(int(v) for v in r) for r in rows]
