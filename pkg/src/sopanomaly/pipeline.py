"""End-to-end wiring of the modules: series -> spectrograms -> model -> reports."""

import logging
from dataclasses import dataclass

import numpy as np

from . import detector, dsp, gan, localize, metrics, synth

log = logging.getLogger(__name__)


def spectrograms(series, cfg, stats, streaming=False):
    """Spectrograms of ``series`` restricted to the configured channels."""
    series = series.select(cfg.channels)
    plan = cfg.window.streaming_plan() if streaming else cfg.window.training_plan()
    return dsp.series_to_spectrograms(series, plan, cfg.stft, stats).items


def fit_stats(series, cfg):
    series = series.select(cfg.channels)
    windows = dsp.segment(series, cfg.window.training_plan())
    return dsp.fit_norm_stats([g for w in windows for g in dsp.window_grids(w, cfg.stft)], cfg.stft)


def train_model(series, cfg, progress=None):
    """Fit norm stats, build and train a model on a normal-only series."""
    stats = fit_stats(series, cfg)
    specs = spectrograms(series, cfg, stats)
    model = gan.build_model(cfg.model.latent_dim, cfg.image_shape(), cfg.model.base_channels,
                            seed=cfg.seed, norm_stats=stats, feature_layer=cfg.model.feature_layer)
    model, history = gan.train(model, np.stack([s.pixels for s in specs]), cfg.train, progress)
    return model, history


def calibrate(model, series, cfg):
    specs = spectrograms(series, cfg, model.norm_stats)
    return detector.calibrate_threshold(model, specs, cfg.score, cfg.threshold_percentile)


def detect(model, threshold, series, cfg, progress=None):
    specs = spectrograms(series, cfg, model.norm_stats, streaming=True)
    return detector.detect(model, threshold, specs, cfg.score, progress), specs


def localize_reports(reports, specs, cfg):
    """Masks for flagged reports only, keyed by window index."""
    out = {}
    for r in reports:
        if r.is_anomaly:
            out[r.window_index] = localize.localize(specs[r.window_index], r.reconstruction,
                                                    cfg.mask_percentile)
    return out


def label_reports(reports, label_rows, window_len):
    """Ground truth per report: anomalous iff its span meets an injected burst."""
    bursts = [(i * window_len + onset, i * window_len + onset + dur)
              for i, lab, onset, dur in label_rows if lab]
    out = []
    for r in reports:
        s, e = r.source_span
        out.append(any(s < b1 and b0 < e for b0, b1 in bursts))
    return out


def outcomes(reports, labels):
    return [metrics.LabeledOutcome(bool(l), r.score, bool(r.is_anomaly)) for r, l in zip(reports, labels)]


@dataclass
class SyntheticRun:
    model: gan.GanModel
    history: list
    threshold: detector.Threshold
    calib_reports: list
    reports: list
    specs: list
    labels: list
    dataset: synth.SynthDataset
    masks: dict
    metrics: dict
    confusion: metrics.ConfusionMatrix


def run_synthetic(cfg, progress=None):
    """synth -> train -> calibrate -> detect -> localize -> evaluate, in memory.

    Test windows are scored on their own (hop = window length) because the
    synthetic test file is a concatenation of independent windows.
    """
    scfg = synth.SynthConfig(**{**cfg.synth.__dict__, "window_len": cfg.window.window_len,
                                "sample_rate_hz": cfg.sample_rate_hz})
    ds = synth.generate(scfg)
    train_series = synth.windows_to_series(ds.train, scfg)
    model, history = train_model(train_series, cfg, progress)

    calib_specs = spectrograms(synth.windows_to_series(ds.calib, scfg), cfg, model.norm_stats)
    calib_reports = detector.score_windows(model, calib_specs, cfg.score)
    threshold = detector.threshold_from_scores([r.score for r in calib_reports], cfg.threshold_percentile)
    detector.apply_threshold(calib_reports, threshold)

    test_specs = spectrograms(synth.windows_to_series(ds.test_windows(), scfg), cfg, model.norm_stats)
    reports = detector.detect(model, threshold, test_specs, cfg.score)
    labels = label_reports(reports, ds.labels(), cfg.window.window_len)
    summary, cm = metrics.summary(outcomes(reports, labels))
    masks = localize_reports(reports, test_specs, cfg)
    return SyntheticRun(model, history, threshold, calib_reports, reports, test_specs, labels, ds,
                        masks, summary, cm)
