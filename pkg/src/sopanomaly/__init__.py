"""Unsupervised anomaly detection and localization in SOP spectrograms with a GAN."""

from . import checkpoint, config, detector, dsp, gan, localize, metrics, nncore, pipeline, synth
from .config import RunConfig

__version__ = "0.1.0"

__all__ = ["checkpoint", "config", "detector", "dsp", "gan", "localize", "metrics", "nncore",
           "pipeline", "synth", "RunConfig"]
