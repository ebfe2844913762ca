"""Walk through the signal front end on one synthetic window.

Run: python3 demos/01_spectrograms.py
"""

import numpy as np

from sopanomaly import dsp, localize, synth

cfg = synth.SynthConfig(seed=7, channels=("S1",))
stft = dsp.StftConfig()

# one normal window and one with a chirp burst
normal = synth.gen_normal(cfg, 1)[0]
anom = synth.gen_anomalous(cfg, 1)[0]
print("burst onset", anom.onset, "duration", anom.duration, "samples")

# raw STFT magnitude: 65 one-sided bins x 61 frames for a 2000-sample window
grid = dsp.stft_magnitude(anom.data[0], stft)
print("STFT grid", grid.shape)

# dB + percentile normalisation fitted on normal data only, then resize to 64x64
stats = dsp.fit_norm_stats([dsp.stft_magnitude(normal[0], stft)], stft)
print("norm stats (dB)", round(stats.lo, 1), round(stats.hi, 1))

img_n = dsp.to_spectrogram(dsp.stft_magnitude(normal[0], stft), stft, stats)
img_a = dsp.to_spectrogram(grid, stft, stats)

# the burst lives in the upper bins, where the drift has almost nothing
upper = slice(8, None)
print("mean upper-band pixel: normal %.3f  anomalous %.3f" % (img_n[upper].mean(), img_a[upper].mean()))

cols = dsp.span_to_columns(anom.onset, anom.duration, cfg.window_len, stft)
print("ground-truth image columns", cols)

# overlays can be written without a model: here the "reconstruction" is the clean window
clean = dsp.to_spectrogram(dsp.stft_magnitude(anom.clean[0], stft), stft, stats)
mask = localize.localize(img_a[None], clean[None])
print("mask time extent", mask.time_extent, "freq extent", mask.freq_extent)
localize.write_ppm("demo_overlay.ppm", localize.render_overlay(img_a[None], mask))
print("wrote demo_overlay.ppm")
