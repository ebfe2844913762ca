"""The whole chain in memory: synth, train, calibrate, detect, localize, evaluate.

Run: python3 demos/03_desk_scale_run.py [--quick]

The default configuration is the desk-scale acceptance setting (about ten
minutes on one core).  --quick shrinks everything to run in well under a
minute; its numbers are not meaningful.
"""

import sys
import time

from sopanomaly import config, pipeline

cfg = config.RunConfig(seed=0)
if "--quick" in sys.argv:
    cfg = config.replace(cfg, {"n_train": 64, "n_calib": 16, "n_test_normal": 8, "n_test_anomalous": 8,
                               "epochs": 3, "invert_steps": 20, "restarts": 1})

t0 = time.time()
run = pipeline.run_synthetic(cfg, progress=lambda e, d, g: print(f"epoch {e}: d {d:.3f} g {g:.3f}"))
print(f"finished in {time.time() - t0:.0f} s")

print("threshold (p%g of %d calibration scores): %.2f"
      % (run.threshold.calibration_percentile, run.threshold.calibration_set_size, run.threshold.value))
for k, v in run.metrics.items():
    print(f"{k:>9}: {v if v is None else round(v, 3)}")
print(run.confusion)

# first few flagged windows with their located time extent vs the truth
labels = run.dataset.labels()
for idx, mask in list(run.masks.items())[:5]:
    _, lab, onset, dur = labels[idx]
    truth = f"burst at samples {onset}-{onset + dur}" if lab else "normal"
    print(f"window {idx}: mask columns {mask.time_extent}, {truth}")
