"""Command-line driver: synth, train, calibrate, detect, localize, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error.  Any config value can
be overridden with ``--key value`` (dotted ``--train.epochs 5`` or a
unique leaf name ``--epochs 5``).
"""

import argparse
import json
import logging
import os
import sys

from . import checkpoint, config, detector, dsp, localize, metrics, pipeline, synth
from .errors import DataError

log = logging.getLogger("sopanomaly")

USAGE_ERROR, DATA_ERROR = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _defaults_help():
    d = config.RunConfig().to_dict()
    lines = ["configuration keys (defaults):"]
    for key in config.flat_keys():
        section, _, leaf = key.partition(".")
        val = d[section][leaf] if leaf else d[section]
        lines.append(f"  --{key} {json.dumps(val)}")
    return "\n".join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="64-bit root seed (propagated to every stage)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sopanomaly", description=__doc__, epilog=_defaults_help(),
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="write synthetic train/calib/test CSVs and labels")

    s = sub.add_parser("train", parents=[common], help="train a model on a normal-only CSV")
    s.add_argument("train_csv")

    s = sub.add_parser("calibrate", parents=[common], help="threshold from held-out normal windows")
    s.add_argument("checkpoint")
    s.add_argument("normal_csv")

    s = sub.add_parser("detect", parents=[common], help="score a CSV and write the report")
    s.add_argument("checkpoint")
    s.add_argument("csv")
    s.add_argument("--threshold", required=True, help="threshold value or threshold.json path")
    s.add_argument("--features", help="also save discriminator features f(x) to this .npy path")

    s = sub.add_parser("localize", parents=[common], help="PPM overlays for flagged windows")
    s.add_argument("checkpoint")
    s.add_argument("csv")
    s.add_argument("report")

    s = sub.add_parser("evaluate", parents=[common], help="metrics from a report and labels")
    s.add_argument("report")
    s.add_argument("labels")
    return p


def _parse_overrides(extra):
    overrides, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or i + 1 >= len(extra):
            raise UsageError(f"unexpected argument {tok!r}; overrides take the form --key value")
        overrides[tok[2:]] = extra[i + 1]
        i += 2
    return overrides


def _resolve_config(args, overrides, base=None):
    try:
        cfg = config.load(args.config) if args.config else (base or config.RunConfig())
        if overrides:
            cfg = config.replace(cfg, overrides)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"configuration: {exc}") from None
    return cfg


def _out_dir(args, default="."):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _load_checkpoint(path, args, overrides):
    model, manifest = checkpoint.load(path)
    base = config.from_dict(manifest["run_config"]) if manifest.get("run_config") else None
    cfg = _resolve_config(args, overrides, base)
    if cfg.image_shape() != model.image_shape:
        raise DataError(f"configuration expects images {cfg.image_shape()}, checkpoint has {model.image_shape}")
    return model, cfg


def _read_series(path, cfg):
    return dsp.read_csv(path, cfg.sample_rate_hz)


def _progress(done, total):
    log.info("scored %d/%d windows", done, total)


def cmd_synth(args, overrides):
    cfg = _resolve_config(args, overrides)
    # synthetic files concatenate independent windows: score them one window at a time
    cfg = config.replace(cfg, {"window.stream_hop": cfg.window.window_len,
                               "synth.window_len": cfg.window.window_len,
                               "synth.sample_rate_hz": cfg.sample_rate_hz})
    out = _out_dir(args)
    ds = synth.generate(cfg.synth)
    paths = synth.write_dataset(ds, cfg.synth, out)
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")
    for name in ("train", "calib", "test", "labels"):
        print(paths[name])


def cmd_train(args, overrides):
    cfg = _resolve_config(args, overrides)
    series = _read_series(args.train_csv, cfg)
    print("epoch,d_loss,g_loss")

    def progress(epoch, d, g):
        print(f"{epoch},{d!r},{g!r}", flush=True)

    model, _ = pipeline.train_model(series, cfg, progress)
    path = os.path.join(_out_dir(args), "model.ckpt")
    checkpoint.save(path, model, cfg.to_dict())
    log.info("checkpoint written to %s", path)


def cmd_calibrate(args, overrides):
    model, cfg = _load_checkpoint(args.checkpoint, args, overrides)
    thr = pipeline.calibrate(model, _read_series(args.normal_csv, cfg), cfg)
    print("threshold,percentile,n")
    print(f"{thr.value!r},{thr.calibration_percentile},{thr.calibration_set_size}")
    if args.out:
        with open(os.path.join(_out_dir(args), "threshold.json"), "w") as fh:
            json.dump(thr.__dict__, fh, indent=2)


def _threshold(text):
    if os.path.exists(text):
        with open(text) as fh:
            return detector.Threshold(**json.load(fh))
    try:
        return detector.Threshold(float(text), float("nan"), 0)
    except ValueError:
        raise UsageError(f"--threshold must be a number or an existing file, got {text!r}") from None


def cmd_detect(args, overrides):
    model, cfg = _load_checkpoint(args.checkpoint, args, overrides)
    thr = _threshold(args.threshold)
    reports, specs = pipeline.detect(model, thr, _read_series(args.csv, cfg), cfg, _progress)
    if args.features:
        detector.export_features(model, specs, args.features)
    if args.out:
        with open(os.path.join(_out_dir(args), "report.csv"), "w", newline="") as fh:
            detector.write_reports(reports, fh)
    else:
        detector.write_reports(reports, sys.stdout)


def cmd_localize(args, overrides):
    model, cfg = _load_checkpoint(args.checkpoint, args, overrides)
    specs = pipeline.spectrograms(_read_series(args.csv, cfg), cfg, model.norm_stats, streaming=True)
    flagged = [r for r in detector.read_reports(args.report) if r.is_anomaly]
    for r in flagged:
        if r.window_index >= len(specs):
            raise DataError(f"report window {r.window_index} not present in {args.csv}")
    out = _out_dir(args)
    print("window_index,time_first,time_last,freq_first,freq_last,pixel_threshold")
    xs = [specs[r.window_index] for r in flagged]
    # reconstructions come from re-running the (deterministic) inversion
    for r, x, rep in zip(flagged, xs, detector.score_windows(model, xs, cfg.score) if xs else []):
        m = localize.localize(x, rep.reconstruction, cfg.mask_percentile)
        localize.write_ppm(os.path.join(out, f"overlay_{r.window_index}.ppm"), localize.render_overlay(x, m))
        te, fe = m.time_extent or ("", ""), m.freq_extent or ("", "")
        print(f"{r.window_index},{te[0]},{te[1]},{fe[0]},{fe[1]},{m.pixel_threshold!r}")


def cmd_evaluate(args, overrides):
    cfg = _resolve_config(args, overrides)
    reports = detector.read_reports(args.report)
    labels = pipeline.label_reports(reports, synth.read_labels(args.labels), cfg.window.window_len)
    summary, cm = metrics.summary(pipeline.outcomes(reports, labels))
    metrics.write_summary(summary, cm, sys.stdout)
    if args.out:
        with open(os.path.join(_out_dir(args), "metrics.csv"), "w") as fh:
            metrics.write_summary(summary, cm, fh)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "calibrate": cmd_calibrate,
            "detect": cmd_detect, "localize": cmd_localize, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args, _parse_overrides(extra))
    except UsageError as exc:
        print(f"sopanomaly: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DataError, OSError) as exc:
        print(f"sopanomaly: data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
