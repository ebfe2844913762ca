import filecmp
import json
import os

import numpy as np
import pytest

from sopanomaly import checkpoint, cli, config, gan, localize
from sopanomaly.errors import CheckpointError

TINY = ["--window.window_len", "256", "--n_train", "8", "--n_calib", "4", "--n_test_normal", "2",
        "--n_test_anomalous", "2", "--duration_range", "[40, 120]", "--epochs", "1", "--batch_size", "4",
        "--invert_steps", "3", "--restarts", "2", "--base_channels", "2", "--latent_dim", "4"]


def model():
    return gan.build_model(4, (2, 8, 8), 2, seed=5)


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip_bit_identical(tmp_path):
    m = model()
    m.bn_stats["g.bn1"].running_mean[:] = np.arange(4)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, m, config.RunConfig().to_dict(), {"note": 1})
    back, manifest = checkpoint.load(path)
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    for k in m.bn_stats:
        assert back.bn_stats[k].running_mean.tobytes() == m.bn_stats[k].running_mean.tobytes()
        assert back.bn_stats[k].running_var.tobytes() == m.bn_stats[k].running_var.tobytes()
    assert manifest["extra"] == {"note": 1}
    assert config.from_dict(manifest["run_config"]) == config.RunConfig()
    # saving the loaded model reproduces the file byte for byte
    checkpoint.save(tmp_path / "again.ckpt", back, manifest["run_config"], manifest["extra"])
    assert filecmp.cmp(path, tmp_path / "again.ckpt", shallow=False)


@pytest.mark.parametrize("cut", [4, 30, -8])
def test_truncated_checkpoint(tmp_path, cut):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model())
    raw = path.read_bytes()
    path.write_bytes(raw[:cut] if cut > 0 else raw[:cut])
    with pytest.raises(CheckpointError):
        checkpoint.load(path)


def rewrite_manifest(path, edit):
    raw = path.read_bytes()
    mlen = int.from_bytes(raw[12:20], "little")
    manifest = json.loads(raw[20:20 + mlen])
    edit(manifest)
    blob = json.dumps(manifest).encode()
    path.write_bytes(raw[:12] + len(blob).to_bytes(8, "little") + blob + raw[20 + mlen:])


def test_shape_mismatch_checkpoint(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model())
    rewrite_manifest(path, lambda m: m["architecture"].update(latent_dim=5))
    with pytest.raises(CheckpointError, match="shape"):
        checkpoint.load(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model())
    raw = bytearray(path.read_bytes())
    path.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.load(path)
    raw[8] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load(path)


# ---------------------------------------------------------------- config


def test_config_overrides_and_json_round_trip(tmp_path):
    cfg = config.replace(config.RunConfig(), {"epochs": "3", "score.lam": "0.5", "channels": "S1"})
    assert cfg.train.epochs == 3 and cfg.score.lam == 0.5 and cfg.channels == ("S1",)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert config.load(path) == cfg
    with pytest.raises(KeyError):
        config.replace(cfg, {"window_len": "10"})  # ambiguous leaf
    with pytest.raises(ValueError):
        config.RunConfig(channels=("S4",))


def test_seed_propagates():
    cfg = config.RunConfig().with_seed(42)
    assert cfg.seed == cfg.train.seed == cfg.score.seed == cfg.synth.seed == 42


# ---------------------------------------------------------------- CLI


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors(capsys):
    assert run(["frobnicate"], capsys)[0] == 1
    assert run(["train"], capsys)[0] == 1
    assert run(["synth", "--no_such_key", "1"], capsys)[0] == 1
    assert run(["synth", "stray"], capsys)[0] == 1


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,s1\n0,1\n1,oops\n")
    code, _, err = run(["train", bad, "--out", tmp_path], capsys)
    assert code == 2 and "line 3" in err
    short = tmp_path / "short.csv"
    short.write_text("t,s1,s2,s3\n0,1,1,1\n1,2,2,2\n")
    assert run(["train", short, "--out", tmp_path], capsys)[0] == 2
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"xx")
    assert run(["detect", junk, short, "--threshold", "1"], capsys)[0] == 2


def test_help_lists_defaults(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "--train.epochs 30" in out and "--score.lam 0.9" in out


def test_synth_files_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["synth", "--seed", 9, "--out", d] + TINY, capsys)[0] == 0
    for name in ("train.csv", "calib.csv", "test.csv", "labels.csv", "config.json"):
        assert filecmp.cmp(a / name, b / name, shallow=False)
    rows = (a / "labels.csv").read_text().splitlines()
    assert rows[0] == "window_index,label,onset,duration"
    assert sum(r.split(",")[1] == "1" for r in rows[1:]) == 2


@pytest.mark.parametrize("channels,n_ch", [("S1", 1), ("S1,S2,S3", 3)])
def test_full_cli_chain(tmp_path, capsys, channels, n_ch):
    out = tmp_path
    base = ["--seed", 3, "--out", out]
    assert run(["synth"] + base + TINY + ["--channels", channels], capsys)[0] == 0
    cfg = ["--config", out / "config.json"]

    code, text, _ = run(["train", out / "train.csv"] + base + cfg, capsys)
    assert code == 0 and text.splitlines()[0] == "epoch,d_loss,g_loss" and len(text.splitlines()) == 2
    m, manifest = checkpoint.load(out / "model.ckpt")
    assert m.image_shape == (n_ch, 64, 64)
    assert tuple(manifest["run_config"]["channels"]) == tuple(channels.split(","))

    code, text, _ = run(["calibrate", out / "model.ckpt", out / "calib.csv", "--out", out], capsys)
    assert code == 0
    thr = json.loads((out / "threshold.json").read_text())
    assert float(text.splitlines()[1].split(",")[0]) == thr["value"]

    # calibration set scored against its own p99 threshold: at most ceil(0.01 * 4) = 1 flag
    code, text, _ = run(["detect", out / "model.ckpt", out / "calib.csv", "--threshold",
                         out / "threshold.json"], capsys)
    assert code == 0 and sum(r.endswith(",1") for r in text.splitlines()[1:]) <= 1

    code, _, _ = run(["detect", out / "model.ckpt", out / "test.csv", "--threshold", "-1",
                      "--out", out, "--features", out / "f.npy"], capsys)
    assert code == 0
    assert np.load(out / "f.npy").shape[0] == 4

    code, text, _ = run(["localize", out / "model.ckpt", out / "test.csv", out / "report.csv",
                         "--out", out], capsys)
    assert code == 0 and len(text.splitlines()) == 5  # threshold -1 flags every window
    assert localize.read_ppm(out / "overlay_0.ppm").shape == (64, 64, 3)

    code, text, _ = run(["evaluate", out / "report.csv", out / "labels.csv", "--out", out] + cfg, capsys)
    assert code == 0 and text.splitlines()[0] == "metric,value"
    assert "recall,100.0" in text  # everything flagged
    assert os.path.exists(out / "metrics.csv")


def test_evaluate_perfect_predictions(tmp_path, capsys):
    (tmp_path / "labels.csv").write_text("window_index,label,onset,duration\n0,0,0,0\n1,1,10,5\n")
    (tmp_path / "report.csv").write_text(
        "window_index,start_sample,end_sample,l_r,l_d,score,is_anomaly\n0,0,100,1,1,1,0\n1,100,200,5,5,5,1\n")
    code, text, _ = run(["evaluate", tmp_path / "report.csv", tmp_path / "labels.csv",
                         "--window.window_len", "100"], capsys)
    assert code == 0
    for name in ("accuracy", "precision", "recall", "f1", "auc"):
        assert f"{name},100.0" in text
