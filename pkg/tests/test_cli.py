import numpy as np
import pytest

from micromil.bag_io import read_manifest
from micromil.cli import run
from micromil.model import load_model

SMALL = ["--clusters", "3", "--hidden", "8", "--epochs", "2", "--seed", "4"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--out-dir", str(out), "--bags", "16", "--images-per-bag", "10",
                "--dim", "6", "--seed", "5"]) == 0
    return out


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_synth_requires_seed(tmp_path, capsys):
    assert run(["synth", "--out-dir", str(tmp_path / "x")]) == 1
    assert "--seed" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_synth_output(data):
    m = read_manifest(data / "manifest.csv")
    assert len(m) == 16 and sorted(set(m.labels)) == [0, 1]
    assert m.load_bags(expected_d=6)[0].S == 10


def test_unknown_flag_is_usage_error_and_writes_nothing(data, tmp_path):
    out = tmp_path / "m.bin"
    assert run(["train", "--manifest", str(data / "manifest.csv"), "--out", str(out), "--bogus", "1"]) == 1
    assert not out.exists()


def test_invalid_config_value_is_usage_error(data, tmp_path):
    out = tmp_path / "m.bin"
    assert run(["train", "--manifest", str(data / "manifest.csv"), "--out", str(out), "--tau", "0"]) == 1
    assert run(["train", "--manifest", str(data / "manifest.csv"), "--out", str(out),
                "--edge-method", "knn"]) == 1
    assert not out.exists()


def test_missing_manifest_is_data_error(tmp_path):
    assert run(["train", "--manifest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m")]) == 2


def test_corrupt_model_is_data_error(data, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a model")
    assert run(["eval", "--model", str(bad), "--manifest", str(data / "manifest.csv")]) == 2


def test_config_file_and_flag_precedence(data, tmp_path, caplog):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nepochs = 3\nhidden=8\nclusters=3  # trailing\nseed=4\n")
    hist = tmp_path / "h.csv"
    with caplog.at_level("INFO", logger="micromil"):
        code = run(["train", "--manifest", str(data / "manifest.csv"), "--out", str(tmp_path / "m.bin"),
                    "--config", str(cfg), "--epochs", "1", "--history", str(hist)])
    assert code == 0
    assert len(hist.read_text().splitlines()) == 2
    resolved = next(r.getMessage() for r in caplog.records if r.getMessage().startswith("config "))
    assert "epochs=1" in resolved and "hidden=8" in resolved and "lr=0.001" in resolved
    params = load_model(tmp_path / "m.bin")
    assert params.config.epochs == 1 and params.config.hidden == 8


def test_unknown_config_key(data, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochz=3\n")
    assert run(["train", "--manifest", str(data / "manifest.csv"), "--out", str(tmp_path / "m"),
                "--config", str(cfg)]) == 1


def test_train_eval_round_trip(data, tmp_path, capsys):
    model = tmp_path / "m.bin"
    assert run(["train", "--manifest", str(data / "manifest.csv"), "--out", str(model), *SMALL]) == 0
    preds = tmp_path / "p.csv"
    assert run(["eval", "--model", str(model), "--manifest", str(data / "manifest.csv"),
                "--out", str(preds), "--metrics-out", str(tmp_path / "met.csv")]) == 0
    assert "acc=" in capsys.readouterr().out
    lines = preds.read_text().splitlines()
    assert len(lines) == 17
    again = tmp_path / "p2.csv"
    run(["eval", "--model", str(model), "--manifest", str(data / "manifest.csv"), "--out", str(again),
         "--workers", "4"])
    assert again.read_text() == preds.read_text()


def test_baseline_train(data, tmp_path):
    model = tmp_path / "b.bin"
    assert run(["train", "--baseline", "--manifest", str(data / "manifest.csv"), "--out", str(model),
                *SMALL]) == 0
    assert load_model(model).kind == "meanpool"


def test_split_modes(data, tmp_path):
    assert run(["split", "--manifest", str(data / "manifest.csv"), "--out-dir", str(tmp_path),
                "--holdout", "0.25", "--seed", "0"]) == 0
    tr, te = read_manifest(tmp_path / "train.csv"), read_manifest(tmp_path / "test.csv")
    assert len(tr) + len(te) == 16 and len(te) == 4
    assert not {e.bag_id for e in tr} & {e.bag_id for e in te}
    tr.load_bags()  # relative paths resolve from the new location
    assert run(["split", "--manifest", str(data / "manifest.csv"), "--out-dir", str(tmp_path),
                "--quantile", "0.25"]) == 0
    assert len(read_manifest(tmp_path / "high.csv")) == len(read_manifest(tmp_path / "low.csv")) == 4


def test_analyze_prints_ratios_and_heatmaps(data, tmp_path, capsys):
    assert run(["analyze", "--manifest", str(data / "manifest.csv"), "--heatmap-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "bag_id,label,S,redundancy_ratio" and len(out) == 18
    assert out[-1].startswith("# mean redundancy ratio")
    heat = np.loadtxt(tmp_path / "bag_0000.csv", delimiter=",")
    assert heat.shape == (10, 10)


def test_ablate_grid_order(data, tmp_path):
    out = tmp_path / "abl.csv"
    assert run(["ablate", "--manifest", str(data / "manifest.csv"), "--edge-method", "none,cosine",
                "--rie-select", "mean,gumbel", "--out", str(out), *SMALL]) == 0
    rows = [line.split(",")[:3] for line in out.read_text().splitlines()[1:]]
    assert rows == [["none", "dce", "mean"], ["none", "dce", "gumbel"],
                    ["cosine", "dce", "mean"], ["cosine", "dce", "gumbel"]]


def test_ablate_rejects_bad_grid_token(data, tmp_path):
    out = tmp_path / "abl.csv"
    assert run(["ablate", "--manifest", str(data / "manifest.csv"), "--edge-method", "cosine,knn",
                "--out", str(out)]) == 1
    assert not out.exists()


def test_gradcheck_command(capsys):
    assert run(["gradcheck"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert run(["gradcheck", "--eps", "0.5"]) == 2


def test_ablate_row_matches_single_train_eval(data, tmp_path):
    assert run(["split", "--manifest", str(data / "manifest.csv"), "--out-dir", str(tmp_path),
                "--holdout", "0.25", "--seed", "4"]) == 0
    table = tmp_path / "abl.csv"
    assert run(["ablate", "--manifest", str(tmp_path / "train.csv"), "--test-manifest", str(tmp_path / "test.csv"),
                "--edge-method", "reverse", "--out", str(table), *SMALL]) == 0
    assert run(["train", "--manifest", str(tmp_path / "train.csv"), "--out", str(tmp_path / "m.bin"),
                "--edge-method", "reverse", *SMALL]) == 0
    assert run(["eval", "--model", str(tmp_path / "m.bin"), "--manifest", str(tmp_path / "test.csv"),
                "--metrics-out", str(tmp_path / "met.csv")]) == 0
    row = table.read_text().splitlines()[1].split(",")
    assert row[:3] == ["reverse", "dce", "gumbel"]
    assert ",".join(row[3:]) == (tmp_path / "met.csv").read_text().splitlines()[1]


def test_ablate_internal_holdout_uses_training_seed(data, tmp_path):
    out = tmp_path / "abl.csv"
    assert run(["ablate", "--manifest", str(data / "manifest.csv"), "--out", str(out), *SMALL]) == 0
    again = tmp_path / "abl2.csv"
    assert run(["ablate", "--manifest", str(data / "manifest.csv"), "--out", str(again), *SMALL]) == 0
    assert out.read_text() == again.read_text()
