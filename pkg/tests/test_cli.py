import csv
import json

import pytest

from lpae.cli import main, read_manifest
from lpae.datagen import read_header
from lpae.trainer import Metrics


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "d.txt"
    assert main(["gen", "--count", "80", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_gen_is_byte_identical(tmp_path, data_file):
    other = tmp_path / "again.txt"
    assert main(["gen", "--count", "80", "--seed", "1", "--out", str(other)]) == 0
    assert data_file.read_bytes() == other.read_bytes()
    manifest = read_manifest(str(data_file) + ".run-manifest")
    assert manifest["command"] == "gen" and manifest["seed"] == "1"


def test_gen_real_scale_header(tmp_path):
    path = tmp_path / "r.txt"
    assert main(["gen", "--count", "3", "--preset", "real-scale", "--out", str(path),
                 "--csv", str(tmp_path / "r.csv")]) == 0
    h = read_header(path)
    assert (h["d"], h["n"], h["m"]) == (64, 136, 57)
    assert (tmp_path / "r.csv").read_text().count("\n") == 4


@pytest.mark.parametrize("argv", [
    ["gen", "--count", "0"],
    ["gen", "--count", "x"],
    ["gen", "--bogus"],
    ["train"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_train_missing_data_exits_1(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing.txt"),
                 "--out", str(tmp_path / "t")]) == 1
    assert "error" in capsys.readouterr().err


def _config(tmp_path, **over):
    cfg = {"epochs": 3, "batch_size": 16, "learning_rate": 1e-3, **over}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_train_then_eval(tmp_path, data_file):
    out = tmp_path / "t"
    assert main(["train", "--data", str(data_file), "--config", str(_config(tmp_path)),
                 "--out", str(out)]) == 0
    man = read_manifest(out / "run-manifest")
    assert man["train.epochs"] == "3" and man["train.mu"] == "0.1"
    assert man["train.alpha"] == "1.5"
    with open(out / "epochs.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3
    ev = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(out / "model.npz"), "--data", str(data_file),
                 "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert set(metrics) == {f for f in Metrics.__dataclass_fields__}


def test_seed_override(tmp_path, data_file):
    cfg = _config(tmp_path)
    for seed in ("0", "5"):
        assert main(["train", "--data", str(data_file), "--config", str(cfg),
                     "--seed", seed, "--out", str(tmp_path / seed)]) == 0
        assert read_manifest(tmp_path / seed / "run-manifest")["train.seed"] == seed
    assert (tmp_path / "0" / "model.npz").read_bytes() != \
        (tmp_path / "5" / "model.npz").read_bytes()


BENCH = {"dataset": {"count": 60, "seed": 0}, "seeds": [0, 1],
         "train": {"epochs": 3, "batch_size": 16, "learning_rate": 1e-3},
         "methods": ["lpae", "lp"], "sweep": {"lambda_max": [10.0, 100.0]}}


def _strip_timing(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r.pop("time_ms"), r.pop("throughput_ms")
    return rows


def test_bench_rerun_identical_modulo_timing(tmp_path, capsys):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps(BENCH))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    for col in ("Feas.(%)", "Cost Gap(%)", "MSE", "Time(ms)"):
        assert col in out
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert _strip_timing(tmp_path / "a" / "metrics.csv") == \
        _strip_timing(tmp_path / "b" / "metrics.csv")
    assert main(["bench", "--config", str(cfg), "--seed", "1",
                 "--out", str(tmp_path / "c")]) == 0
    assert read_manifest(tmp_path / "c" / "run-manifest")["seeds"] == "[1]"


def test_bench_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"methods": ["nope"]}))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 1


def test_export_plots(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps(BENCH))
    assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    metrics = tmp_path / "a" / "metrics.csv"
    assert main(["export-plots", str(metrics), "--out", str(tmp_path / "p"),
                 "--columns", "cell,feasibility_pct"]) == 0
    with open(tmp_path / "p" / "lambda_feasibility.csv", newline="") as fh:
        curve = list(csv.reader(fh))
    assert curve[0] == ["lambda_max", "feasibility_pct"]
    assert [float(r[0]) for r in curve[1:]] == [10.0, 100.0]
    with open(metrics, newline="") as fh:
        expected = [[r["cell"], r["feasibility_pct"]] for r in csv.DictReader(fh)]
    with open(tmp_path / "p" / "selected.csv", newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["cell", "feasibility_pct"] and got[1:] == expected
    assert main(["export-plots", str(metrics), "--out", str(tmp_path / "q"),
                 "--columns", "nonsense"]) == 2


def test_export_plots_empty_metrics(tmp_path):
    metrics = tmp_path / "metrics.csv"
    metrics.write_text("")
    assert main(["export-plots", str(metrics), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "lambda_feasibility.csv").read_bytes() == b""
    assert (tmp_path / "p" / "selected.csv").read_bytes() == b""
