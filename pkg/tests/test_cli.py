import csv
import json
import subprocess
import sys

import pytest

from softerr.cli import COMMANDS, SCHEMAS, ConfigError, emit_csv, format_value, main, read_config, resolve


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_predict_saturates_at_chance(tmp_path, capsys):
    assert main(["predict", "--model-math", "multiclass", "--nc", "10", "--rrmse", "1e9", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "predict.csv")
    assert rows[0] == ["rrmse", "accuracy"]
    assert float(rows[1][1]) == pytest.approx(0.1, abs=1e-6)


def test_predict_binary_value(tmp_path):
    assert main(["predict", "--model-math", "binary", "--rrmse", "1", "--out", str(tmp_path)]) == 0
    assert float(_rows(tmp_path / "predict.csv")[1][1]) == pytest.approx(0.92135, abs=1e-4)


def test_simulate_zero_ber(tmp_path, capsys):
    assert main(["simulate", "--ber", "0", "--trials", "300", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "simulate.csv")
    assert rows[0] == SCHEMAS["simulate"]
    rec = dict(zip(rows[0], rows[1]))
    assert float(rec["rrmse_mean"]) == 0.0 and int(rec["flips_total"]) == 0
    assert float(rec["accuracy"]) >= 0.95
    assert "rrmse=0" in capsys.readouterr().out


def test_unknown_flag_is_config_error(tmp_path, capsys):
    assert main(["simulate", "--bogus", "1", "--out", str(tmp_path)]) == 2
    assert _error(capsys)["exit"] == 2


def test_out_of_range_ber_is_config_error(tmp_path, capsys):
    assert main(["simulate", "--ber", "1.5", "--out", str(tmp_path)]) == 2
    msg = _error(capsys)
    assert msg["type"] == "ConfigError" and "ber" in msg["message"]


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("trials = 10\nfrobnicate = 3\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "frobnicate" in _error(capsys)["message"]
    with pytest.raises(ConfigError):
        read_config(cfg)


def test_config_key_not_used_by_command(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("k = 3\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_config_for_other_command(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("command = sweep\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntrials = 10\nber = 0.001\nseed = 4\n")
    resolved = resolve("simulate", read_config(cfg), {"trials": "20"})
    assert resolved["trials"] == 20 and resolved["ber"] == 0.001 and resolved["seed"] == 4
    assert resolved["target"] == "activations"  # default


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("SOFTERR_THREADS", "3")
    assert resolve("simulate", {}, {})["threads"] == 3
    monkeypatch.setenv("SOFTERR_THREADS", "zero")
    with pytest.raises(ConfigError):
        resolve("simulate", {}, {})


def test_ber_range_syntax():
    cfg = resolve("sweep", {"bers": "1e-4:1e-2:3"}, {})
    assert cfg["bers"] == pytest.approx([1e-4, 1e-3, 1e-2])
    assert resolve("sweep", {"bers": "0.1,0.2"}, {})["bers"] == [0.1, 0.2]


def test_missing_model_is_runtime_error(tmp_path, capsys):
    assert main(["simulate", "--model", str(tmp_path / "nope.sfm"), "--out", str(tmp_path)]) == 3
    assert _error(capsys)["exit"] == 3


def test_bad_fault_layer_is_config_error(tmp_path, capsys):
    assert main(["simulate", "--target", "weights", "--layers", "1", "--trials", "5", "--out", str(tmp_path)]) == 2
    assert _error(capsys)["type"] == "FaultSpecError"


def test_emit_csv_header_only_and_constant_columns(tmp_path):
    emit_csv(tmp_path / "a.csv", SCHEMAS["sweep"], [])
    assert (tmp_path / "a.csv").read_text(encoding="utf-8") == ",".join(SCHEMAS["sweep"]) + "\n"
    with pytest.raises(ValueError):
        emit_csv(tmp_path / "b.csv", ["x", "y"], [[1, 2], [3]])


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(1 / 3) == "0.333333333"
    assert format_value(True) == "1" and format_value(7) == "7"


def test_replay_is_byte_identical_across_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sweep", "--bers", "1e-3,1e-2", "--trials", "450", "--target", "weights", "--seed", "11"]
    assert main(args + ["--threads", "1", "--out", str(a)]) == 0
    # replay from the provenance file alone, with another worker count
    assert main(["sweep", "--config", str(a / "sweep.provenance"), "--threads", "2", "--out", str(b)]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    rows = _rows(a / "sweep.csv")
    assert len({len(r) for r in rows}) == 1 and len(rows) == 3
    prov = (a / "sweep.provenance").read_text(encoding="utf-8")
    assert "seed = 11" in prov and "# tool_version" in prov and "threads" not in prov


@pytest.mark.parametrize("command,extra", [
    ("propagate", ["--ber", "1e-3", "--inject-layer", "6", "--trials", "50"]),
    ("aggregate-validate", ["--bers", "1e-3", "--n-combos", "3", "--trials", "50"]),
    ("bound-sweep", ["--ber", "1e-3", "--trials", "50"]),
    ("bitwidth-compare", ["--ber", "1e-3", "--trials", "50"]),
    ("class-subset", ["--bers", "0,1e-3", "--trials", "50"]),
    ("fragile", ["--ber", "1e-2", "--k", "2", "--trials", "20", "--mode", "accelerated"]),
    ("diagnose", ["--ber", "1e-2", "--trials", "50"]),
])
def test_every_command_writes_schema(tmp_path, command, extra):
    assert main([command, "--images", "100", "--out", str(tmp_path)] + extra) == 0
    rows = _rows(tmp_path / f"{command}.csv")
    assert rows[0] == SCHEMAS[command] and len(rows) > 1
    assert len({len(r) for r in rows}) == 1
    assert (tmp_path / f"{command}.provenance").exists()


def test_every_command_has_schema():
    assert set(COMMANDS) == set(SCHEMAS)


def test_train_fixture_command(tmp_path):
    model = tmp_path / "tiny.sfm"
    assert main(["train-fixture", "--epochs", "1", "--images", "200", "--model", str(model),
                 "--out", str(tmp_path)]) == 0
    assert model.exists()
    assert _rows(tmp_path / "train-fixture.csv")[0] == SCHEMAS["train-fixture"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "softerr.cli", "predict", "--rrmse", "0.5",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "softerr.cli", "sweep", "--mode", "fast"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["exit"] == 2


def test_abbreviated_flags_rejected(tmp_path, capsys):
    assert main(["sweep", "--anchor", "3", "--out", str(tmp_path)]) == 2
