"""CLI surface: exit codes, manifests, artifact layout, replotting."""

import csv
import json
import os

import numpy as np
import pytest

from flowgate.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERSION, main


FAST_CONFIG = {
    "epochs": 2,
    "n_train": 64,
    "n_test": 32,
    "batch_size": 32,
    "hidden": [8],
    "flow_depth": 1,
    "seed": 1,
}


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(FAST_CONFIG))
    return str(path)


def test_gen_data_mix1d(tmp_path):
    out = str(tmp_path / "run")
    assert main(["gen-data", "--dataset", "mix1d", "--seed", "7",
                 "--out", out, "--n", "50"]) == EXIT_OK
    assert os.path.exists(os.path.join(out, "mix1d.csv"))
    manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
    assert manifest["command"] == "gen-data"
    assert manifest["seed"] == 7


def test_gen_data_refuses_to_overwrite(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["gen-data", "--dataset", "mix1d", "--out", out, "--n", "10"]) == EXIT_OK
    assert main(["gen-data", "--dataset", "mix1d", "--out", out, "--n", "10"]) == EXIT_IO
    assert "manifest" in capsys.readouterr().err


def test_gen_data_spirals_override_split(tmp_path):
    out = str(tmp_path / "sp")
    assert main(["gen-data", "--dataset", "spirals", "--seed", "3",
                 "--out", out, "--n-curves", "20"]) == EXIT_OK
    with open(os.path.join(out, "spirals.csv")) as fh:
        rows = list(csv.DictReader(fh))
    dirs = {r["seq"]: r["direction"] for r in rows}
    cw = sum(v == "clockwise" for v in dirs.values())
    assert cw == 10 and len(dirs) == 20


def test_gen_data_odd_curves_is_usage_error(tmp_path):
    assert main(["gen-data", "--dataset", "spirals", "--out",
                 str(tmp_path / "x"), "--n-curves", "7"]) == EXIT_USAGE


def test_train_density_writes_artifacts(tmp_path, fast_config):
    out = str(tmp_path / "train")
    assert main(["train", "--task", "density", "--config", fast_config,
                 "--out", out]) == EXIT_OK
    for name in ("manifest.json", "metrics.csv", "checkpoint.json", "checkpoint.bin"):
        assert os.path.exists(os.path.join(out, name)), name
    with open(os.path.join(out, "metrics.csv")) as fh:
        header = next(csv.reader(fh))
    assert header == ["epoch", "train_loss", "test_nll", "test_err", "mean_nfe", "lr"]


def test_train_bad_config_is_schema_error(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"lr": 1e-3, "not_a_field": 5}))
    assert main(["train", "--task", "density", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_train_missing_config_is_io_error(tmp_path):
    assert main(["train", "--task", "density", "--config",
                 str(tmp_path / "missing.json"), "--out",
                 str(tmp_path / "o")]) == EXIT_IO


def test_train_gated_emits_gates_csv(tmp_path, fast_config):
    out = str(tmp_path / "gated")
    assert main(["train", "--task", "infocnf", "--config", fast_config,
                 "--out", out, "--tolerance-mode", "gated"]) == EXIT_OK
    assert os.path.exists(os.path.join(out, "gates.csv"))
    with open(os.path.join(out, "gates.csv")) as fh:
        header = next(csv.reader(fh))
    assert header == ["epoch", "layer", "mu", "sigma", "tol", "nfe"]


def test_train_records_conditioning_param_counts(tmp_path, fast_config):
    out_i = str(tmp_path / "i")
    out_c = str(tmp_path / "c")
    assert main(["train", "--task", "infocnf", "--config", fast_config,
                 "--out", out_i]) == EXIT_OK
    assert main(["train", "--task", "ccnf", "--config", fast_config,
                 "--out", out_c]) == EXIT_OK
    ci = json.loads(open(os.path.join(out_i, "manifest.json")).read())
    cc = json.loads(open(os.path.join(out_c, "manifest.json")).read())
    assert cc["conditioning_param_count"] > ci["conditioning_param_count"]


def test_eval_fixed_and_learned_modes(tmp_path, fast_config, capsys):
    out = str(tmp_path / "run")
    assert main(["train", "--task", "infocnf", "--config", fast_config,
                 "--out", out, "--tolerance-mode", "gated"]) == EXIT_OK
    ckpt = os.path.join(out, "checkpoint")
    assert main(["eval", "--checkpoint", ckpt, "--mode", "fixed:1e-5"]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", "--checkpoint", ckpt, "--mode", "learned",
                 "--batch-size", "8", "--batch-size", "16",
                 "--batch-size", "32"]) == EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l and "," in l]
    assert len(lines) == 1 + 3  # header plus one row per batch size


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none")]) == EXIT_IO


def test_eval_version_mismatch(tmp_path, fast_config):
    out = str(tmp_path / "run")
    assert main(["train", "--task", "density", "--config", fast_config,
                 "--out", out]) == EXIT_OK
    ckpt = os.path.join(out, "checkpoint")
    manifest = json.loads(open(ckpt + ".json").read())
    manifest["format_version"] = 99
    open(ckpt + ".json", "w").write(json.dumps(manifest))
    assert main(["eval", "--checkpoint", ckpt]) == EXIT_VERSION


def test_eval_bad_mode_is_usage_error(tmp_path, fast_config):
    out = str(tmp_path / "run")
    main(["train", "--task", "density", "--config", fast_config, "--out", out])
    assert main(["eval", "--checkpoint", os.path.join(out, "checkpoint"),
                 "--mode", "banana"]) == EXIT_USAGE


def test_report_builds_plots_from_csv_only(tmp_path, fast_config):
    out = str(tmp_path / "run")
    assert main(["train", "--task", "infocnf", "--config", fast_config,
                 "--out", out, "--tolerance-mode", "gated"]) == EXIT_OK
    # deleting the checkpoint must not affect replotting
    os.remove(os.path.join(out, "checkpoint.bin"))
    assert main(["report", "--run", out, "--plots", "nll_curve", "nfe_curve",
                 "tol_hist"]) == EXIT_OK
    for name in ("nll_curve.svg", "nfe_curve.svg", "tol_hist.svg"):
        assert os.path.exists(os.path.join(out, name))


def test_report_missing_csv_is_io_error(tmp_path):
    os.makedirs(tmp_path / "empty")
    assert main(["report", "--run", str(tmp_path / "empty"),
                 "--plots", "nll_curve"]) == EXIT_IO


def test_reproducibility_identical_metric_csvs(tmp_path, fast_config):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["train", "--task", "density", "--config", fast_config,
                 "--out", out1]) == EXIT_OK
    assert main(["train", "--task", "density", "--config", fast_config,
                 "--out", out2]) == EXIT_OK
    m1 = open(os.path.join(out1, "metrics.csv")).read()
    m2 = open(os.path.join(out2, "metrics.csv")).read()
    assert m1 == m2


def test_out_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWGATE_OUT", str(tmp_path))
    assert main(["gen-data", "--dataset", "mix1d", "--out", "rel", "--n", "10"]) == EXIT_OK
    assert os.path.exists(tmp_path / "rel" / "mix1d.csv")


def test_oracles_filter(capsys):
    assert main(["oracles", "--filter", "gate.returns*"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "gate.returns_formula" in out
    assert "solver.order_rk4" not in out


def test_oracles_report_json(tmp_path, capsys):
    report = str(tmp_path / "report.json")
    assert main(["oracles", "--filter", "solver.error_norm*",
                 "--report", report]) == EXIT_OK
    data = json.loads(open(report).read())
    assert data and all("passed" in entry for entry in data)
