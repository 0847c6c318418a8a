"""End-to-end checks of the command line front end, run in process."""

import csv
import json

import numpy as np
import pytest

from covgof.cli import main
from covgof.pkmodel import load_dataset


def run(capsys, argv):
    rc = main(argv)
    captured = capsys.readouterr()
    return rc, captured.out.splitlines(), captured.err


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_writes_stamped_files_deterministically(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    rc1, out1, _ = run(capsys, [
        "simulate", "--scenario", "sparse", "--seed", "11", "--outdir", str(a),
    ])
    rc2, out2, _ = run(capsys, [
        "simulate", "--scenario", "sparse", "--seed", "11", "--outdir", str(b),
    ])
    assert rc1 == 0 and rc2 == 0
    csv_a, json_a = out1
    csv_b, json_b = out2
    assert open(csv_a).read() == open(csv_b).read()
    meta = read_json(json_a)
    assert meta["master_seed"] == 11
    assert meta["config_sha256"] == read_json(json_b)["config_sha256"]
    assert len(meta["config_sha256"]) == 64
    ds = load_dataset(csv_a[: -len(".csv")])
    assert ds.n == 20
    assert ds.scenario.name == "sparse"


def test_fit_loads_a_saved_dataset_and_emits_the_curve(tmp_path, capsys):
    rc, out, _ = run(capsys, [
        "simulate", "--scenario", "sparse", "--seed", "4", "--outdir", str(tmp_path),
    ])
    assert rc == 0
    base = out[0][: -len(".csv")]
    rc, out, _ = run(capsys, [
        "fit", "--estimator", "parametric", "--data", base,
        "--outdir", str(tmp_path),
    ])
    assert rc == 0
    curve, report = out
    rows = read_csv(curve)
    assert rows[0] == ["age_years", "cl_star"]
    assert len(rows) == 1 + 81
    cl = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.isfinite(cl)) and np.all(cl > 0)
    rep = read_json(report)
    assert rep["estimator"] == "parametric"
    assert len(rep["tau_hat"]) == 6
    assert rep["gamma_hat"] is None and rep["lam"] is None


def test_fit_nonparametric_with_fixed_lambda(tmp_path, capsys):
    rc, out, _ = run(capsys, [
        "fit", "--estimator", "nonparametric", "--scenario", "sparse",
        "--seed", "4", "--lambda", "0.01", "--outdir", str(tmp_path),
    ])
    assert rc == 0
    rep = read_json(out[1])
    assert rep["lam"] == 0.01
    assert rep["tau_hat"] is None
    assert len(rep["gamma_hat"]) == 23  # n + 3 mixed coefficients
    assert rep["stage_objectives"]["nonlinear"] <= rep["stage_objectives"]["direct"] + 1e-9


def test_cv_respects_config_file_and_flag_overrides(tmp_path, capsys):
    cfg = tmp_path / "cv.json"
    cfg.write_text(json.dumps({
        "scenario": "sparse", "seed": 3,
        "grid": [1e-3, 1e-1], "folds": 3,
    }))
    rc, out, _ = run(capsys, [
        "cv", "--config", str(cfg), "--seed", "5", "--outdir", str(tmp_path),
    ])
    assert rc == 0
    curve, report = out
    rows = read_csv(curve)
    assert rows[0] == ["lambda", "mean_error", "se"]
    assert [float(r[0]) for r in rows[1:]] == [1e-3, 1e-1]
    rep = read_json(report)
    assert rep["selected_lambda"] in (1e-3, 1e-1)
    assert rep["n_folds"] == 3
    assert rep["master_seed"] == 5  # the flag wins over the config value


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"scenario": "sparse", "bogus": 1}))
    rc, _, err = run(capsys, ["cv", "--config", str(cfg)])
    assert rc == 2
    assert "unknown config keys" in err and "bogus" in err


def test_malformed_config_file(tmp_path, capsys):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{not json")
    rc, _, err = run(capsys, ["simulate", "--config", str(cfg)])
    assert rc == 2 and err.startswith("error:")

    cfg.write_text(json.dumps([1, 2]))
    rc, _, err = run(capsys, ["simulate", "--config", str(cfg)])
    assert rc == 2
    assert "JSON object" in err


def test_outdir_falls_back_to_environment(tmp_path, capsys, monkeypatch):
    outdir = tmp_path / "from_env"
    monkeypatch.setenv("COVGOF_OUTDIR", str(outdir))
    rc, out, _ = run(capsys, ["simulate", "--scenario", "sparse", "--seed", "0"])
    assert rc == 0
    assert all(p.startswith(str(outdir)) for p in out)
    assert (outdir / "dataset_sparse_seed0.csv").exists()


def test_gof_test_command_writes_a_full_report(tmp_path, capsys):
    rc, out, _ = run(capsys, [
        "test", "--scenario", "sparse", "--seed", "9", "--family",
        "saturable_exponential", "--statistic", "T1", "--lambda", "0.01",
        "-M", "9", "--outdir", str(tmp_path),
    ])
    assert rc == 0
    rep = read_json(out[0])
    assert rep["kind"] == "T1"
    assert rep["M"] == 9
    assert isinstance(rep["reject"], bool)
    assert len(rep["mc_sample"]) + rep["mc_failures"] == 9
    assert rep["reject"] == (rep["observed"] > rep["critical_value"])
    assert 0.0 < rep["p_value"] <= 1.0
    assert rep["master_seed"] == 9


def test_power_command_appends_on_resume(tmp_path, capsys):
    common = [
        "power", "--scenarios", "sparse", "--families", "saturable_exponential",
        "--statistics", "T1", "--lambda", "0.01", "-M", "5", "--seed", "21",
    ]
    first = tmp_path / "first"
    rc, out, _ = run(capsys, common + ["--n-datasets", "2", "--outdir", str(first)])
    assert rc == 0
    jsonl = first / "power_sparse_saturable_exponential.jsonl"
    lines = jsonl.read_text().strip().splitlines()
    assert len(lines) == 1 + 2
    assert "resume_sha256" in json.loads(lines[0])

    rc, out, _ = run(capsys, common + ["--n-datasets", "3", "--outdir", str(first)])
    assert rc == 0
    lines = jsonl.read_text().strip().splitlines()
    assert len(lines) == 1 + 3
    assert [json.loads(ln)["dataset"] for ln in lines[1:]] == [0, 1, 2]

    fresh = tmp_path / "fresh"
    rc, _, _ = run(capsys, common + ["--n-datasets", "3", "--outdir", str(fresh)])
    assert rc == 0
    resumed = read_csv(first / "power_table.csv")
    scratch = read_csv(fresh / "power_table.csv")
    assert resumed == scratch


def test_power_refuses_to_resume_a_different_run(tmp_path, capsys):
    common = [
        "power", "--scenarios", "sparse", "--families", "saturable_exponential",
        "--statistics", "T1", "--lambda", "0.01", "-M", "5", "--seed", "21",
        "--n-datasets", "2", "--outdir", str(tmp_path),
    ]
    rc, _, _ = run(capsys, common)
    assert rc == 0
    rc, _, err = run(capsys, common + ["--alpha", "0.1"])
    assert rc == 1
    assert "different configuration" in err

    rc, _, _ = run(capsys, common + ["--alpha", "0.1", "--no-resume"])
    assert rc == 0


def test_bench_command_reports_accuracy_and_runtime(tmp_path, capsys):
    rc, out, _ = run(capsys, [
        "bench", "--scenarios", "sparse", "--variants", "staged_linear_only",
        "--n-datasets", "2", "--lambda", "0.01", "--seed", "2",
        "--outdir", str(tmp_path),
    ])
    assert rc == 0
    rows = read_csv(out[0])
    assert rows[0] == ["algorithm", "seed", "runtime_s", "mse", "noise_variance"]
    assert len(rows) == 1 + 2
    summary = read_json(tmp_path / "bench_sparse_summary.json")
    frac = summary["success_fraction"]["staged_linear_only"]
    assert 0.0 <= frac <= 1.0
    assert summary["median_runtime_s"]["staged_linear_only"] > 0.0


def test_flag_validation_exit_codes(capsys):
    cases = [
        ["simulate", "--scenario", "dense"],
        ["fit", "--estimator", "splines", "--scenario", "sparse"],
        ["fit", "--estimator", "nonparametric", "--scenario", "sparse",
         "--lambda", "-1"],
        ["fit", "--estimator", "nonparametric", "--scenario", "sparse",
         "--lambda", "medium"],
        ["test", "--scenario", "sparse", "--statistic", "T9"],
        ["test", "--scenario", "sparse", "--family", "quadratic"],
        ["cv", "--estimator", "parametric", "--scenario", "sparse"],
        ["power", "--scenarios", "sparse", "--statistics", ""],
    ]
    for argv in cases:
        rc, _, err = run(capsys, argv)
        assert rc == 2, argv
        assert err.startswith("error:"), argv


def test_missing_subcommand_exits_with_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_missing_dataset_file_is_reported(tmp_path, capsys):
    rc, _, err = run(capsys, [
        "fit", "--estimator", "parametric", "--data", str(tmp_path / "nope"),
    ])
    assert rc == 1
    assert "cannot load dataset" in err
