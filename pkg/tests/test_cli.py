import json
from pathlib import Path

import pytest
import yaml

from memkernel.cli import cmd_report, cmd_verify, config_hash, load_config, main


def write_config(tmp_path, doc):
    path = tmp_path / "config.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return path


def small_gaussian_config(tmp_path, outdir):
    return write_config(
        tmp_path,
        {
            "schema": "memkernel-experiment/1",
            "backend": "gaussian",
            "model": {"builtin": "fermion_chain", "params": {"n": 8}},
            "shots": [1000, 10000],
            "repetitions": 3,
            "seed": 11,
            "times": {"t_min": 1e-3, "t_max": 1e-1, "points": 12},
            "fit_degree": 4,
            "output": str(outdir),
        },
    )


def test_bad_configs_exit_2(tmp_path):
    missing = tmp_path / "nope.yaml"
    assert main(["run", "-c", str(missing)]) == 2
    bad = write_config(tmp_path, {"schema": "other", "backend": "gaussian"})
    assert main(["run", "-c", str(bad)]) == 2
    bad2 = write_config(tmp_path, {"schema": "memkernel-experiment/1", "backend": "warp"})
    assert main(["plan", "-c", str(bad2)]) == 2


def test_plan_run_report_gaussian(tmp_path, capsys):
    outdir = tmp_path / "run"
    cfg_path = small_gaussian_config(tmp_path, outdir)
    assert main(["plan", "-c", str(cfg_path), "-o", str(outdir)]) == 0
    plan = json.loads((outdir / "plan.json").read_text())
    assert plan["schema"] == "memkernel-plan/1"
    assert plan["config_sha"]
    assert len(plan["kernel_traces"]) == 4

    assert main(["run", "-c", str(cfg_path), "-o", str(outdir)]) == 0
    sweep = (outdir / "sweep.csv").read_text()
    assert sweep.startswith("# schema: memkernel-sweep/1")
    assert "config_sha" in sweep
    assert "1000,K0" in sweep or ",K0," in sweep
    report = json.loads((outdir / "report.json").read_text())
    assert report["schema"] == "memkernel-report/1"

    assert main(["report", "-o", str(outdir)]) == 0
    summary = (outdir / "summary.csv").read_text()
    assert "slope" in summary.splitlines()[2]


def test_run_outputs_are_bit_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cfg1 = small_gaussian_config(tmp_path, out1)
    assert main(["run", "-c", str(cfg1), "-o", str(out1)]) == 0
    assert main(["run", "-c", str(cfg1), "-o", str(out2)]) == 0
    for name in ("sweep.csv", "traces.csv", "report.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_plan_exact_backend(tmp_path):
    outdir = tmp_path / "spin"
    cfg = write_config(
        tmp_path,
        {
            "schema": "memkernel-experiment/1",
            "backend": "exact",
            "model": {"builtin": "spin_demo", "params": {}},
            "orders": [0, 1],
            "output": str(outdir),
        },
    )
    assert main(["plan", "-c", str(cfg), "-o", str(outdir)]) == 0
    plan = json.loads((outdir / "plan.json").read_text())
    assert plan["rounds"]
    assert any(s["target"] == ["lambda", 0] for s in plan["settings"])


def test_run_exact_backend_report(tmp_path):
    outdir = tmp_path / "spin"
    cfg = write_config(
        tmp_path,
        {
            "schema": "memkernel-experiment/1",
            "backend": "exact",
            "model": {"builtin": "spin_demo", "params": {}},
            "shots": [0],
            "times": {"t_min": 1e-3, "t_max": 4e-2, "points": 12},
            "fit_degree": 5,
            "orders": [0],
            "output": str(outdir),
        },
    )
    assert main(["run", "-c", str(cfg), "-o", str(outdir)]) == 0
    report = json.loads((outdir / "report.json").read_text())
    k00 = report["kernel_hat"]["0,0,0"]
    assert abs(complex(k00[0]) - 1.0) < 1e-2


def test_report_without_sweep_exits_2(tmp_path):
    assert cmd_report(tmp_path) == 2


def test_config_hash_stable():
    doc = {"schema": "memkernel-experiment/1", "backend": "gaussian", "x": [1, 2]}
    assert config_hash(doc) == config_hash(json.loads(json.dumps(doc)))


def test_cmd_verify_passes():
    assert cmd_verify(None) == 0
