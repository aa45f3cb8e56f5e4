"""Command-line driver: plan, run, verify and report on experiment configs.

Config files are YAML documents (schema memkernel-experiment/1) selecting a
backend lane, a model (builtin generator or model file), the shot sweep, time
grid and fit degree.  All emitted CSV/JSON artifacts carry the schema version
and the config hash, and a fixed (config, seed) pair reproduces byte-identical
files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import model as model_mod
from .fitter import uniform_grid
from .pipeline import (
    DEFAULT_TIMES,
    EnsembleSurrogate,
    build_ensemble_lane,
    build_fermion_lane,
    build_spin_settings,
    ensemble_estimate,
    ensemble_moment_rows,
    fermion_exact_traces,
    loglog_slope,
    run_ensemble_sweep,
    run_fermion_sweep,
    run_spin_experiment,
    sweep_errors,
)
from .planner import plan_to_dict, schedule

EXPERIMENT_SCHEMA = "memkernel-experiment/1"


class ConfigError(Exception):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict) or cfg.get("schema") != EXPERIMENT_SCHEMA:
        raise ConfigError(f"config must declare schema: {EXPERIMENT_SCHEMA}")
    if cfg.get("backend") not in ("exact", "gaussian", "ensemble"):
        raise ConfigError("backend must be one of exact | gaussian | ensemble")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def config_times(cfg: dict) -> np.ndarray:
    t = cfg.get("times", {})
    return uniform_grid(
        float(t.get("t_min", 1e-3)), float(t.get("t_max", 1e-1)), int(t.get("points", 10))
    )


def _model_params(cfg: dict) -> dict:
    return cfg.get("model", {}).get("params", {})


def _write_csv(path: Path, schema: str, sha: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# schema: {schema}\n# config_sha: {sha}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def _write_json(path: Path, schema: str, sha: str, payload: dict) -> None:
    doc = {"schema": schema, "config_sha": sha, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# plan


def cmd_plan(cfg: dict, outdir: Path) -> int:
    sha = config_hash(cfg)
    backend = cfg["backend"]
    outdir.mkdir(parents=True, exist_ok=True)
    if backend == "exact":
        mdl = _load_model(cfg)
        settings = build_spin_settings(mdl, tuple(cfg.get("orders", (0, 1))))
        sched = schedule(settings)
        doc = plan_to_dict(settings, sched)
        doc["config_sha"] = sha
        with open(outdir / "plan.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        n_settings = len(settings)
        print(f"settings: {n_settings}")
        print(f"rounds: {sched.n_rounds()}")
        return 0
    params = _model_params(cfg)
    if backend == "gaussian":
        lane = _gaussian_lane(params, params.get("n", 20))
        doc = {
            "lambda_traces": [
                {"label": lab, "in": str(pi), "out": str(po), "scale": sc}
                for lab, pi, po, sc in lane.lam_traces
            ],
            "kernel_traces": [
                {"sid": sid, "in": str(pi), "out": str(po)} for sid, pi, po in lane.kernel_traces
            ],
            "classes": {k: v for k, v in lane.classes.items()},
        }
    else:
        lane = _ensemble_lane(params)
        doc = {
            "lambda_traces": [
                {"label": lab, "in": str(pi), "out": str(po), "scale": sc}
                for lab, pi, po, sc in lane.lam_traces
            ],
            "moment_traces": [
                {"label": lab, "in": str(pi), "out": str(po)} for lab, pi, po in lane.moment_traces
            ],
        }
    _write_json(outdir / "plan.json", "memkernel-plan/1", sha, doc)
    n = sum(len(v) for v in doc.values() if isinstance(v, list))
    print(f"settings: {n}")
    print("rounds: 1")
    return 0


def _gaussian_lane(params: dict, n):
    return build_fermion_lane(
        int(n),
        params.get("J", 0.2),
        params.get("h", 0.8),
        params.get("v", 1.0),
        params.get("gamma", 0.9),
    )


def _ensemble_lane(params: dict):
    return build_ensemble_lane(
        int(params.get("n", 10)),
        params.get("h", 0.8),
        params.get("J", 0.2),
        params.get("sigma", ((0.6, 0.3), (0.3, 0.7))),
    )


def _load_model(cfg: dict) -> model_mod.NoiseModel:
    spec = cfg.get("model", {})
    if "path" in spec:
        return model_mod.load_model(spec["path"])
    if spec.get("builtin") == "spin_demo":
        from .pauli import PauliString

        p = _model_params(cfg)
        return model_mod.NoiseModel(
            n_sites=2,
            hamiltonian=[
                model_mod.HamiltonianTerm(0, PauliString.parse("Z0"), p.get("h0", 0.3)),
                model_mod.HamiltonianTerm(1, PauliString.parse("Z1"), p.get("h1", 0.45)),
            ],
            couplings=[
                model_mod.CouplingTerm(0, PauliString.parse("X0")),
                model_mod.CouplingTerm(1, PauliString.parse("X1")),
            ],
            kernel=model_mod.KernelSpec(
                modes=[
                    model_mod.KernelMode(
                        p.get("epsilon", 0.6),
                        p.get("gamma", 0.8),
                        {0: p.get("v0", 1.0), 1: p.get("v1", 0.55)},
                    )
                ]
            ),
        )
    raise ConfigError("model must give a path or a known builtin")


# ---------------------------------------------------------------------------
# run


def cmd_run(cfg: dict, outdir: Path) -> int:
    sha = config_hash(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    backend = cfg["backend"]
    if backend == "exact":
        return _run_exact(cfg, outdir, sha)
    if backend == "gaussian":
        return _run_gaussian(cfg, outdir, sha)
    return _run_ensemble(cfg, outdir, sha)


def _run_exact(cfg: dict, outdir: Path, sha: str) -> int:
    mdl = _load_model(cfg)
    times = config_times(cfg)
    shots = cfg.get("shots", [0])
    shots = shots[0] if isinstance(shots, list) else int(shots)
    report = run_spin_experiment(
        mdl,
        times=times,
        shots=int(shots),
        seed=int(cfg.get("seed", 7)),
        degree=int(cfg.get("fit_degree", 5)),
        orders=tuple(cfg.get("orders", (0, 1))),
    )
    _write_json(outdir / "report.json", "memkernel-report/1", sha, report.to_dict())
    print(f"report: {outdir / 'report.json'}")
    return 0


def _gaussian_truth_rows(lane, sweep, sha, outdir, n):
    errors = sweep_errors(sweep, lane.truth())
    rows = []
    for shots, by_param in sorted(errors.items()):
        for param, (mean_err, std_err) in sorted(by_param.items()):
            reps = len(sweep[shots])
            rows.append(["gaussian", n, shots, param, f"{mean_err:.10g}", f"{std_err:.10g}", reps])
    return rows


def _run_gaussian(cfg: dict, outdir: Path, sha: str) -> int:
    params = _model_params(cfg)
    n_values = cfg.get("n_values") or [params.get("n", 20)]
    shots_list = [int(s) for s in cfg.get("shots", [1000, 10000, 100000, 1000000])]
    reps = int(cfg.get("repetitions", 24))
    seed = int(cfg.get("seed", 2024))
    degree = int(cfg.get("fit_degree", 3))
    times = config_times(cfg)

    sweep_rows = []
    trace_rows = []
    estimate_rows = []
    report_payload = {}
    for n in n_values:
        lane = _gaussian_lane(params, n)
        lane.times = times
        exact = fermion_exact_traces(lane)
        for sid, vals in sorted(exact.items()):
            for t, v in zip(lane.times, vals):
                trace_rows.append([n, sid, f"{t:.10g}", f"{v:.12g}", 0])
        sweep = run_fermion_sweep(lane, shots_list, reps, seed=seed, degree=degree)
        sweep_rows.extend(_gaussian_truth_rows(lane, sweep, sha, outdir, n))
        best = sweep[max(shots_list)]
        report_payload[f"n{n}"] = {
            "truth": {k: float(v) for k, v in lane.truth().items()},
            "estimates_at_max_shots": {
                k: float(np.mean([r[k] for r in best])) for k in best[0]
            },
        }
        _append_estimate_rows(estimate_rows, "gaussian", n, lane.truth(), sweep)
    _write_csv(
        outdir / "traces.csv", "memkernel-traces/1", sha,
        ["n", "setting", "t", "mean", "shots"], trace_rows,
    )
    _write_csv(
        outdir / "sweep.csv", "memkernel-sweep/1", sha,
        ["backend", "n", "shots", "parameter", "mean_abs_err", "std_abs_err", "reps"],
        sweep_rows,
    )
    _write_csv(
        outdir / "estimates.csv", "memkernel-estimates/1", sha,
        ["backend", "n", "shots", "parameter", "truth", "estimate", "abs_error"],
        estimate_rows,
    )
    _write_json(outdir / "report.json", "memkernel-report/1", sha, report_payload)
    print(f"sweep: {outdir / 'sweep.csv'}")
    return 0


def _append_estimate_rows(rows, backend, n, truth, sweep):
    """Per-parameter estimate summary (mean over repetitions at each shot count)."""
    for shots, runs in sorted(sweep.items()):
        for param, true_val in sorted(truth.items()):
            vals = [r[param] for r in runs if not np.isnan(r[param])]
            if not vals:
                continue
            est = float(np.mean(vals))
            rows.append(
                [backend, n, shots, param, f"{float(true_val):.10g}",
                 f"{est:.10g}", f"{abs(est - float(true_val)):.10g}"]
            )


def _run_ensemble(cfg: dict, outdir: Path, sha: str) -> int:
    params = _model_params(cfg)
    lane = _ensemble_lane(params)
    lane.times = config_times(cfg)
    shots_list = [int(s) for s in cfg.get("shots", [1000, 10000, 100000, 1000000])]
    reps = int(cfg.get("repetitions", 12))
    sweep = run_ensemble_sweep(
        lane, shots_list, reps, seed=int(cfg.get("seed", 5150)),
        degree=int(cfg.get("fit_degree", 4)),
    )
    errors = sweep_errors(sweep, lane.truth())
    rows = []
    for shots, by_param in sorted(errors.items()):
        for param, (mean_err, std_err) in sorted(by_param.items()):
            rows.append(
                ["ensemble", lane.n, shots, param, f"{mean_err:.10g}", f"{std_err:.10g}", len(sweep[shots])]
            )
    _write_csv(
        outdir / "sweep.csv", "memkernel-sweep/1", sha,
        ["backend", "n", "shots", "parameter", "mean_abs_err", "std_abs_err", "reps"],
        rows,
    )
    estimate_rows: list = []
    _append_estimate_rows(estimate_rows, "ensemble", lane.n, lane.truth(), sweep)
    _write_csv(
        outdir / "estimates.csv", "memkernel-estimates/1", sha,
        ["backend", "n", "shots", "parameter", "truth", "estimate", "abs_error"],
        estimate_rows,
    )
    best = sweep[max(shots_list)]
    payload = {
        "truth": {k: float(v) for k, v in lane.truth().items()},
        "estimates_at_max_shots": {k: float(np.mean([r[k] for r in best])) for k in best[0]},
    }
    _write_json(outdir / "report.json", "memkernel-report/1", sha, payload)
    print(f"sweep: {outdir / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(cfg: dict | None) -> int:
    failures = 0

    def check(name, fn, tol):
        nonlocal failures
        try:
            worst = fn()
            ok = worst <= tol
        except Exception as exc:  # pragma: no cover - defensive
            worst, ok = float("nan"), False
            print(f"[FAIL] {name}: {exc}")
            failures += 1
            return
        tag = "PASS" if ok else "FAIL"
        print(f"[{tag}] {name}: max deviation {worst:.3e} (tol {tol:.1e})")
        failures += 0 if ok else 1

    check("pauli 2-site algebra vs dense matrices", _verify_pauli, 1e-12)
    check("gaussian vs exact master equation (n=2+2)", _verify_gaussian_vs_exact, 1e-6)
    check("offset m=3 vs finite differences", _verify_offsets_fd, 1e-4)
    check("sandwich-coefficient reconstruction", _verify_ainverse, 1e-10)
    check("nested integrals vs quadrature", _verify_integrals, 1e-10)
    return 1 if failures else 0


def _verify_pauli() -> float:
    import itertools

    from .pauli import Region, multiply, region_paulis

    worst = 0.0
    paulis = region_paulis(Region.of(0, 1))
    for a, b in itertools.product(paulis[:8], paulis):
        got = multiply(a, b).dense(2)
        want = a.dense(2) @ b.dense(2)
        worst = max(worst, float(np.abs(got - want).max()))
    return worst


def _verify_gaussian_vs_exact() -> float:
    from .sim_exact import ExactSimulator
    from .sim_gaussian import build_majorana_model, observable_trace
    from .majorana import jw_majorana

    n = 2
    mm = build_majorana_model(0.2, 0.8, 1.0, 0.9, n)
    sim = ExactSimulator.fermion_chain(n, 0.2, 0.8, 1.0, 0.9)
    times = np.linspace(0.0, 0.1, 5)
    worst = 0.0
    for a, b, c, d in [(0, 1, 0, 1), (0, 2, 0, 2), (1, 3, 1, 3)]:
        fast = observable_trace(mm, a, b, c, d, times)
        sys_block = (
            np.eye(2**n, dtype=complex)
            + 1j * jw_majorana(c).dense(n) @ jw_majorana(d).dense(n)
        ) / 2**n
        env = np.zeros((2**n, 2**n), dtype=complex)
        env[0, 0] = 1.0
        rho0 = np.kron(sys_block, env)
        obs = 1j * jw_majorana(a).dense(2 * n) @ jw_majorana(b).dense(2 * n)
        dense = [np.trace(obs @ sim.propagate(rho0, t)).real for t in times]
        worst = max(worst, float(np.abs(fast - np.array(dense)).max()))
    return worst


def _verify_offsets_fd() -> float:
    from .model import CouplingTerm, HamiltonianTerm, KernelMode, KernelSpec, NoiseModel
    from .offsets import KernelEstimates, offset_value
    from .pauli import PauliString
    from .sim_exact import ExactSimulator, finite_difference_derivatives

    P = PauliString.parse
    mdl = NoiseModel(
        n_sites=2,
        hamiltonian=[HamiltonianTerm(0, P("Z0"), 0.3), HamiltonianTerm(1, P("Z1"), 0.45)],
        couplings=[CouplingTerm(0, P("X0")), CouplingTerm(1, P("X1"))],
        kernel=KernelSpec(modes=[KernelMode(0.6, 0.8, {0: 1.0, 1: 0.55})]),
    )
    sim = ExactSimulator.from_model(mdl, levels_per_mode=5)
    spec = mdl.kernel
    table = {(a, b, 0): spec.derivative(a, b, 0) for a in (0, 1) for b in (0, 1)}
    from .learner import transfer_observation
    from .planner import WSpec

    couplings = {0: P("X0"), 1: P("X1")}
    terms = [(P("Z0"), 0.3), (P("Z1"), 0.45)]
    p_out, p_in = P("X0"), P("X0")
    trace = lambda t: sim.channel_value(p_out, p_in, t)
    derivs, _, _ = finite_difference_derivatives(trace, 3, step=0.02, order=5)
    off = offset_value(3, None, p_out, p_in, terms, [(p, c) for c, p in couplings.items()],
                       KernelEstimates(table))
    lin = transfer_observation(
        p_out, p_in, WSpec.identity(),
        3, couplings, {(a, b): spec.derivative(a, b, 1) for a in (0, 1) for b in (0, 1)},
    )
    denom = max(1.0, abs(derivs[2]))
    return abs(derivs[2] - off - lin.real) / denom


def _verify_ainverse() -> float:
    from .learner import extract_xi
    from .pauli import PauliString, Region, multiply_all, region_paulis
    from .planner import companion_observable

    rng = np.random.default_rng(12)
    region = Region.of(0, 1)
    paulis = region_paulis(region, include_identity=False)
    worst = 0.0
    for _ in range(5):
        p_c = paulis[rng.integers(len(paulis))]
        p_d = paulis[rng.integers(len(paulis))]
        xi = complex(rng.normal(), rng.normal())

        def sandwich(beta, alpha):
            v1 = multiply_all([beta, p_c, alpha, p_d])
            v2 = multiply_all([beta, p_d, alpha, p_c])
            val = xi * (v1.phase() if v1.is_identity() else 0.0)
            val += np.conj(xi) * (v2.phase() if v2.is_identity() else 0.0)
            return val.real

        obs = {
            alpha: sandwich(companion_observable(p_c, alpha, p_d), alpha)
            for alpha in region_paulis(region)
        }
        got = extract_xi(obs, region, p_c, p_d)
        expect = xi if p_c != p_d else complex(xi.real + xi.real, 0)
        if p_c == p_d:
            expect = 2 * xi.real
        worst = max(worst, abs(got - expect))
    return worst


def _verify_integrals() -> float:
    from .offsets import nested_integral

    worst = 0.0
    rng = np.random.default_rng(3)
    nodes, weights = np.polynomial.legendre.leggauss(6)

    def gauss_nested(d, tval):
        def rec(k, upper):
            if k == len(d):
                return 1.0
            x = 0.5 * upper * (nodes + 1.0)
            w = 0.5 * upper * weights
            return float(np.sum(w * x ** d[k] * np.array([rec(k + 1, xi) for xi in x])))

        return rec(0, tval)

    for _ in range(6):
        n = int(rng.integers(1, 5))
        d = [int(x) for x in rng.integers(0, 3, size=n)]
        for t in (0.1, 1.0):
            worst = max(worst, abs(nested_integral(d, t) - gauss_nested(d, t)))
    return worst


# ---------------------------------------------------------------------------
# report


def cmd_report(outdir: Path) -> int:
    sweep_path = outdir / "sweep.csv"
    if not sweep_path.exists():
        print(f"no sweep.csv under {outdir}", file=sys.stderr)
        return 2
    sha = None
    rows = []
    with open(sweep_path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                if "config_sha" in line:
                    sha = line.split(":", 1)[1].strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(dict(zip(header, line.split(","))))
    by_key: dict[tuple, list] = {}
    for r in rows:
        by_key.setdefault((r["backend"], r["n"], r["parameter"]), []).append(
            (int(r["shots"]), float(r["mean_abs_err"]))
        )
    out_rows = []
    print(f"{'backend':<10}{'n':>4}  {'parameter':<12}{'slope':>8}{'sigma_hat':>12}")
    for (backend, n, param), pts in sorted(by_key.items()):
        pts.sort()
        shots = [p[0] for p in pts]
        errs = [p[1] for p in pts]
        slope = loglog_slope(shots, errs)
        smax, emax = pts[-1]
        sigma_hat = emax * np.sqrt(smax)
        out_rows.append([backend, n, param, f"{slope:.6f}", f"{sigma_hat:.6g}"])
        print(f"{backend:<10}{n:>4}  {param:<12}{slope:>8.3f}{sigma_hat:>12.4g}")
    _write_csv(
        outdir / "summary.csv", "memkernel-summary/1", sha or "unknown",
        ["backend", "n", "parameter", "slope", "sigma_hat"], out_rows,
    )
    print(f"summary: {outdir / 'summary.csv'}")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="memkernel", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name in ("plan", "run"):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True)
        p.add_argument("-o", "--output", default=None)
    pv = sub.add_parser("verify")
    pv.add_argument("-c", "--config", default=None)
    pr = sub.add_parser("report")
    pr.add_argument("-o", "--output", required=True)
    args = parser.parse_args(argv)

    try:
        if args.cmd == "verify":
            cfg = load_config(args.config) if args.config else None
            return cmd_verify(cfg)
        if args.cmd == "report":
            return cmd_report(Path(args.output))
        cfg = load_config(args.config)
        outdir = Path(args.output or cfg.get("output", "runs/out"))
        if args.cmd == "plan":
            return cmd_plan(cfg, outdir)
        return cmd_run(cfg, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
