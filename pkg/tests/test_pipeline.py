import numpy as np
import pytest

from memkernel.fitter import uniform_grid
from memkernel.model import (
    CouplingTerm,
    HamiltonianTerm,
    KernelMode,
    KernelSpec,
    NoiseModel,
)
from memkernel.pauli import PauliString
from memkernel.pipeline import (
    EnsembleSurrogate,
    build_ensemble_lane,
    build_fermion_lane,
    build_spin_settings,
    ensemble_estimate,
    ensemble_moment_rows,
    fermion_estimate,
    fermion_exact_traces,
    fermion_transfer_rows,
    loglog_slope,
    run_spin_experiment,
    sample_ensemble_lane,
    sweep_errors,
    tfim_ensemble_model,
)
from memkernel.sampler import TimeTrace, sample_trace
from memkernel.sim_exact import EnsembleEvaluator

P = PauliString.parse


def lossy_model():
    return NoiseModel(
        n_sites=2,
        hamiltonian=[HamiltonianTerm(0, P("Z0"), 0.3), HamiltonianTerm(1, P("Z1"), 0.45)],
        couplings=[CouplingTerm(0, P("X0")), CouplingTerm(1, P("X1"))],
        kernel=KernelSpec(modes=[KernelMode(0.6, 0.8, {0: 1.0, 1: 0.55})]),
    )


# ------------------------------------------------------------- spin lane

def test_spin_experiment_noise_free_recovers_table():
    model = lossy_model()
    spec = model.kernel
    report = run_spin_experiment(
        model, times=uniform_grid(1e-3, 0.04, 14), shots=0, degree=5, levels_per_mode=5
    )
    for i, t in enumerate(model.hamiltonian):
        assert report.lambda_hat[i][0] == pytest.approx(t.coeff, abs=5e-5)
    for (a, b, m), (v, _) in report.kernel_hat.items():
        assert v == pytest.approx(spec.derivative(a, b, m), abs=1e-2), (a, b, m)
    # the dissipative one-sided structure comes through: real odd diagonal
    assert report.kernel_hat[(0, 0, 1)][0].real == pytest.approx(-0.4, abs=5e-3)
    assert report.kernel_hat[(0, 0, 1)][0].imag == pytest.approx(0.6, abs=5e-3)


def test_spin_settings_count_bound():
    model = lossy_model()
    settings = build_spin_settings(model, orders=(0, 1))
    kernel_settings = [s for s in settings if s.target[0] != "lambda"]
    by_target = {}
    for s in kernel_settings:
        by_target.setdefault(s.target, []).append(s)
    for target, group in by_target.items():
        region_size = len(group[0].region)
        assert len(group) <= 2 * 3**region_size


def test_spin_experiment_smooth_kernel():
    # gamma = 0: parity holds, symmetrized table matches the analytic one
    model = NoiseModel(
        n_sites=2,
        hamiltonian=[HamiltonianTerm(0, P("Z0"), 0.25)],
        couplings=[CouplingTerm(0, P("X0")), CouplingTerm(1, P("Y1"))],
        kernel=KernelSpec(modes=[KernelMode(0.9, 0.0, {0: 0.8, 1: 0.5})]),
    )
    report = run_spin_experiment(
        model, times=uniform_grid(1e-3, 0.04, 14), shots=0, degree=5, levels_per_mode=6
    )
    spec = model.kernel
    for (a, b, m), (v, _) in report.kernel_hat.items():
        assert v == pytest.approx(spec.derivative(a, b, m), abs=5e-3), (a, b, m)


# ------------------------------------------------------------- fermion lane

@pytest.fixture(scope="module")
def lane10():
    return build_fermion_lane(10)


def test_fermion_lane_truth_values(lane10):
    truth = lane10.truth()
    assert truth["K0"] == pytest.approx(1.0)
    assert truth["K1"] == pytest.approx(-0.45)
    assert truth["K0_bulk"] == pytest.approx(2.0)
    assert truth["K0_offdiag"] == pytest.approx(-1.0)


def test_fermion_estimate_noise_free(lane10):
    lane10.times = uniform_grid(1e-3, 0.1, 14)
    exact = fermion_exact_traces(lane10)
    traces = {sid: sample_trace(v, sid, lane10.times, 0, 0) for sid, v in exact.items()}
    est = fermion_estimate(lane10, traces, degree=4)
    truth = lane10.truth()
    assert est["h"] == pytest.approx(truth["h"], abs=2e-3)
    assert est["J"] == pytest.approx(truth["J"], abs=2e-3)
    assert est["K0"] == pytest.approx(truth["K0"], abs=0.05)
    assert est["K1"] == pytest.approx(truth["K1"], abs=0.3)
    assert est["v"] == pytest.approx(1.0, abs=0.05)


def test_fermion_estimate_exact_derivative_route(lane10):
    # bypass the polynomial fit: exact trace derivatives invert exactly
    from math import comb

    from memkernel.majorana import majorana_pair
    from memkernel.offsets import KernelEstimates, offset_m2, offset_value
    from memkernel.pipeline import _expand_class_table

    lane = lane10
    x = lane.majorana.drift

    def exact_deriv(p_out, p_in, m):
        z_in, c, d = majorana_pair(p_in)
        z_out, a, b = majorana_pair(p_out)
        seed = np.zeros_like(x)
        seed[c, d] += (z_in / 1j).real
        seed[d, c] -= (z_in / 1j).real
        tot = np.zeros_like(x)
        for k in range(m + 1):
            tot += comb(m, k) * (
                np.linalg.matrix_power(2 * x, k) @ seed @ np.linalg.matrix_power(2 * x.T, m - k)
            )
        return (z_out / 1j).real * tot[a, b]

    rows = fermion_transfer_rows(lane)
    system_terms = [
        (pauli, sign * (lane.h_field if lab == "h" else lane.j_coupling))
        for lab, _, pauli, sign in lane.ham_terms
    ]
    names = list(lane.classes)
    cv = {nm: {} for nm in names}
    for m in (2, 3):
        est = KernelEstimates(_expand_class_table(lane, cv))
        vals = []
        for sid, p_in, p_out in lane.kernel_traces:
            d = exact_deriv(p_out, p_in, m)
            if m == 2:
                off = offset_m2(p_out, p_in, system_terms)
            else:
                off = offset_value(
                    m, None, p_out, p_in, system_terms,
                    [(p, c) for c, p in lane.couplings.items()], est,
                )
            vals.append(d - off)
        sol, *_ = np.linalg.lstsq(rows[m], np.array(vals), rcond=None)
        for k, nm in enumerate(names):
            cv[nm][m - 2] = float(sol[k])
    assert cv["diag_edge"][0] == pytest.approx(1.0, abs=1e-9)
    assert cv["diag_edge"][1] == pytest.approx(-0.45, abs=1e-9)
    assert cv["diag_bulk"][0] == pytest.approx(2.0, abs=1e-9)
    assert cv["offdiag"][0] == pytest.approx(-1.0, abs=1e-9)
    assert cv["offdiag"][1] == pytest.approx(0.45, abs=1e-9)


def test_fermion_sampled_estimates_statistically_sound(lane10):
    lane10.times = uniform_grid(1e-3, 0.1, 14)
    exact = fermion_exact_traces(lane10)
    reps = 8
    shots = 10**5
    ests = []
    for rep in range(reps):
        traces = {
            sid: sample_trace(v, f"{sid}#r{rep}", lane10.times, shots, 5)
            for sid, v in exact.items()
        }
        ests.append(fermion_estimate(lane10, traces, degree=4))
    hs = np.array([e["h"] for e in ests])
    assert abs(hs.mean() - 0.8) <= 4 * hs.std(ddof=1) / np.sqrt(reps) + 1e-3


# ------------------------------------------------------------- ensemble lane

@pytest.fixture(scope="module")
def ens_lane():
    lane = build_ensemble_lane(10)
    lane.times = uniform_grid(1e-3, 0.1, 14)
    return lane


@pytest.fixture(scope="module")
def ens_surrogate(ens_lane):
    return EnsembleSurrogate(ens_lane, degree=40)


def test_tfim_ensemble_model_valid():
    from memkernel.model import validate

    model = tfim_ensemble_model(10, 0.8, 0.2, ((0.6, 0.3), (0.3, 0.7)))
    assert validate(model) == []
    # coefficient covariance is all-to-all: distinct Z-terms fully correlated
    cov = model.ensemble.covariance
    assert cov[0, 1] == pytest.approx(0.6)
    assert cov[0, 10] == pytest.approx(0.3)  # Cov(-h, -J)


def test_surrogate_matches_dense_spin_evaluator(ens_lane, ens_surrogate):
    ev = EnsembleEvaluator(ens_lane.model)
    rng = np.random.default_rng(4)
    mmap = np.zeros((2 * ens_lane.n - 1, 2))
    mmap[: ens_lane.n, 0] = -1.0
    mmap[ens_lane.n:, 1] = -1.0
    worst = 0.0
    for _ in range(6):
        h = ens_lane.h_field + 2.5 * rng.normal() * np.sqrt(ens_lane.sigma[0, 0])
        j = ens_lane.j_coupling + 2.5 * rng.normal() * np.sqrt(ens_lane.sigma[1, 1])
        lam = mmap @ np.array([h, j])
        for sid, p_in, p_out in [
            (f"lam-{l}", pi, po) for l, pi, po, _ in ens_lane.lam_traces
        ] + [(f"mom-{l}", pi, po) for l, pi, po in ens_lane.moment_traces]:
            for it in (0, len(ens_lane.times) - 1):
                direct = ev.value(lam, p_out, p_in, ens_lane.times[it])
                fast = ens_surrogate.values(sid, it, [h], [j])[0]
                worst = max(worst, abs(direct - fast))
    assert worst <= 1e-8


def test_ensemble_noise_free_estimates(ens_lane, ens_surrogate):
    rows = ensemble_moment_rows(ens_lane)
    traces = {
        sid: TimeTrace(sid, ens_lane.times, ens_surrogate.exact_mean(sid), 0, 0)
        for sid in ens_surrogate.coeffs
    }
    est = ensemble_estimate(ens_lane, traces, rows, degree=5)
    truth = ens_lane.truth()
    for key, val in truth.items():
        assert est[key] == pytest.approx(val, abs=0.02), key


def test_ensemble_moment_traces_are_even(ens_lane, ens_surrogate):
    # same in/out Pauli under a closed unitary ensemble: B(t) is even, so the
    # noise-free first derivative at 0 vanishes
    for label, p_in, p_out in ens_lane.moment_traces:
        if p_in != p_out:
            continue
        means = ens_surrogate.exact_mean(f"mom-{label}")
        from memkernel.fitter import FitConfig, fit_points

        f = fit_points(ens_lane.times, means, FitConfig(degree=5))
        assert abs(f.derivative(1)) < 5e-3


def test_ensemble_sampled_recovery_small(ens_lane, ens_surrogate):
    rows = ensemble_moment_rows(ens_lane)
    tables = ens_surrogate.cdf_tables(grid=241)
    reps = 5
    ests = []
    for rep in range(reps):
        traces = sample_ensemble_lane(ens_surrogate, tables, 400_000, 11, rep)
        ests.append(ensemble_estimate(ens_lane, traces, rows, degree=5))
    truth = ens_lane.truth()
    for key in ("h", "J", "S_hh", "S_JJ"):
        vals = np.array([e[key] for e in ests])
        se = vals.std(ddof=1) / np.sqrt(reps) + 1e-4
        assert abs(vals.mean() - truth[key]) <= 6 * se + 0.02, key


def test_cdf_sampler_consistent_with_per_shot_draws(ens_lane, ens_surrogate):
    # the inverse-CDF shortcut reproduces the per-draw statistics
    from memkernel.pipeline import inverse_cdf_draw
    from memkernel.sampler import sample_ensemble_trace

    sid = "mom-hh0"
    it = 3
    tables = ens_surrogate.cdf_tables(grid=241)

    def values_fn(lams, t):
        h = -lams[:, 0]
        j = -lams[:, ens_lane.n]
        k = int(np.argmin(np.abs(ens_lane.times - t)))
        return ens_surrogate.values(sid, k, h, j)

    shots = 120_000
    direct = sample_ensemble_trace(
        values_fn, ens_lane.model.ensemble, sid, [ens_lane.times[it]], shots, seed=3
    )
    rng = np.random.default_rng(9)
    b = inverse_cdf_draw(tables[sid][it], rng.random(shots))
    u = rng.random(shots)
    fast_mean = np.where(u < (1 + b) / 2, 1.0, -1.0).mean()
    se = 2.0 / np.sqrt(shots)
    assert abs(direct.means[0] - fast_mean) <= 5 * se


# ------------------------------------------------------------- summaries

def test_sweep_errors_and_slope():
    sweep = {
        100: [{"h": 0.9}, {"h": 0.7}],
        10000: [{"h": 0.81}, {"h": 0.79}],
    }
    errs = sweep_errors(sweep, {"h": 0.8})
    assert errs[100]["h"][0] == pytest.approx(0.1)
    assert errs[10000]["h"][0] == pytest.approx(0.01)
    slope = loglog_slope([100, 10000], [0.1, 0.01])
    assert slope == pytest.approx(-0.5)


def test_spin_diagonal_gate_correction_fires():
    # one qubit, three couplings; the SH-conjugated pair (Z0, Y0) carries a
    # kernel, so the diagonal X0 target needs the same-order cross correction
    model = NoiseModel(
        n_sites=1,
        hamiltonian=[HamiltonianTerm(0, P("Z0"), 0.2)],
        couplings=[CouplingTerm(0, P("X0")), CouplingTerm(1, P("Z0")), CouplingTerm(2, P("Y0"))],
        kernel=KernelSpec(
            modes=[
                KernelMode(0.5, 0.3, {0: 0.9}),
                KernelMode(-0.8, 0.4, {1: 0.7, 2: 0.6}),
            ]
        ),
    )
    spec = model.kernel
    report = run_spin_experiment(
        model, times=uniform_grid(1e-3, 0.035, 14), shots=0, degree=5, levels_per_mode=4
    )
    # the correction term itself is nonzero on this instance
    assert abs(spec.derivative(1, 2, 1).imag) > 0.2
    for (a, b, m), (v, _) in report.kernel_hat.items():
        assert v == pytest.approx(spec.derivative(a, b, m), abs=2e-2), (a, b, m)
    assert report.kernel_hat[(0, 0, 1)][0].imag == pytest.approx(
        spec.derivative(0, 0, 1).imag, abs=1e-2
    )


def test_spin_experiment_sampled_lambda():
    model = lossy_model()
    report = run_spin_experiment(
        model, times=uniform_grid(1e-3, 0.1, 12), shots=10**6, seed=3,
        degree=3, levels_per_mode=4, orders=(0,),
    )
    for i, t in enumerate(model.hamiltonian):
        val, err = report.lambda_hat[i]
        assert val == pytest.approx(t.coeff, abs=0.1)
    assert report.provenance["shots"] == 10**6
