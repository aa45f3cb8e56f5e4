import numpy as np
import pytest

from memkernel.model import (
    CouplingTerm,
    EnsembleSpec,
    HamiltonianTerm,
    KernelMode,
    KernelSpec,
    NoiseModel,
)
from memkernel.pauli import PauliString, normalized_trace
from memkernel.sim_exact import (
    DensityOperator,
    EnsembleEvaluator,
    ExactSimulator,
    environment_correlation,
    fd_weights,
    finite_difference_derivatives,
)

P = PauliString.parse


def single_qubit_model(lam=0.8):
    return NoiseModel(n_sites=1, hamiltonian=[HamiltonianTerm(0, P("Z0"), lam)])


def lossy_two_qubit_model(eps=0.6, gamma=0.8, v=(1.0, 0.55)):
    return NoiseModel(
        n_sites=2,
        hamiltonian=[HamiltonianTerm(0, P("Z0"), 0.3), HamiltonianTerm(1, P("Z1"), 0.45)],
        couplings=[CouplingTerm(0, P("X0")), CouplingTerm(1, P("X1"))],
        kernel=KernelSpec(modes=[KernelMode(eps, gamma, {0: v[0], 1: v[1]})]),
    )


# ------------------------------------------------------------- pseudomodes

def test_environment_correlation_matches_mode_kernel():
    times = np.linspace(0.0, 0.5, 6)
    for eps, gamma in [(0.0, 0.9), (0.7, 0.4), (-1.2, 0.0)]:
        got = environment_correlation(eps, gamma, times, levels=5)
        want = np.exp((1j * eps - gamma / 2) * times)
        np.testing.assert_allclose(got, want, atol=1e-8)


def test_truncation_probe_small():
    model = lossy_two_qubit_model()
    sim = ExactSimulator.from_model(model, levels_per_mode=6)
    block = sim._initial_block(P("X0"))
    block = sim.propagate(block, 0.1)
    assert sim.top_level_population(block) <= 1e-8


# ------------------------------------------------------------- channel basics

def test_channel_at_zero_is_normalized_trace():
    sim = ExactSimulator.from_model(lossy_two_qubit_model(), levels_per_mode=3)
    for po, pi in [("X0", "X0"), ("Z0", "X0"), ("X0 Z1", "X0 Z1"), ("Y1", "Y1")]:
        got = sim.channel_value(P(po), P(pi), 0.0)
        assert got == pytest.approx(normalized_trace([P(po), P(pi)]).real, abs=1e-12)


def test_minus_eight_lambda_first_derivative():
    lam = 0.8
    sim = ExactSimulator.from_model(single_qubit_model(lam))
    p_in, p_out = P("X0"), P("- Y0")  # 2i Z X = -2 Y; track the factor 2 separately

    def trace(t):
        return 2.0 * sim.channel_value(p_out, p_in, t)

    derivs, errs, _ = finite_difference_derivatives(trace, 1, step=0.02)
    assert derivs[0] == pytest.approx(-8 * lam, abs=1e-8)


def test_fd_on_polynomial():
    derivs, _, _ = finite_difference_derivatives(lambda t: t**2, 3, step=0.05)
    np.testing.assert_allclose(derivs, [0.0, 2.0, 0.0], atol=1e-9)


def test_fd_weights_first_order():
    w = fd_weights(1, 2)
    np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-12)


def test_closed_system_second_derivative_is_double_commutator():
    model = NoiseModel(
        n_sites=2,
        hamiltonian=[
            HamiltonianTerm(0, P("Z0"), 0.3),
            HamiltonianTerm(1, P("X0 X1"), 0.2),
        ],
    )
    sim = ExactSimulator.from_model(model)
    p_in, p_out = P("X0"), P("X0")
    derivs, _, _ = finite_difference_derivatives(
        lambda t: sim.channel_value(p_out, p_in, t), 2, step=0.02
    )
    n = 2
    hmat = sum(t.coeff * t.pauli.dense(n) for t in model.hamiltonian)
    comm = hmat @ p_in.dense(n) - p_in.dense(n) @ hmat
    comm2 = hmat @ comm - comm @ hmat
    f2 = (-4.0 / 2**n) * np.trace(p_out.dense(n) @ comm2).real
    assert derivs[1] == pytest.approx(f2, abs=1e-6)


def test_channel_linearity_in_input():
    sim = ExactSimulator.from_model(lossy_two_qubit_model(), levels_per_mode=3)
    p_out = P("Y0 X1")
    a, b = P("X0"), P("Z0 Z1")
    t = 0.07
    va = sim.channel_value(p_out, a, t)
    vb = sim.channel_value(p_out, b, t)
    # evolve the combination 2a - 3b directly
    block = 2 * sim._initial_block(a) - 3 * sim._initial_block(b)
    block = sim.propagate(sim.propagate(block, t), t)
    combined = np.trace(sim.system_op(p_out) @ block).real
    assert combined == pytest.approx(2 * va - 3 * vb, abs=1e-9)


def test_zero_couplings_match_closed_system():
    model = lossy_two_qubit_model(v=(0.0, 0.0))
    sim = ExactSimulator.from_model(model, levels_per_mode=3)
    closed = ExactSimulator.from_model(
        NoiseModel(n_sites=2, hamiltonian=model.hamiltonian)
    )
    times = [0.0, 0.05, 0.1]
    for po, pi in [("X0", "X0"), ("Y1", "X1")]:
        np.testing.assert_allclose(
            sim.channel_trace(P(po), P(pi), times),
            closed.channel_trace(P(po), P(pi), times),
            atol=1e-8,
        )


def test_decoupled_lossy_mode_keeps_system_trace_constant():
    model = NoiseModel(
        n_sites=1,
        hamiltonian=[],
        couplings=[CouplingTerm(0, P("X0"))],
        kernel=KernelSpec(modes=[KernelMode(0.3, 0.9, {0: 0.0})]),
    )
    sim = ExactSimulator.from_model(model, levels_per_mode=4)
    vals = sim.channel_trace(P("Z0"), P("Z0"), [0.0, 0.04, 0.09])
    np.testing.assert_allclose(vals, vals[0], atol=1e-9)


def test_trace_preservation_of_joint_evolution():
    sim = ExactSimulator.from_model(lossy_two_qubit_model(), levels_per_mode=4)
    rho0 = np.zeros((sim.dim, sim.dim), dtype=complex)
    rho0[1, 1] = 0.4
    rho0[0, 0] = 0.6
    for t in [0.02, 0.05, 0.1]:
        rho = sim.propagate(rho0, t)
        assert abs(np.trace(rho) - 1) <= 1e-8


def test_eigenstate_expansion_matches_direct_trace():
    sim = ExactSimulator.from_model(lossy_two_qubit_model(), levels_per_mode=3)
    for po, pi in [("Y0", "X0"), ("X0 X1", "X0 Z1")]:
        direct = sim.channel_value(P(po), P(pi), 0.06)
        expanded = sim.channel_value_by_eigenstates(P(po), P(pi), 0.06)
        assert expanded == pytest.approx(direct, abs=1e-9)


def test_rk_and_expm_agree():
    model = lossy_two_qubit_model()
    fast = ExactSimulator.from_model(model, levels_per_mode=3, method="expm")
    slow = ExactSimulator.from_model(model, levels_per_mode=3, method="rk")
    np.testing.assert_allclose(
        fast.channel_trace(P("Y0"), P("X0"), [0.08]),
        slow.channel_trace(P("Y0"), P("X0"), [0.08]),
        atol=1e-8,
    )


def test_density_operator_checks():
    rho = DensityOperator.vacuum(4)
    rho.check()
    with pytest.raises(ValueError):
        DensityOperator(np.diag([0.5, 0.6, 0.0, 0.0])).check()


# ------------------------------------------------------------- ensemble members

def test_ensemble_sigma_zero_matches_closed_channel():
    model = single_qubit_model(0.8)
    ev = EnsembleEvaluator(model)
    sim = ExactSimulator.from_model(model)
    p_in, p_out = P("X0"), P("Y0")
    for t in [0.0, 0.03, 0.08]:
        assert ev.value([0.8], p_out, p_in, t) == pytest.approx(
            sim.channel_value(p_out, p_in, t), abs=1e-9
        )


def test_ensemble_member_at_zero_is_pauli_trace():
    model = single_qubit_model()
    ev = EnsembleEvaluator(model)
    rng = np.random.default_rng(0)
    for _ in range(5):
        lam = rng.normal(size=1)
        assert ev.value(lam, P("X0"), P("X0"), 0.0) == pytest.approx(1.0, abs=1e-12)
        assert ev.value(lam, P("Y0"), P("X0"), 0.0) == pytest.approx(0.0, abs=1e-12)


def test_gaussian_averaged_rabi_curve():
    # H = Lambda Z, Lambda ~ N(0, sigma^2): E[B_X(t)] = E[cos 4 Lambda t] = e^{-8 sigma^2 t^2}
    sigma = 0.6
    model = NoiseModel(n_sites=1, hamiltonian=[HamiltonianTerm(0, P("Z0"), 0.0)])
    ev = EnsembleEvaluator(model)
    rng = np.random.default_rng(42)
    draws = rng.normal(0.0, sigma, size=20_000)
    t = 0.35
    vals = np.array([ev.value([lam], P("X0"), P("X0"), t) for lam in draws])
    want = np.exp(-8 * sigma**2 * t**2)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - want) <= 3 * se
    # and each member is the exact Rabi value
    np.testing.assert_allclose(vals[:100], np.cos(4 * draws[:100] * t), atol=1e-10)
