from dataclasses import dataclass

import numpy as np
import pytest

from memkernel.fitter import (
    FitConfig,
    chebyshev_grid,
    derivative_error_budget,
    double_factorial,
    fit,
    fit_points,
    uniform_grid,
)


@dataclass
class FakeTrace:
    times: np.ndarray
    means: np.ndarray
    batch_means: np.ndarray | None = None


def test_exact_recovery_of_cubic():
    times = uniform_grid(1e-3, 0.1, 10)
    vals = 1 - 3 * times + 2 * times**3
    out = fit_points(times, vals, FitConfig(degree=3))
    assert out.derivative(0) == pytest.approx(1.0, abs=1e-10)
    assert out.derivative(1) == pytest.approx(-3.0, abs=1e-10)
    assert out.derivative(2) == pytest.approx(0.0, abs=1e-9)
    assert out.derivative(3) == pytest.approx(12.0, abs=1e-8)
    np.testing.assert_allclose(out(times), vals, atol=1e-12)


def test_quadratic_recovery():
    times = uniform_grid(1e-3, 0.1, 10)
    out = fit_points(times, times**2, FitConfig(degree=2))
    assert out.derivative(1) == pytest.approx(0.0, abs=1e-10)
    assert out.derivative(2) == pytest.approx(2.0, abs=1e-9)


def test_grid_invariance_on_polynomials():
    cfg_u = FitConfig(degree=4)
    poly = lambda t: 0.3 - 1.1 * t + 0.5 * t**2 - 2.0 * t**4
    tu = uniform_grid(1e-3, 0.1, 12)
    tc = chebyshev_grid(1e-3, 0.1, 12)
    fu = fit_points(tu, poly(tu), cfg_u)
    fc = fit_points(tc, poly(tc), cfg_u)
    for m in range(5):
        assert fu.derivative(m) == pytest.approx(fc.derivative(m), rel=1e-9, abs=1e-9)


def test_rescaling_contract():
    # fitting in physical time equals fitting on the mapped window and
    # undoing the affine map by the chain rule
    rng = np.random.default_rng(4)
    times = uniform_grid(1e-3, 0.1, 12)
    vals = np.sin(3 * times) + 0.05 * rng.standard_normal(times.size)
    d = 4
    direct = fit_points(times, vals, FitConfig(degree=d))
    a, b = FitConfig(degree=d).normalized_window()
    s = (b - a) / (times[-1] - times[0])
    x = a + (times - times[0]) * s
    mapped = np.polynomial.Chebyshev.fit(x, vals, deg=d).convert(
        kind=np.polynomial.Polynomial
    )
    x0 = a - times[0] * s
    for m in range(d + 1):
        val = mapped.deriv(m)(x0) * s**m
        assert direct.derivative(m) == pytest.approx(val, rel=1e-9, abs=1e-9)


def test_derivative_error_bound_statistics():
    # bounded per-point noise |w| <= eps_S supports the Lemma-style bound
    # |p_hat^(m)(0) - p^(m)(0)| <= 3 eps_S d^{2m+1}/(2m-1)!!  (>= 95% of seeds)
    d = 3
    eps_s = 1e-3
    times = chebyshev_grid(d**-2, 2 + d**-2, 40)
    coeffs = np.array([0.5, -1.0, 0.8, -0.3])
    poly = np.polynomial.Polynomial(coeffs)
    truth = [poly.deriv(m)(0.0) for m in range(d + 1)]
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        noisy = poly(times) + rng.uniform(-eps_s, eps_s, size=times.size)
        out = fit_points(times, noisy, FitConfig(degree=d))
        good = all(
            abs(out.derivative(m) - truth[m])
            <= 3 * eps_s * d ** (2 * m + 1) / double_factorial(2 * m - 1)
            for m in range(d + 1)
        )
        ok += good
    assert ok >= 95


def test_error_scale_monotone_in_order():
    times = uniform_grid(1e-3, 0.1, 10)
    out = fit_points(times, times, FitConfig(degree=3), eps_point=1e-3)
    scales = [out.error_scale[m] for m in range(4)]
    assert all(s1 <= s2 for s1, s2 in zip(scales, scales[1:]))


def test_budget_values():
    assert derivative_error_budget(FitConfig(degree=1), 1.0, 0) == pytest.approx(1 / 3)
    assert derivative_error_budget(FitConfig(degree=3), 1.0, 1) == pytest.approx(1 / 27)
    # doubling the degree costs 2^{2M} in required precision
    for M, d in [(1, 3), (2, 4)]:
        r = derivative_error_budget(FitConfig(degree=d), 1.0, M) / derivative_error_budget(
            FitConfig(degree=2 * d), 1.0, M
        )
        assert r == pytest.approx(2 ** (2 * M))


def test_median_of_means_resists_outliers():
    times = uniform_grid(1e-3, 0.1, 10)
    clean = 1 - 2 * times
    batches = np.tile(clean, (7, 1))
    batches[0] += 500.0 * times  # one corrupted batch, slope outlier
    trace = FakeTrace(times, batches.mean(axis=0), batch_means=batches)
    plain = fit(trace, FitConfig(degree=2))
    robust = fit(trace, FitConfig(degree=2, robust="median-of-means"))
    assert abs(robust.derivative(1) + 2.0) < 1e-8
    assert abs(plain.derivative(1) + 2.0) > 1.0


def test_rank_deficiency_raises():
    with pytest.raises(ValueError):
        fit_points(np.array([0.01, 0.01, 0.02]), np.zeros(3), FitConfig(degree=2))
    with pytest.raises(ValueError):
        fit_points(np.array([0.01, 0.02]), np.zeros(2), FitConfig(degree=2))
