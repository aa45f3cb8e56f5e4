"""Polynomial fits of time traces and derivative extraction at t = 0.

Least squares in a Chebyshev basis on the (affinely mapped) sample window,
re-expressed as a power series in physical time for the derivative readout.
The error budget follows the robust-interpolation scaling: a per-point
precision eps_S supports the M-th derivative to about
3 eps_S d^{2M+1} / (2M-1)!! on the normalized window [d^-2, 2 + d^-2].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def double_factorial(k: int) -> int:
    """(2m-1)!! with the empty product (-1)!! = 1."""
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def uniform_grid(t_min: float, t_max: float, n_points: int) -> np.ndarray:
    return np.linspace(t_min, t_max, n_points)


def chebyshev_grid(t_min: float, t_max: float, n_points: int) -> np.ndarray:
    j = np.arange(n_points)
    nodes = np.cos((2 * j + 1) * np.pi / (2 * n_points))
    return np.sort(0.5 * (t_min + t_max) + 0.5 * (t_max - t_min) * nodes)


@dataclass
class FitConfig:
    degree: int = 3
    grid: str = "uniform"  # or "chebyshev"
    robust: str = "none"  # or "median-of-means"

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.grid not in ("uniform", "chebyshev"):
            raise ValueError(f"unknown grid kind {self.grid!r}")
        if self.robust not in ("none", "median-of-means"):
            raise ValueError(f"unknown robustification {self.robust!r}")

    def normalized_window(self) -> tuple[float, float]:
        a = self.degree**-2
        return a, 2.0 + a


@dataclass
class PolyFit:
    coefficients: np.ndarray  # power series in physical time, ascending
    derivative_at_zero: dict[int, float]
    error_scale: dict[int, float] = field(default_factory=dict)

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coefficients)

    def derivative(self, m: int) -> float:
        return self.derivative_at_zero[m]

    def to_dict(self) -> dict:
        return {
            "coefficients": [float(c) for c in self.coefficients],
            "derivative_at_zero": {str(m): float(v) for m, v in self.derivative_at_zero.items()},
            "error_scale": {str(m): float(v) for m, v in self.error_scale.items()},
        }


def fit(trace, config: FitConfig, eps_point: float | None = None) -> PolyFit:
    """Fit one sampled trace; trace needs .times and .means (and .batch_means
    when median-of-means robustification is requested)."""
    times = np.asarray(trace.times, dtype=float)
    means = np.asarray(trace.means, dtype=float)
    if config.robust == "median-of-means":
        batches = getattr(trace, "batch_means", None)
        if batches is not None:
            means = np.median(np.asarray(batches, dtype=float), axis=0)
    return fit_points(times, means, config, eps_point=eps_point)


def fit_points(
    times: np.ndarray, values: np.ndarray, config: FitConfig, eps_point: float | None = None
) -> PolyFit:
    d = config.degree
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) < d + 1:
        raise ValueError(f"need at least degree+1 = {d + 1} points")
    if len(np.unique(times)) < d + 1:
        raise ValueError("too few distinct times (rank deficient)")
    cheb = np.polynomial.Chebyshev.fit(times, values, deg=d)
    poly = cheb.convert(kind=np.polynomial.Polynomial)
    coeffs = np.zeros(d + 1)
    coeffs[: len(poly.coef)] = poly.coef
    derivs = {}
    fact = 1.0
    for m in range(d + 1):
        if m > 0:
            fact *= m
        derivs[m] = float(coeffs[m] * fact)
    scales = {}
    if eps_point is not None:
        for m in range(d + 1):
            scales[m] = 3.0 * eps_point * d ** (2 * m + 1) / double_factorial(2 * m - 1)
    return PolyFit(coeffs, derivs, scales)


def derivative_error_budget(config: FitConfig, eps_target: float, order: int) -> float:
    """Per-point precision eps_S so the order-th derivative reaches eps_target."""
    d = config.degree
    if order > d:
        raise ValueError("requested derivative order exceeds fit degree")
    return eps_target * double_factorial(2 * order - 1) / (3.0 * d ** (2 * order))
