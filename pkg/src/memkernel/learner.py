"""Recovery of Hamiltonian coefficients and kernel derivatives from trace data.

The first derivative of the canonical configuration gives lambda_a = -B'(0)/8.
Higher orders proceed recursively: subtract the offset, reconstruct the
targeted sandwich coefficients (xi) of the derivative transfer map by the
orthogonal-row inversion, then convert xi values into kernel derivatives with
the gate-dependent case formulas.  Both gate variants are measured at every
order, so the full one-sided table K^(m)_{a,b}(0+) is identifiable even for
dissipative kernels whose odd orders carry both symmetric and antisymmetric
parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pauli import PauliString, Region, chi, multiply, multiply_all, normalized_trace
from .planner import MeasurementSetting, WSpec, slot_pair


@dataclass(frozen=True)
class XiCoefficient:
    p: PauliString
    q: PauliString
    order: int  # trace-derivative order m
    w: str
    value: complex


@dataclass
class LearnReport:
    lambda_hat: dict = field(default_factory=dict)  # term index -> (value, err)
    kernel_hat: dict = field(default_factory=dict)  # (a, b, order) -> (complex, err)
    mode_params: dict | None = None
    ensemble: dict | None = None
    provenance: dict = field(default_factory=dict)
    commentary: list[str] = field(default_factory=list)

    def kernel_value(self, a, b, order):
        return self.kernel_hat.get((a, b, order), (0j, 0.0))[0]

    def to_dict(self) -> dict:
        return {
            "schema": "memkernel-report/1",
            "lambda_hat": {str(k): [float(v), float(e)] for k, (v, e) in self.lambda_hat.items()},
            "kernel_hat": {
                f"{a},{b},{m}": [repr(complex(v)), float(e)]
                for (a, b, m), (v, e) in sorted(self.kernel_hat.items())
            },
            "mode_params": self.mode_params,
            "ensemble": self.ensemble,
            "provenance": self.provenance,
            "commentary": self.commentary,
        }


# ---------------------------------------------------------------------------
# Hamiltonian coefficients


def recover_lambda(settings_and_fits) -> dict[int, float]:
    """lambda_a = -B'(0)/8 from the canonical first-derivative settings.

    Takes (setting, fit) pairs; the setting's lambda_scale folds the phase of
    the stored phaseless observable back into 2i P_a P_I.
    """
    out: dict[int, float] = {}
    for setting, fitres in settings_and_fits:
        kind, index = setting.target
        if kind != "lambda":
            continue
        slope = setting.lambda_scale * fitres.derivative(1)
        out[index] = -slope / 8.0
    return out


# ---------------------------------------------------------------------------
# xi extraction (orthogonal-row inversion on a region)


def extract_xi(observations: dict[PauliString, float], region: Region,
               p_e: PauliString, p_f: PauliString) -> complex:
    """xi_{e,f} = sum_alpha R_alpha O_alpha over all 4^|region| inputs.

    observations maps each phaseless region Pauli alpha (including the
    identity) to the measured value (1/2^N) Tr[P_beta T(alpha)] where
    P_beta ~ (P_e alpha P_f)^dag is the companion observable.  Row entries
    have modulus 4^-|region|, so observation noise is never amplified.
    """
    n = len(region)
    fourn = 4**n
    if len(observations) != fourn:
        raise ValueError(f"need all {fourn} observations on the region, got {len(observations)}")
    total = 0j
    for alpha, value in observations.items():
        beta = multiply_all([p_e, alpha, p_f]).adjoint().phaseless()
        # R = Tr(P_e P_beta P_f P_alpha) / 2^{3n}: observable slot first, then
        # the input; the product is a phased identity by construction
        prod = multiply_all([p_e, beta, p_f, alpha])
        if prod.sites:
            raise ValueError("companion observable does not close the product")
        total += (prod.phase() / fourn) * value
    return total


# ---------------------------------------------------------------------------
# case formulas


def kernel_from_xi(xi: complex, m: int, case: int, chi_wb: int = 0,
                   im_kcd: float = 0.0) -> complex:
    """Kernel-derivative estimate of order m-2 from one xi coefficient.

    case 1 (identity gate): K = conj(xi) / 2^{m+1}.
    case 2 (single-Pauli gate): K = (-1)^chi(w,b) conj(xi) / (2^{m+1} - 4).
    case 3 (SH gate, diagonal): Im K_aa = Im K_cd - Im(xi) / (2^m - 2), with
    (c, d) the gate-conjugated pair; returns i * Im K_aa.
    """
    if case == 1:
        return np.conj(xi) / 2 ** (m + 1)
    if case == 2:
        div = 2 ** (m + 1) - 4
        if div == 0:
            raise ValueError("case 2 is degenerate at m = 1")
        return (-1) ** chi_wb * np.conj(xi) / div
    if case == 3:
        div = 2**m - 2
        if div == 0:
            raise ValueError("case 3 is degenerate at m = 1")
        return 1j * (im_kcd - xi.imag / div)
    raise ValueError(f"unknown case {case}")


def combine_case_estimates(k1: complex | None, k2: complex | None):
    """Ordered-pair table entries from the identity/gate combination.

    k1 estimates (K_ab + conj(K_ba))/2, k2 estimates (K_ab - conj(K_ba))/2;
    with one variant missing the other is used alone (smooth-parity reading).
    """
    if k1 is None:
        return k2, -np.conj(k2)
    if k2 is None:
        return k1, np.conj(k1)
    return k1 + k2, np.conj(k1 - k2)


def symmetrized(k_ab: complex, k_ba: complex, order: int) -> tuple[complex, complex]:
    """Average an ordered pair onto the smooth-parity manifold."""
    sym = 0.5 * (k_ab + (-1) ** order * np.conj(k_ba))
    return sym, (-1) ** order * np.conj(sym)


# ---------------------------------------------------------------------------
# the derivative transfer map, symbolically


def tau_trace(p_out: PauliString, p_in: PauliString, w: WSpec, m: int,
              p_c: PauliString, p_d: PauliString, anti: bool) -> complex:
    """(1/2^N) Tr[P_O tau^(m,+-)_{W,c,d}(P_I)] by exact Pauli algebra.

    The three gate placements carry weights (1, 2^m - 2, 1); `anti` selects
    the anticommutator branch (the Im K coefficient, with its factor i).
    """
    mid = 2**m - 2

    def brackets(x):
        inner = [(multiply(p_d, x), 1.0), (multiply(x, p_d), 1.0 if anti else -1.0)]
        out = []
        for term, s1 in inner:
            out.append((multiply(p_c, term), s1))
            out.append((multiply(term, p_c), -s1))
        return out

    def tr_against(obs, x):
        return sum(s * normalized_trace([obs, term]) for term, s in brackets(x))

    # region [0, t]: gate wraps the commutators; fold it onto the observable
    po_folded = w.conjugate(p_out, inverse=True)
    total = tr_against(po_folded, p_in)
    # straddling region, weight 2^m - 2: [P_c, W [P_d, X]_pm W^dag]
    left = w.conjugate(multiply(p_out, p_c), inverse=True)
    right = w.conjugate(multiply(p_c, p_out), inverse=True)
    for x, y, s in ((p_d, p_in, 1.0), (p_in, p_d, 1.0 if anti else -1.0)):
        total += mid * s * (normalized_trace([left, x, y]) - normalized_trace([right, x, y]))
    # region [t, 2t]: only the input is conjugated
    total += tr_against(p_out, w.conjugate(p_in))
    return -(1j if anti else 1.0) * total


def transfer_observation(p_out: PauliString, p_in: PauliString, w: WSpec, m: int,
                         couplings, kernel_order_table) -> complex:
    """(1/2^N) Tr[P_O T_W^(m)(P_I)] given order-(m-2) kernel values.

    kernel_order_table maps ordered index pairs (c, d) to K^(m-2)_{c,d}(0);
    couplings maps index -> PauliString.
    """
    total = 0j
    for (c, d), k in kernel_order_table.items():
        if k == 0:
            continue
        pc, pd = couplings[c], couplings[d]
        total += k.real * tau_trace(p_out, p_in, w, m, pc, pd, anti=False)
        total += k.imag * tau_trace(p_out, p_in, w, m, pc, pd, anti=True)
    return total


def transfer_row(p_out: PauliString, p_in: PauliString, w: WSpec, m: int,
                 couplings, unknowns) -> np.ndarray:
    """Coefficients of the observation in the given unknown components.

    unknowns: list of (c, d, part) with part "re"/"im"; entries are real.
    """
    row = np.empty(len(unknowns))
    for k, (c, d, part) in enumerate(unknowns):
        # both branches return real coefficients (the anticommutator branch
        # carries its factor i inside tau)
        val = tau_trace(p_out, p_in, w, m, couplings[c], couplings[d], anti=(part == "im"))
        if abs(val.imag) > 1e-10:
            raise ArithmeticError("transfer coefficient came out complex")
        row[k] = val.real
    return row


def solve_linear_targets(rows: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares solve of the designed observation system (well posed by
    construction; lstsq guards against redundant rows)."""
    sol, *_ = np.linalg.lstsq(np.asarray(rows, float), np.asarray(values, float), rcond=None)
    return sol


# ---------------------------------------------------------------------------
# the recursive kernel-learning driver (general spin lane)


@dataclass
class KernelLearnInputs:
    """Everything learn_kernels needs for one tomography region.

    derivative(setting, trace, m) must return the m-th derivative estimate of
    the measured trace at 0.
    """

    settings: list[MeasurementSetting]
    derivative: callable
    couplings: dict[int, PauliString]
    system_terms: list  # (PauliString, lambda_hat)
    max_order: int
    offset_fn: callable = None  # (m, setting, trace, estimates) -> offset value


def learn_kernels(inputs: KernelLearnInputs, smooth: bool = False):
    """Recurse over trace-derivative orders, returning the one-sided table.

    Offsets at order m use only lambda_hat and kernel orders <= m - 3, so the
    recursion is self-contained; with `smooth` the (a,b)/(b,a) estimates are
    averaged onto the parity manifold.
    """
    from .offsets import KernelEstimates, offset_m2, offset_value

    table: dict[tuple[int, int, int], complex] = {}
    by_target: dict[tuple, dict[str, list[MeasurementSetting]]] = {}
    for st in inputs.settings:
        if st.target[0] == "lambda":
            continue
        by_target.setdefault(tuple(st.target), {}).setdefault(st.w.describe(), []).append(st)

    def offset_for(m, setting, trace, estimates):
        if inputs.offset_fn is not None:
            return inputs.offset_fn(m, setting, trace, estimates)
        prepared = setting.w.conjugate(trace.p_in, inverse=True) if setting.conjugate_input else trace.p_in
        if m == 2:
            return offset_m2(trace.p_out, prepared, inputs.system_terms, w=setting.w)
        return offset_value(
            m, setting.w, trace.p_out, prepared, inputs.system_terms,
            [(p, c) for c, p in inputs.couplings.items()], estimates,
        )

    for order in range(inputs.max_order + 1):
        m = order + 2
        estimates = KernelEstimates(table)
        stage: dict[tuple[int, int], dict[str, complex]] = {}
        for target, variants in by_target.items():
            a, b = target
            for wkey, group in variants.items():
                region = group[0].region
                w = group[0].w
                if w.kind == "sh" and a != b:
                    continue
                observations: dict[PauliString, float] = {}
                for st in group:
                    for tr in st.traces:
                        val = inputs.derivative(st, tr, m) - offset_for(m, st, tr, estimates)
                        if w.kind == "pauli":
                            # single-Pauli gates dress every sandwich with the
                            # input-dependent sign; undo it before inversion
                            val *= (-1) ** chi(w.pauli, tr.p_in)
                        observations[tr.p_in] = val
                p_e, p_f = slot_pair(a, b, w, inputs.couplings)
                xi = extract_xi(observations, region, p_e, p_f)
                stage.setdefault((a, b), {})[wkey] = xi

        # off-diagonal pairs first: the diagonal gate-variant correction may
        # need the same-order estimate of the gate-conjugated pair
        ordered_stage = sorted(stage.items(), key=lambda kv: kv[0][0] == kv[0][1])
        for (a, b), xis in ordered_stage:
            k1 = k2 = None
            im_diag = None
            for wkey, xi in xis.items():
                if wkey == "1":
                    k1 = kernel_from_xi(xi, m, 1)
                elif wkey.startswith("P("):
                    w = next(
                        st.w for st in by_target[(a, b)][wkey]
                    )
                    k2 = kernel_from_xi(xi, m, 2, chi_wb=chi(w.pauli, inputs.couplings[b]))
                elif wkey.startswith("SH"):
                    w = next(st.w for st in by_target[(a, b)][wkey])
                    corr = _case3_correction(inputs, w, a, order, table)
                    im_diag = kernel_from_xi(xi, m, 3, im_kcd=corr)
            if a == b:
                value = (k1.real if k1 is not None else 0.0) + (im_diag if im_diag is not None else 0j)
                table[(a, a, order)] = complex(value)
            else:
                k_ab, k_ba = combine_case_estimates(k1, k2)
                if smooth:
                    k_ab, k_ba = symmetrized(k_ab, k_ba, order)
                table[(a, b, order)] = complex(k_ab)
                table[(b, a, order)] = complex(k_ba)
    return table


def _case3_correction(inputs: KernelLearnInputs, w: WSpec, a: int, order: int, table) -> float:
    """Im K_cd for the gate-conjugated pair, if both strings are couplings."""
    pa = inputs.couplings[a]
    fwd = w.conjugate(pa)
    back = w.conjugate(pa, inverse=True)
    inv = {str(p.phaseless()): i for i, p in inputs.couplings.items()}
    c = inv.get(str(fwd.phaseless()))
    d = inv.get(str(back.phaseless()))
    if c is None or d is None:
        return 0.0
    val = table.get((c, d, order))
    return float(val.imag) if val is not None else 0.0


# ---------------------------------------------------------------------------
# physical parameters


def mode_params_from_kernel(k0: complex, k1: complex):
    """Single-mode inversion: v = sqrt(K(0)), gamma = -2 Re K'(0)/K(0),
    eps = Im K'(0)/K(0); refused when K(0) is not positive."""
    if k0.real <= 0 or abs(k0.imag) > 0.5 * abs(k0):
        raise ValueError("mode extraction unidentifiable: K(0) must be positive")
    v = float(np.sqrt(k0.real))
    gamma = float(-2.0 * k1.real / k0.real)
    eps = float(k1.imag / k0.real)
    return v, gamma, eps


def ensemble_from_moments(lambda_hat: dict[int, float], second_moments: dict[tuple[int, int], float]):
    """Sigma_ab = E[Lambda_a Lambda_b] - lambda_a lambda_b."""
    out = {}
    for (a, b), m2 in second_moments.items():
        out[(a, b)] = m2 - lambda_hat[a] * lambda_hat[b]
    return out
