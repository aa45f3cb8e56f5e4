"""Dense master-equation oracle: system qubits coupled to lossy pseudomodes.

Exact (to integrator tolerance) evolution of small system (x) environment
models.  The state-preparation channel inserts a layer of single-qubit gates
between two equal-length evolution segments; expectation traces are evaluated
by evolving the (traceless) operator P_I/2^N (x) gamma_E directly, which is
algebraically identical to averaging over the 2^|supp| product eigenstates of
P_I.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .majorana import jw_majorana
from .model import KernelMode, NoiseModel
from .pauli import PauliString, multiply

_EXPM_MAX_DIM = 40  # vectorized-propagator route up to dim^2 = 1600


@dataclass
class DensityOperator:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def check(self, tol: float = 1e-10) -> None:
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=tol):
            raise ValueError("density operator not Hermitian")
        if abs(np.trace(m) - 1) > tol:
            raise ValueError("density operator trace != 1")
        if np.linalg.eigvalsh(m).min() < -tol:
            raise ValueError("density operator not positive semidefinite")

    @staticmethod
    def vacuum(dim: int) -> "DensityOperator":
        m = np.zeros((dim, dim), dtype=complex)
        m[0, 0] = 1.0
        return DensityOperator(m)


def _lower(levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, levels, dtype=float)), k=1)


def _kron_all(mats) -> np.ndarray:
    return reduce(np.kron, mats, np.eye(1, dtype=complex))


_SH = np.array([[1, 0], [0, 1j]], dtype=complex) @ (
    np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
)


def w_unitary(w, n_qubits: int) -> np.ndarray | None:
    """Dense system unitary for a W-gate spec (None for identity)."""
    if w is None or getattr(w, "kind", "identity") == "identity":
        return None
    if w.kind == "pauli":
        return w.pauli.dense(n_qubits)
    if w.kind == "sh":
        mats = [_SH if s == w.site else np.eye(2) for s in range(n_qubits)]
        return _kron_all(mats)
    raise ValueError(f"unknown W spec {w!r}")


class ExactSimulator:
    """Master-equation evolution of system qubits (x) truncated environment modes."""

    def __init__(
        self,
        n_qubits: int,
        mode_dims: tuple[int, ...] = (),
        hamiltonian: np.ndarray | None = None,
        jumps: tuple[np.ndarray, ...] = (),
        atol: float = 1e-10,
        rtol: float = 1e-8,
        method: str = "auto",
        max_dim: int = 4096,
    ):
        self.n_qubits = n_qubits
        self.mode_dims = tuple(mode_dims)
        self.sys_dim = 2**n_qubits
        self.env_dim = int(np.prod(self.mode_dims)) if self.mode_dims else 1
        self.dim = self.sys_dim * self.env_dim
        if self.dim > max_dim:
            raise ValueError(
                f"joint dimension {self.dim} exceeds the dense-oracle cap {max_dim}"
            )
        self.hamiltonian = (
            np.zeros((self.dim, self.dim), dtype=complex) if hamiltonian is None else hamiltonian
        )
        self.jumps = tuple(jumps)
        self.atol, self.rtol = atol, rtol
        self.method = method
        self._liouvillian: np.ndarray | None = None
        self._prop_cache: dict[float, np.ndarray] = {}

    # -- construction ----------------------------------------------------

    @classmethod
    def from_model(
        cls, model: NoiseModel, levels_per_mode: int = 6, **kw
    ) -> "ExactSimulator":
        """Embed a spin model with lossy-mode kernels as system (x) pseudomodes."""
        if model.kernel is None or model.kernel.modes is None:
            modes: list[KernelMode] = []
        else:
            modes = model.kernel.modes
        n = model.n_sites
        dims = tuple(levels_per_mode for _ in modes)
        sim = cls(n, dims, **kw)
        h = np.zeros((sim.dim, sim.dim), dtype=complex)
        for t in model.hamiltonian:
            h += t.coeff * sim.system_op(t.pauli)
        jumps = []
        for li, mode in enumerate(modes):
            c = sim.mode_op(li, _lower(levels_per_mode))
            # H_E = -eps c^dag c makes <A(t) A(0)> = e^{(i eps - gamma/2) t}
            h += -mode.epsilon * (c.conj().T @ c)
            a_op = np.zeros_like(h)
            for b, v in mode.couplings.items():
                pb = sim.system_op(model.coupling(b).pauli)
                a_op += pb @ (v * c.conj().T + np.conj(v) * c)
            h += a_op
            if mode.gamma > 0:
                jumps.append(math.sqrt(mode.gamma) * c)
        sim.hamiltonian = h
        sim.jumps = tuple(jumps)
        return sim

    @classmethod
    def fermion_chain(
        cls, n_modes: int, j_coupling: float, h_field: float, v_amp, gammas, **kw
    ) -> "ExactSimulator":
        """Jordan-Wigner dense form of the dissipative free-fermion chain.

        n_modes system modes (qubits 0..n-1) and n_modes environment modes
        (qubits n..2n-1); v_amp may be a scalar for v_ij = v (delta_{i+1,j} -
        delta_{i,j+1}) or a full (n x n) matrix.
        """
        n = n_modes
        nq = 2 * n
        sim = cls(nq, (), **kw)
        if np.isscalar(v_amp):
            v = np.zeros((n, n))
            for i in range(n):
                if i + 1 < n:
                    v[i, i + 1] += v_amp
                if i - 1 >= 0:
                    v[i, i - 1] -= v_amp
        else:
            v = np.asarray(v_amp, dtype=float)
        gammas = np.broadcast_to(np.asarray(gammas, dtype=float), (n,))

        c = [jw_majorana(mu).dense(nq) for mu in range(2 * nq)]
        h = np.zeros((sim.dim, sim.dim), dtype=complex)
        for i in range(n):
            h += h_field * (1j * c[2 * i] @ c[2 * i + 1])
        for i in range(n - 1):
            h += j_coupling * (1j * c[2 * i + 1] @ c[2 * i + 2])
        for i in range(n):
            for jx in range(n):
                if v[i, jx]:
                    h += v[i, jx] * (1j * c[2 * i] @ c[2 * (n + jx)])
        jumps = []
        for jx in range(n):
            if gammas[jx] > 0:
                b = (c[2 * (n + jx)] + 1j * c[2 * (n + jx) + 1]) / 2.0
                jumps.append(math.sqrt(gammas[jx]) * b)
        sim.hamiltonian = h
        sim.jumps = tuple(jumps)
        return sim

    # -- operators ---------------------------------------------------------

    def system_op(self, p: PauliString) -> np.ndarray:
        return np.kron(p.dense(self.n_qubits), np.eye(self.env_dim, dtype=complex))

    def mode_op(self, mode_index: int, op: np.ndarray) -> np.ndarray:
        mats = [np.eye(d, dtype=complex) for d in self.mode_dims]
        mats[mode_index] = op
        return np.kron(np.eye(self.sys_dim, dtype=complex), _kron_all(mats))

    def env_vacuum(self) -> np.ndarray:
        g = np.zeros((self.env_dim, self.env_dim), dtype=complex)
        g[0, 0] = 1.0
        return g

    # -- evolution -----------------------------------------------------------

    def _rhs(self, rho: np.ndarray) -> np.ndarray:
        h = self.hamiltonian
        out = -1j * (h @ rho - rho @ h)
        for L in self.jumps:
            Ld = L.conj().T
            LdL = Ld @ L
            out += L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
        return out

    def liouvillian(self) -> np.ndarray:
        if self._liouvillian is None:
            d = self.dim
            eye = np.eye(d, dtype=complex)
            h = self.hamiltonian
            L = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
            for J in self.jumps:
                JdJ = J.conj().T @ J
                L += np.kron(J, J.conj()) - 0.5 * (np.kron(JdJ, eye) + np.kron(eye, JdJ.T))
            self._liouvillian = L
        return self._liouvillian

    def _propagator(self, t: float) -> np.ndarray:
        key = round(float(t), 15)
        if key not in self._prop_cache:
            self._prop_cache[key] = expm(self.liouvillian() * t)
        return self._prop_cache[key]

    def propagate(self, op: np.ndarray, t: float) -> np.ndarray:
        """Evolve an operator (state or trace-zero block) for duration t >= 0."""
        if t == 0:
            return op.copy()
        method = self.method
        if method == "auto":
            method = "expm" if self.dim <= _EXPM_MAX_DIM else "rk"
        if method == "expm":
            return (self._propagator(t) @ op.reshape(-1)).reshape(op.shape)
        sol = solve_ivp(
            lambda _, y: self._rhs(y.reshape(op.shape)).reshape(-1),
            (0.0, float(t)),
            op.reshape(-1).astype(complex),
            method="DOP853",
            atol=self.atol,
            rtol=self.rtol,
        )
        if not sol.success:
            raise RuntimeError(f"integrator failed: {sol.message}")
        return sol.y[:, -1].reshape(op.shape)

    def evolve_state(self, rho: DensityOperator, t: float) -> DensityOperator:
        return DensityOperator(self.propagate(rho.matrix, t))

    # -- channel traces --------------------------------------------------------

    def _initial_block(self, p_in: PauliString, w=None, conjugate_input=False) -> np.ndarray:
        op = p_in
        if conjugate_input and w is not None and getattr(w, "kind", "identity") != "identity":
            # prepare W^dag P_I W so the mid-circuit gate restores P_I
            op = _conjugate_pauli_by_w(p_in, w, inverse=True)
        sys_part = op.dense(self.n_qubits) / self.sys_dim
        return np.kron(sys_part, self.env_vacuum())

    def channel_value(
        self, p_out: PauliString, p_in: PauliString, t: float, w=None, conjugate_input=False
    ) -> float:
        return self.channel_trace(p_out, p_in, [t], w, conjugate_input)[0]

    def channel_trace(
        self, p_out: PauliString, p_in: PauliString, times, w=None, conjugate_input=False
    ) -> np.ndarray:
        """B(t) = Tr[P_O E_W(t)(P_I)]/2^N on the given time grid."""
        u = w_unitary(w, self.n_qubits)
        u_full = None if u is None else np.kron(u, np.eye(self.env_dim, dtype=complex))
        block0 = self._initial_block(p_in, w, conjugate_input)
        obs = self.system_op(p_out)
        out = np.empty(len(times))
        for k, t in enumerate(times):
            if t < 0:
                raise ValueError("times must be >= 0")
            block = self.propagate(block0, t)
            if u_full is not None:
                block = u_full @ block @ u_full.conj().T
            block = self.propagate(block, t)
            val = np.trace(obs @ block)
            if abs(val.imag) > 1e-8:
                warnings.warn(f"channel trace has imaginary part {val.imag:.2e}")
            out[k] = val.real
        return out

    def channel_value_by_eigenstates(
        self, p_out: PauliString, p_in: PauliString, t: float, w=None
    ) -> float:
        """Same trace via the 2^|supp| product-eigenstate expansion of P_I (validation)."""
        support = p_in.support()
        u = w_unitary(w, self.n_qubits)
        u_full = None if u is None else np.kron(u, np.eye(self.env_dim, dtype=complex))
        obs = self.system_op(p_out)
        total = 0.0
        n_sup = len(support)
        axes = p_in.axes
        for bits in range(2**n_sup):
            signs = [1 - 2 * ((bits >> k) & 1) for k in range(n_sup)]
            mats = []
            for s in range(self.n_qubits):
                if s in axes:
                    r = signs[support.index(s)]
                    pauli1 = PauliString.single(0, axes[s]).dense(1)
                    mats.append((np.eye(2) + r * pauli1) / 2.0)
                else:
                    mats.append(np.eye(2, dtype=complex) / 2.0)
            rho0 = np.kron(_kron_all(mats), self.env_vacuum())
            rho = self.propagate(rho0, t)
            if u_full is not None:
                rho = u_full @ rho @ u_full.conj().T
            rho = self.propagate(rho, t)
            weight = np.prod(signs) * p_in.phase() / 2**n_sup
            total += (weight * np.trace(obs @ rho)).real
        return total

    def top_level_population(self, block: np.ndarray) -> float:
        """Max population of any mode's highest truncated level (truncation probe)."""
        if not self.mode_dims:
            return 0.0
        worst = 0.0
        for li, d in enumerate(self.mode_dims):
            proj = np.zeros((d, d), dtype=complex)
            proj[d - 1, d - 1] = 1.0
            worst = max(worst, abs(np.trace(self.mode_op(li, proj) @ block)))
        return worst


def _conjugate_pauli_by_w(p: PauliString, w, inverse: bool) -> PauliString:
    from .pauli import conjugate_by_pauli, sh_conjugate

    if w.kind == "pauli":
        return conjugate_by_pauli(p, w.pauli)
    if w.kind == "sh":
        return sh_conjugate(p, w.site, inverse=inverse)
    return p


# ---------------------------------------------------------------------------
# derivative extraction without fitting (oracle use)


def fd_weights(m: int, npts: int) -> np.ndarray:
    """One-sided weights: f^(m)(0) ~ h^-m sum_j w_j f(j h), error O(h^{npts-m})."""
    if npts <= m:
        raise ValueError("need more than m points")
    V = np.array(
        [[j**k / math.factorial(k) for j in range(npts)] for k in range(npts)], dtype=float
    )
    b = np.zeros(npts)
    b[m] = 1.0
    return np.linalg.solve(V, b)


def finite_difference_derivatives(
    fn, m_max: int, step: float, order: int = 4, richardson: int = 2, noise_floor: float = 1e-12
):
    """Forward finite differences of fn at 0, Richardson extrapolated.

    Returns (derivs[1..m_max], err_estimates, warnings).  fn is evaluated only
    at t >= 0.  The condition estimate sum|w| h^-m * noise_floor triggers a
    warning when it exceeds the apparent derivative scale.
    """
    derivs = np.zeros(m_max)
    errs = np.zeros(m_max)
    notes: list[str] = []
    cache: dict[float, float] = {}

    def f(t):
        if t not in cache:
            cache[t] = fn(t)
        return cache[t]

    for m in range(1, m_max + 1):
        npts = m + order
        w = fd_weights(m, npts)
        estimates = []
        for lv in range(richardson + 1):
            h = step / 2**lv
            estimates.append(sum(w[j] * f(j * h) for j in range(npts)) / h**m)
        # Richardson: error order p = npts - m per level
        p = npts - m
        vals = list(estimates)
        for lv in range(1, len(vals)):
            fac = 2.0 ** (p + lv - 1)
            vals = [(fac * vals[i + 1] - vals[i]) / (fac - 1) for i in range(len(vals) - 1)]
        derivs[m - 1] = vals[0]
        errs[m - 1] = abs(estimates[-1] - estimates[-2]) if len(estimates) > 1 else np.inf
        cond = np.sum(np.abs(w)) / (step / 2**richardson) ** m * noise_floor
        if cond > max(abs(derivs[m - 1]), 1.0) * 1e-4:
            notes.append(f"order-{m} estimate condition {cond:.2e} may dominate")
    return derivs, errs, notes


# ---------------------------------------------------------------------------
# ensemble members (closed unitary evolution, fresh coefficient draw)


class EnsembleEvaluator:
    """Exact spin evolution under H_Lambda for duration 2t (no mid gate)."""

    def __init__(self, model: NoiseModel):
        self.model = model
        self.n_qubits = model.n_sites
        self.paulis = [t.pauli.dense(self.n_qubits) for t in model.hamiltonian]
        self._eig_cache: tuple[tuple, tuple] | None = None

    def _eig(self, lam: np.ndarray):
        key = tuple(np.round(lam, 14))
        if self._eig_cache is None or self._eig_cache[0] != key:
            h = sum(l * p for l, p in zip(lam, self.paulis))
            w, v = np.linalg.eigh(h)
            self._eig_cache = (key, (w, v))
        return self._eig_cache[1]

    def value(self, lam, p_out: PauliString, p_in: PauliString, t: float) -> float:
        w, v = self._eig(np.asarray(lam, dtype=float))
        po = v.conj().T @ p_out.dense(self.n_qubits) @ v
        pi = v.conj().T @ p_in.dense(self.n_qubits) @ v
        phases = np.exp(-2j * t * (w[:, None] - w[None, :]))
        val = np.sum(po * pi.T * phases.T) / 2**self.n_qubits
        return val.real

    def trace(self, lam, p_out, p_in, times) -> np.ndarray:
        w, v = self._eig(np.asarray(lam, dtype=float))
        po = v.conj().T @ p_out.dense(self.n_qubits) @ v
        pi = v.conj().T @ p_in.dense(self.n_qubits) @ v
        gaps = w[:, None] - w[None, :]
        weights = po * pi.T
        out = np.empty(len(times))
        for k, t in enumerate(times):
            out[k] = np.sum(weights * np.exp(-2j * t * gaps.T)).real
        return out / 2**self.n_qubits


def evolve_ensemble_member(model: NoiseModel, draw, p_out, p_in, t: float) -> float:
    return EnsembleEvaluator(model).value(draw, p_out, p_in, t)


# ---------------------------------------------------------------------------
# pseudomode validation


def environment_correlation(epsilon: float, gamma: float, times, levels: int = 6) -> np.ndarray:
    """<A(t) A(0)> on the mode vacuum for A = c + c^dag; expect e^{(i eps - gamma/2) t}."""
    sim = ExactSimulator(0, (levels,))
    c = sim.mode_op(0, _lower(levels))
    sim.hamiltonian = -epsilon * (c.conj().T @ c)
    sim.jumps = (math.sqrt(gamma) * c,) if gamma > 0 else ()
    a_op = c + c.conj().T
    gamma0 = sim.env_vacuum()
    out = np.empty(len(times), dtype=complex)
    for k, t in enumerate(times):
        out[k] = np.trace(a_op @ sim.propagate(a_op @ gamma0, t))
    return out
