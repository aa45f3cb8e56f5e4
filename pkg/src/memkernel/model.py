"""Noise-model description: system Hamiltonian, coupling Paulis, memory kernels.

A model carries the system terms lambda_a P_a, the coupling strings P_b, and a
kernel specification, either as lossy-mode parameters (v, epsilon, gamma per
mode) or as a table of derivatives K^(m)_{a,b}(0).  Derivatives follow the
t >= 0 branch of e^{(i eps - gamma/2)|t|}, so dissipative kernels may carry
real odd-order diagonal entries; the two-sided parity constraints are enforced
only for smooth (non-dissipative or tabulated) kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import yaml

from .pauli import PauliString, support_region

MODEL_SCHEMA = "memkernel-model/1"


@dataclass(frozen=True)
class HamiltonianTerm:
    index: int
    pauli: PauliString
    coeff: float
    label: str = ""


@dataclass(frozen=True)
class CouplingTerm:
    index: int
    pauli: PauliString
    label: str = ""


@dataclass(frozen=True)
class KernelMode:
    """One lossy environment mode: correlation e^{(i epsilon - gamma/2) t}, t >= 0."""

    epsilon: float
    gamma: float
    couplings: dict[int, complex]  # coupling index -> amplitude v_{a,l}

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("mode decay rate must be >= 0")


@dataclass
class KernelSpec:
    modes: list[KernelMode] | None = None
    table: dict[tuple[int, int, int], complex] | None = None

    def __post_init__(self):
        if (self.modes is None) == (self.table is None):
            raise ValueError("specify exactly one of modes/table")

    def is_smooth(self) -> bool:
        """True when two-sided derivative parity applies (no decay kink at t=0)."""
        if self.modes is not None:
            return all(m.gamma == 0 for m in self.modes)
        return True

    def derivative(self, a: int, b: int, m: int) -> complex:
        return kernel_derivative(self, a, b, m)

    def partners(self, a: int) -> set[int]:
        out: set[int] = set()
        if self.modes is not None:
            for mode in self.modes:
                if a in mode.couplings:
                    out.update(mode.couplings)
        else:
            for (x, y, _), v in self.table.items():
                if v != 0:
                    if x == a:
                        out.add(y)
                    if y == a:
                        out.add(x)
        return out

    def nonzero_pairs(self, coupling_indices: Iterable[int]) -> list[tuple[int, int]]:
        """Unordered index pairs (a <= b) with a not-identically-zero kernel."""
        idx = sorted(coupling_indices)
        out = []
        for i, a in enumerate(idx):
            part = self.partners(a)
            for b in idx[i:]:
                if b in part or (a == b and a in part):
                    out.append((a, b))
        return out

    def to_table(self, coupling_indices: Iterable[int], max_order: int) -> dict:
        tab = {}
        for a, b in self.nonzero_pairs(coupling_indices):
            for m in range(max_order + 1):
                tab[(a, b, m)] = self.derivative(a, b, m)
                if a != b:
                    tab[(b, a, m)] = self.derivative(b, a, m)
        return tab


def kernel_derivative(spec: KernelSpec, a: int, b: int, m: int) -> complex:
    """m-th right-derivative of K_{a,b} at t=0; unknown pairs give 0."""
    if m < 0:
        raise ValueError("derivative order must be >= 0")
    if spec.modes is not None:
        total = 0j
        for mode in spec.modes:
            va = mode.couplings.get(a)
            vb = mode.couplings.get(b)
            if va is None or vb is None:
                continue
            total += np.conj(va) * vb * (1j * mode.epsilon - mode.gamma / 2.0) ** m
        return complex(total)
    return complex(spec.table.get((a, b, m), 0.0))


@dataclass(frozen=True)
class ModelMetadata:
    k_s: int = 0
    k_se: int = 0
    d: int = 0  # max number of non-commuting neighbours of any term
    d0: int = 0  # max conflicting-pair count over kernel pairs
    a0: int = 0  # diameter bound for coupling strings
    s: int = 0  # kernel sparsity: partners per coupling index


@dataclass
class EnsembleSpec:
    """Jointly Gaussian Hamiltonian coefficients: mean per term, covariance matrix."""

    means: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)

    def factor(self) -> np.ndarray:
        """B with B B^T = covariance (eigen factorization, PSD enforced)."""
        w, v = np.linalg.eigh(self.covariance)
        if w.min() < -1e-10:
            raise ValueError("covariance is not positive semidefinite")
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))

    def draw(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        b = self.factor()
        k = b.shape[1]
        if size is None:
            return b @ rng.standard_normal(k) + self.means
        z = rng.standard_normal((size, k))
        return z @ b.T + self.means[None, :]


@dataclass
class NoiseModel:
    n_sites: int
    hamiltonian: list[HamiltonianTerm] = field(default_factory=list)
    couplings: list[CouplingTerm] = field(default_factory=list)
    kernel: KernelSpec | None = None
    ensemble: EnsembleSpec | None = None
    metadata: ModelMetadata = field(default_factory=ModelMetadata)
    geometry: str = "chain"

    def coupling(self, index: int) -> CouplingTerm:
        return next(c for c in self.couplings if c.index == index)

    def coupling_indices(self) -> list[int]:
        return [c.index for c in self.couplings]

    def hamiltonian_coeffs(self) -> np.ndarray:
        return np.array([t.coeff for t in self.hamiltonian])

    def diameter(self, pauli: PauliString) -> int:
        sup = pauli.support()
        if not sup:
            return 0
        if self.geometry != "chain":
            raise NotImplementedError(f"geometry {self.geometry!r}")
        return max(sup) - min(sup)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate(model: NoiseModel) -> list[Violation]:
    """Check structural invariants; empty list means the model is consistent."""
    out: list[Violation] = []
    md = model.metadata

    for t in model.hamiltonian:
        if not np.isfinite(t.coeff):
            out.append(Violation("coeff", f"term {t.index} has non-finite coefficient"))
        if md.k_s and t.pauli.weight() > md.k_s:
            out.append(Violation("support", f"system term {t.index} exceeds k_s={md.k_s}"))
    for c in model.couplings:
        if md.k_se and c.pauli.weight() > md.k_se:
            out.append(Violation("support", f"coupling {c.index} exceeds k_se={md.k_se}"))
        if md.a0 and model.diameter(c.pauli) > md.a0:
            out.append(Violation("diameter", f"coupling {c.index} exceeds a0={md.a0}"))
    if md.d0 > md.d:
        out.append(Violation("metadata", f"d0={md.d0} exceeds d={md.d}"))

    if model.kernel is not None:
        out.extend(_validate_kernel(model))
    if model.ensemble is not None:
        out.extend(_validate_ensemble(model))
    return out


def _validate_kernel(model: NoiseModel) -> list[Violation]:
    out: list[Violation] = []
    spec = model.kernel
    idx = model.coupling_indices()
    md = model.metadata

    if md.s:
        for a in idx:
            n_partners = len(spec.partners(a) & set(idx))
            if n_partners > md.s:
                out.append(Violation("sparsity", f"coupling {a} has {n_partners} partners > s={md.s}"))

    if not spec.is_smooth():
        # One-sided derivatives of a dissipative kernel carry a kink at t=0;
        # two-sided parity constraints do not apply.
        return out

    max_order = 0
    if spec.table is not None:
        max_order = max((m for (_, _, m) in spec.table), default=0)
    tol = 1e-9
    for a, b in spec.nonzero_pairs(idx):
        for m in range(max_order + 1):
            kab = spec.derivative(a, b, m)
            kba = spec.derivative(b, a, m)
            if a == b:
                bad = kab.imag if m % 2 == 0 else kab.real
                if abs(bad) > tol:
                    out.append(
                        Violation("diagonal parity", f"K^({m})_{a},{a} breaks even-real/odd-imaginary parity")
                    )
                continue
            if abs(kab.real - (-1) ** m * kba.real) > tol:
                out.append(Violation("Hermiticity parity", f"Re K^({m})_{a},{b} vs Re K^({m})_{b},{a}"))
            if abs(kab.imag - (-1) ** (m + 1) * kba.imag) > tol:
                out.append(Violation("Hermiticity parity", f"Im K^({m})_{a},{b} vs Im K^({m})_{b},{a}"))
    return out


def _validate_ensemble(model: NoiseModel) -> list[Violation]:
    out: list[Violation] = []
    ens = model.ensemble
    n = len(model.hamiltonian)
    if ens.means.shape != (n,) or ens.covariance.shape != (n, n):
        out.append(Violation("ensemble", "means/covariance shape does not match term count"))
        return out
    if np.any(np.abs(ens.means) > 1 + 1e-12):
        out.append(Violation("ensemble", "|mean| exceeds 1"))
    if np.any(np.diag(ens.covariance) > 1 + 1e-12):
        out.append(Violation("ensemble", "variance exceeds 1"))
    if not np.allclose(ens.covariance, ens.covariance.T, atol=1e-10):
        out.append(Violation("ensemble", "covariance not symmetric"))
    elif np.linalg.eigvalsh(ens.covariance).min() < -1e-10:
        out.append(Violation("ensemble", "covariance not positive semidefinite"))
    return out


# ---------------------------------------------------------------------------
# model files


def _complex_out(z: complex) -> str:
    return repr(complex(z))


def _complex_in(v) -> complex:
    return complex(v) if not isinstance(v, str) else complex(v.replace(" ", ""))


def to_dict(model: NoiseModel) -> dict:
    doc: dict = {
        "schema": MODEL_SCHEMA,
        "n_sites": model.n_sites,
        "geometry": model.geometry,
        "hamiltonian": [
            {"pauli": str(t.pauli), "coeff": float(t.coeff), "label": t.label}
            for t in model.hamiltonian
        ],
        "couplings": [
            {"index": c.index, "pauli": str(c.pauli), "label": c.label}
            for c in model.couplings
        ],
    }
    if model.kernel is not None:
        if model.kernel.modes is not None:
            doc["kernel"] = {
                "modes": [
                    {
                        "epsilon": m.epsilon,
                        "gamma": m.gamma,
                        "couplings": {int(k): _complex_out(v) for k, v in m.couplings.items()},
                    }
                    for m in model.kernel.modes
                ]
            }
        else:
            doc["kernel"] = {
                "table": [
                    {"a": a, "b": b, "m": m, "value": _complex_out(v)}
                    for (a, b, m), v in sorted(model.kernel.table.items())
                ]
            }
    if model.ensemble is not None:
        doc["ensemble"] = {
            "means": model.ensemble.means.tolist(),
            "covariance": model.ensemble.covariance.tolist(),
        }
    md = model.metadata
    doc["metadata"] = {"k_s": md.k_s, "k_se": md.k_se, "d": md.d, "d0": md.d0, "a0": md.a0, "s": md.s}
    return doc


def from_dict(doc: dict) -> NoiseModel:
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    ham = [
        HamiltonianTerm(i, PauliString.parse(t["pauli"]), float(t["coeff"]), t.get("label", ""))
        for i, t in enumerate(doc.get("hamiltonian", []))
    ]
    coup = [
        CouplingTerm(int(c.get("index", i)), PauliString.parse(c["pauli"]), c.get("label", ""))
        for i, c in enumerate(doc.get("couplings", []))
    ]
    kernel = None
    if "kernel" in doc:
        k = doc["kernel"]
        if "modes" in k:
            kernel = KernelSpec(
                modes=[
                    KernelMode(
                        float(m["epsilon"]),
                        float(m["gamma"]),
                        {int(a): _complex_in(v) for a, v in m["couplings"].items()},
                    )
                    for m in k["modes"]
                ]
            )
        else:
            kernel = KernelSpec(
                table={
                    (int(e["a"]), int(e["b"]), int(e["m"])): _complex_in(e["value"])
                    for e in k["table"]
                }
            )
    ensemble = None
    if "ensemble" in doc:
        ensemble = EnsembleSpec(
            np.array(doc["ensemble"]["means"], dtype=float),
            np.array(doc["ensemble"]["covariance"], dtype=float),
        )
    md = doc.get("metadata", {})
    return NoiseModel(
        n_sites=int(doc["n_sites"]),
        hamiltonian=ham,
        couplings=coup,
        kernel=kernel,
        ensemble=ensemble,
        metadata=ModelMetadata(**{k: int(v) for k, v in md.items()}),
        geometry=doc.get("geometry", "chain"),
    )


def save_model(model: NoiseModel, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(model), fh, sort_keys=False)


def load_model(path) -> NoiseModel:
    with open(path) as fh:
        return from_dict(yaml.safe_load(fh))
