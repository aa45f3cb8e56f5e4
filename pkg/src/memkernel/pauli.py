"""Exact Pauli-string algebra with integer phase tracking.

Strings are sparse maps site -> axis with a global phase i**k carried as an
integer mod 4, so products and traces are exact (no floating point in the
group algebra).  Text form is "X1 Z3" style; the empty string is "I".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping

import numpy as np

AXES = ("X", "Y", "Z")

# sigma_a . sigma_b = table[(a,b)] = (phase_power, axis_or_None)
_MUL = {
    ("X", "X"): (0, None), ("Y", "Y"): (0, None), ("Z", "Z"): (0, None),
    ("X", "Y"): (1, "Z"), ("Y", "Z"): (1, "X"), ("Z", "X"): (1, "Y"),
    ("Y", "X"): (3, "Z"), ("Z", "Y"): (3, "X"), ("X", "Z"): (3, "Y"),
}

_DENSE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# SH = S.H conjugation cycles non-identity Paulis without a phase:
# X -> Z -> Y -> X  (forward), X -> Y -> Z -> X (inverse).
_SH_FWD = {"X": "Z", "Z": "Y", "Y": "X"}
_SH_INV = {"X": "Y", "Y": "Z", "Z": "X"}

_TOKEN = re.compile(r"([XYZ])(\d+)$")


@dataclass(frozen=True)
class PauliString:
    """A phased Pauli string i**phase_power * prod_s sigma_{axis(s)}(s)."""

    sites: tuple[tuple[int, str], ...] = ()
    phase_power: int = 0

    def __post_init__(self):
        sites = tuple(sorted((int(s), a) for s, a in self.sites))
        for s, a in sites:
            if s < 0 or a not in AXES:
                raise ValueError(f"bad site entry ({s}, {a})")
        if len({s for s, _ in sites}) != len(sites):
            raise ValueError("duplicate site in Pauli string")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "phase_power", self.phase_power % 4)

    # -- constructors -------------------------------------------------

    @staticmethod
    def from_dict(axes: Mapping[int, str], phase_power: int = 0) -> "PauliString":
        return PauliString(tuple(axes.items()), phase_power)

    @staticmethod
    def identity() -> "PauliString":
        return PauliString()

    @staticmethod
    def single(site: int, axis: str) -> "PauliString":
        return PauliString(((site, axis),))

    # -- basic queries -------------------------------------------------

    @property
    def axes(self) -> dict[int, str]:
        return dict(self.sites)

    def support(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.sites)

    def weight(self) -> int:
        return len(self.sites)

    def is_identity(self) -> bool:
        return not self.sites

    def phase(self) -> complex:
        return 1j ** self.phase_power

    def is_hermitian(self) -> bool:
        return self.phase_power % 2 == 0

    def axis_at(self, site: int) -> str | None:
        return self.axes.get(site)

    def phaseless(self) -> "PauliString":
        return PauliString(self.sites, 0)

    def adjoint(self) -> "PauliString":
        return PauliString(self.sites, -self.phase_power)

    def with_phase(self, phase_power: int) -> "PauliString":
        return PauliString(self.sites, phase_power)

    def restrict(self, region: Iterable[int]) -> "PauliString":
        keep = set(region)
        return PauliString(tuple((s, a) for s, a in self.sites if s in keep), 0)

    # -- text form -----------------------------------------------------

    def __str__(self) -> str:
        prefix = {0: "", 1: "i ", 2: "- ", 3: "-i "}[self.phase_power]
        body = " ".join(f"{a}{s}" for s, a in self.sites) or "I"
        return prefix + body

    @staticmethod
    def parse(text: str) -> "PauliString":
        """Parse "X1 Z3" style text; optional leading +, -, i, -i, +i."""
        toks = text.split()
        phase = 0
        if toks and toks[0] in {"+", "-", "i", "+i", "-i"}:
            phase = {"+": 0, "-": 2, "i": 1, "+i": 1, "-i": 3}[toks.pop(0)]
        axes: dict[int, str] = {}
        for tok in toks:
            if tok == "I":
                continue
            m = _TOKEN.match(tok)
            if not m:
                raise ValueError(f"bad Pauli token {tok!r} in {text!r}")
            site = int(m.group(2))
            if site in axes:
                raise ValueError(f"site {site} repeated in {text!r}")
            axes[site] = m.group(1)
        return PauliString.from_dict(axes, phase)

    # -- algebra --------------------------------------------------------

    def __mul__(self, other: "PauliString") -> "PauliString":
        return multiply(self, other)

    def dense(self, n_qubits: int) -> np.ndarray:
        """Dense 2^n x 2^n matrix, site 0 as the leftmost tensor factor."""
        if self.sites and self.sites[-1][0] >= n_qubits:
            raise ValueError("string extends past n_qubits")
        axes = self.axes
        mats = [_DENSE[axes.get(s, "I")] for s in range(n_qubits)]
        out = reduce(np.kron, mats, np.eye(1, dtype=complex))
        return self.phase() * out


def multiply(p: PauliString, q: PauliString) -> PauliString:
    """Exact operator product p.q with the phase tracked mod 4."""
    phase = p.phase_power + q.phase_power
    axes = dict(p.sites)
    for s, b in q.sites:
        a = axes.pop(s, None)
        if a is None:
            axes[s] = b
            continue
        k, c = _MUL[(a, b)]
        phase += k
        if c is not None:
            axes[s] = c
    return PauliString.from_dict(axes, phase)


def multiply_all(ops: Iterable[PauliString]) -> PauliString:
    out = PauliString.identity()
    for op in ops:
        out = multiply(out, op)
    return out


def chi(p: PauliString, q: PauliString) -> int:
    """0 if p and q commute, 1 if they anticommute."""
    qa = q.axes
    clashes = sum(1 for s, a in p.sites if s in qa and qa[s] != a)
    return clashes % 2


def commutes(p: PauliString, q: PauliString) -> bool:
    return chi(p, q) == 0


def normalized_trace(monomial: Iterable[PauliString], n_qubits: int | None = None) -> complex:
    """Tr(prod)/2^n: the tracked phase if the product is a phased identity, else 0."""
    prod = multiply_all(monomial)
    if n_qubits is not None and prod.sites and prod.sites[-1][0] >= n_qubits:
        raise ValueError("monomial extends past n_qubits")
    return prod.phase() if prod.is_identity() else 0.0


def conjugate_by_pauli(p: PauliString, w: PauliString) -> PauliString:
    """w p w^dagger for a Hermitian Pauli w: just a sign (-1)^chi(p, w)."""
    return p.with_phase(p.phase_power + 2 * chi(p, w))


def sh_conjugate(p: PauliString, site: int, inverse: bool = False) -> PauliString:
    """Conjugate by the single-qubit Clifford S.H acting on `site` (phase free)."""
    cycle = _SH_INV if inverse else _SH_FWD
    axes = p.axes
    if site in axes:
        axes[site] = cycle[axes[site]]
    return PauliString.from_dict(axes, p.phase_power)


def commutator(p: PauliString, q: PauliString) -> PauliString | None:
    """[p, q] as 2pq when they anticommute, None (zero) otherwise."""
    if chi(p, q) == 0:
        return None
    pq = multiply(p, q)
    return pq.with_phase(pq.phase_power)  # caller applies the factor 2


@dataclass(frozen=True)
class Region:
    """An ordered, deduplicated set of lattice sites."""

    sites: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(sorted(set(int(s) for s in self.sites))))

    @staticmethod
    def of(*sites: int) -> "Region":
        return Region(tuple(sites))

    def __contains__(self, site: int) -> bool:
        return site in set(self.sites)

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def union(self, other: "Region") -> "Region":
        return Region(self.sites + other.sites)

    def intersection(self, other: "Region") -> "Region":
        o = set(other.sites)
        return Region(tuple(s for s in self.sites if s in o))

    def difference(self, other: "Region") -> "Region":
        o = set(other.sites)
        return Region(tuple(s for s in self.sites if s not in o))

    def complement(self, lattice_size: int) -> "Region":
        o = set(self.sites)
        return Region(tuple(s for s in range(lattice_size) if s not in o))

    def overlaps(self, other: "Region") -> bool:
        return bool(set(self.sites) & set(other.sites))

    def __str__(self) -> str:
        return "{" + ", ".join(map(str, self.sites)) + "}"


def support_region(*ops: PauliString) -> Region:
    sites: list[int] = []
    for op in ops:
        sites.extend(op.support())
    return Region(tuple(sites))


def region_paulis(region: Region, include_identity: bool = True):
    """All phaseless Pauli strings supported inside `region` (4^|region| of them)."""
    out: list[PauliString] = []
    sites = region.sites
    n = len(sites)
    for code in range(4**n):
        axes = {}
        c = code
        for s in sites:
            c, r = divmod(c, 4)
            if r:
                axes[s] = AXES[r - 1]
        p = PauliString.from_dict(axes)
        if include_identity or not p.is_identity():
            out.append(p)
    return out
