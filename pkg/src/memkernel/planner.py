"""Experiment planning: tomography regions, gate choices, settings, rounds.

For a kernel pair (a, b) the joint support is enlarged until no other
coupling pair is indistinguishable from it by tomography on the region; the
target coefficients are then reachable through at most 3^|region| basis
settings per intermediate-gate choice, and non-overlapping regions are
measured simultaneously via greedy graph coloring.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .model import NoiseModel
from .pauli import AXES, PauliString, Region, chi, multiply, sh_conjugate, support_region


@dataclass(frozen=True)
class WSpec:
    kind: str = "identity"  # identity | pauli | sh
    pauli: PauliString | None = None
    site: int | None = None

    @staticmethod
    def identity() -> "WSpec":
        return WSpec()

    @staticmethod
    def single_pauli(site: int, axis: str) -> "WSpec":
        return WSpec("pauli", PauliString.single(site, axis), site)

    @staticmethod
    def sh(site: int) -> "WSpec":
        return WSpec("sh", None, site)

    def is_identity(self) -> bool:
        return self.kind == "identity"

    def conjugate(self, p: PauliString, inverse: bool = False) -> PauliString:
        """W p W^dag (or W^dag p W with inverse=True)."""
        if self.kind == "identity":
            return p
        if self.kind == "pauli":
            return p.with_phase(p.phase_power + 2 * chi(p, self.pauli))
        return sh_conjugate(p, self.site, inverse=inverse)

    def describe(self) -> str:
        if self.kind == "identity":
            return "1"
        if self.kind == "pauli":
            return f"P({self.pauli})"
        return f"SH@{self.site}"


@dataclass(frozen=True)
class TraceRequest:
    p_in: PauliString  # phaseless sub-Pauli prepared in this basis
    p_out: PauliString  # phaseless observable

    def trace_id(self) -> str:
        return f"{self.p_in}>{self.p_out}"


@dataclass
class MeasurementSetting:
    sid: str
    region: Region
    basis: PauliString  # full-weight input basis on the region
    w: WSpec
    target: tuple
    m_range: tuple[int, ...] = ()
    conjugate_input: bool = False
    traces: list[TraceRequest] = field(default_factory=list)
    lambda_scale: float = 1.0

    def __post_init__(self):
        reg = set(self.region.sites)
        for tr in self.traces:
            if not set(tr.p_in.support()) <= reg or not set(tr.p_out.support()) <= reg:
                raise ValueError("trace support leaks outside the region")


@dataclass
class RoundSchedule:
    rounds: list[list[tuple[Region, list[MeasurementSetting]]]]

    def n_rounds(self) -> int:
        return len(self.rounds)


# ---------------------------------------------------------------------------
# regions


def conflicting_pairs(a: int, b: int, couplings, region: Region | None = None) -> set[tuple[int, int]]:
    """Coupling pairs (c, d) that mimic (a, b) on the tomography region.

    c matches P_a and d matches P_b on the region (default: the joint support
    of P_a and P_b), while c and d agree with each other (non-trivially)
    outside it.
    """
    paulis = {c.index: c.pauli for c in couplings}
    pa, pb = paulis[a], paulis[b]
    s = support_region(pa, pb) if region is None else region
    out: set[tuple[int, int]] = set()
    for c, d in itertools.permutations(paulis, 2):
        if {c, d} & {a, b}:
            continue
        pc, pd = paulis[c], paulis[d]
        if pc.restrict(s) != pa.restrict(s) or pd.restrict(s) != pb.restrict(s):
            continue
        coutside = {(st, ax) for st, ax in pc.sites if st not in s}
        doutside = {(st, ax) for st, ax in pd.sites if st not in s}
        if coutside and coutside == doutside:
            out.add((c, d))
    if a == b:
        # both orders satisfy the symmetric conditions; keep unordered pairs
        out = {(c, d) for c, d in out if c <= d}
    return out


def enlarge_region(a: int, b: int, couplings) -> Region:
    """I_{a,b}: joint support plus one site per conflicting pair, sites reused
    greedily (most pairs covered first, lowest index on ties)."""
    paulis = {c.index: c.pauli for c in couplings}
    s = support_region(paulis[a], paulis[b])
    pairs = conflicting_pairs(a, b, couplings)
    uncovered = []
    for c, d in pairs:
        outside = tuple(st for st in paulis[c].support() if st not in s)
        uncovered.append(frozenset(outside))
    extra: list[int] = []
    while uncovered:
        counts: dict[int, int] = {}
        for sites in uncovered:
            for st in sites:
                counts[st] = counts.get(st, 0) + 1
        best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        extra.append(best)
        uncovered = [ss for ss in uncovered if best not in ss]
    return s.union(Region(tuple(extra)))


# ---------------------------------------------------------------------------
# gate selection


def select_w(a: int, b: int, m: int, couplings) -> WSpec:
    """Intermediate gate for learning order-(m-2) coefficients of pair (a, b)."""
    if m % 2 == 0:
        return WSpec.identity()
    paulis = {c.index: c.pauli for c in couplings}
    pa, pb = paulis[a], paulis[b]
    if a == b:
        if not pa.support():
            raise ValueError("diagonal target needs a non-trivial support")
        return WSpec.sh(min(pa.support()))
    axes_a, axes_b = pa.axes, pb.axes
    for site in sorted(set(axes_a) | set(axes_b)):
        ax_a, ax_b = axes_a.get(site), axes_b.get(site)
        if ax_a == ax_b:
            continue
        if ax_a is not None and ax_b is not None:
            axis = ax_b  # anticommutes with P_a, commutes with P_b
        elif ax_b is None:
            axis = next(x for x in AXES if x != ax_a)
        else:
            axis = next(x for x in AXES if x != ax_b)
        w = WSpec.single_pauli(site, axis)
        assert chi(w.pauli, pa) + chi(w.pauli, pb) == 1
        return w
    raise ValueError(f"couplings {a} and {b} have identical strings")


def slot_pair(a: int, b: int, w: WSpec, couplings) -> tuple[PauliString, PauliString]:
    """The sandwich slot (P, Q) whose coefficient carries K_{a,b}.

    couplings may be a term list or a plain index -> PauliString mapping.
    """
    if isinstance(couplings, dict):
        paulis = couplings
    else:
        paulis = {c.index: c.pauli for c in couplings}
    pa, pb = paulis[a], paulis[b]
    if w.kind == "sh":
        return pa, w.conjugate(pa)
    return pa, pb


# ---------------------------------------------------------------------------
# settings


def _basis_paulis(region: Region):
    for combo in itertools.product(AXES, repeat=len(region)):
        yield PauliString.from_dict(dict(zip(region.sites, combo)))


def _hosted_inputs(basis: PauliString):
    """Sub-Paulis canonically owned by this basis: drop subsets of its X sites."""
    x_sites = [s for s, ax in basis.sites if ax == "X"]
    axes = basis.axes
    for r in range(len(x_sites) + 1):
        for drop in itertools.combinations(x_sites, r):
            kept = {s: ax for s, ax in axes.items() if s not in drop}
            yield PauliString.from_dict(kept)


def companion_observable(p_e: PauliString, alpha: PauliString, p_f: PauliString) -> PauliString:
    """Phaseless P_O with P_O proportional to (P_e alpha P_f)^dag."""
    return multiply(multiply(p_e, alpha), p_f).adjoint().phaseless()


@dataclass(frozen=True)
class KernelTarget:
    a: int
    b: int
    orders: tuple[int, ...]  # kernel derivative orders to learn


def enumerate_settings(region: Region, targets, couplings, sid_prefix="k") -> list[MeasurementSetting]:
    """Tomography settings on one region: per target at most two gate variants,
    3^|region| bases each, with the companion observables attached."""
    settings: list[MeasurementSetting] = []
    for tgt in targets:
        # two gate variants per kernel: identity plus the odd-order choice
        variants = [WSpec.identity(), select_w(tgt.a, tgt.b, 3, couplings)]
        seen = set()
        for w in variants:
            key = w.describe()
            if key in seen:
                continue
            seen.add(key)
            p_e, p_f = slot_pair(tgt.a, tgt.b, w, couplings)
            conjugate_input = w.kind == "sh"
            for bi, basis in enumerate(_basis_paulis(region)):
                traces = [
                    TraceRequest(alpha, companion_observable(p_e, alpha, p_f))
                    for alpha in _hosted_inputs(basis)
                ]
                settings.append(
                    MeasurementSetting(
                        sid=f"{sid_prefix}{tgt.a}-{tgt.b}/{key}/b{bi}",
                        region=region,
                        basis=basis,
                        w=w,
                        target=(tgt.a, tgt.b),
                        m_range=tuple(m + 2 for m in tgt.orders),
                        conjugate_input=conjugate_input,
                        traces=traces,
                    )
                )
    return settings


def lambda_setting(term_index: int, pauli: PauliString, sid_prefix="lam") -> MeasurementSetting:
    """Canonical Hamiltonian-coefficient setting: single-site anticommuting input,
    observable 2i P_a P_I, identity gate."""
    site = min(pauli.support())
    axis = next(x for x in AXES if x != pauli.axis_at(site))
    p_in = PauliString.single(site, axis)
    o_full = multiply(pauli, p_in)
    sign_power = (o_full.phase_power + 1) % 4  # phase of i * P_a P_I
    assert sign_power in (0, 2)
    scale = 2.0 if sign_power == 0 else -2.0
    p_out = o_full.phaseless()
    region = support_region(pauli, p_in)
    return MeasurementSetting(
        sid=f"{sid_prefix}{term_index}",
        region=region,
        basis=p_in if p_in.weight() == len(region) else _extend_basis(p_in, region),
        w=WSpec.identity(),
        target=("lambda", term_index),
        m_range=(1,),
        traces=[TraceRequest(p_in, p_out)],
        lambda_scale=scale,
    )


def _extend_basis(p: PauliString, region: Region) -> PauliString:
    axes = p.axes
    for s in region.sites:
        axes.setdefault(s, "X")
    return PauliString.from_dict(axes)


# ---------------------------------------------------------------------------
# scheduling


def schedule(settings: list[MeasurementSetting]) -> RoundSchedule:
    """Greedy coloring of the region-overlap graph; one round per color."""
    groups: dict[tuple, list[MeasurementSetting]] = {}
    regions: dict[tuple, Region] = {}
    for st in settings:
        key = st.region.sites
        groups.setdefault(key, []).append(st)
        regions[key] = st.region
    keys = list(groups)
    adj = {k: set() for k in keys}
    for k1, k2 in itertools.combinations(keys, 2):
        if regions[k1].overlaps(regions[k2]):
            adj[k1].add(k2)
            adj[k2].add(k1)
    order = sorted(keys, key=lambda k: (-len(adj[k]), k))
    color: dict[tuple, int] = {}
    for k in order:
        used = {color[n] for n in adj[k] if n in color}
        c = 0
        while c in used:
            c += 1
        color[k] = c
    n_rounds = max(color.values()) + 1 if color else 0
    rounds = [[] for _ in range(n_rounds)]
    for k in keys:
        rounds[color[k]].append((regions[k], groups[k]))
    for rnd in rounds:
        rnd.sort(key=lambda pair: pair[0].sites)
    return RoundSchedule(rounds)


def max_overlap_degree(regions: list[Region]) -> int:
    return max(
        (sum(1 for r2 in regions if r2 is not r1 and r1.overlaps(r2)) for r1 in regions),
        default=0,
    )


# ---------------------------------------------------------------------------
# plan documents


def plan_to_dict(settings: list[MeasurementSetting], sched: RoundSchedule) -> dict:
    return {
        "schema": "memkernel-plan/1",
        "settings": [
            {
                "sid": s.sid,
                "region": list(s.region.sites),
                "basis": str(s.basis),
                "w": s.w.describe(),
                "target": list(s.target),
                "m_range": list(s.m_range),
                "conjugate_input": s.conjugate_input,
                "lambda_scale": s.lambda_scale,
                "traces": [{"in": str(t.p_in), "out": str(t.p_out)} for t in s.traces],
            }
            for s in settings
        ],
        "rounds": [
            [{"region": list(r.sites), "sids": [s.sid for s in group]} for r, group in rnd]
            for rnd in sched.rounds
        ],
    }


def plan_to_json(settings, sched) -> str:
    return json.dumps(plan_to_dict(settings, sched), indent=2, sort_keys=True)
