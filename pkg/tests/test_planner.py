import itertools

import numpy as np
import pytest

from memkernel.model import CouplingTerm
from memkernel.pauli import PauliString, Region, chi, multiply, support_region
from memkernel.planner import (
    KernelTarget,
    MeasurementSetting,
    WSpec,
    companion_observable,
    conflicting_pairs,
    enlarge_region,
    enumerate_settings,
    lambda_setting,
    max_overlap_degree,
    plan_to_dict,
    schedule,
    select_w,
)

P = PauliString.parse


def couplings_of(*texts):
    return [CouplingTerm(i, P(t)) for i, t in enumerate(texts)]


def oracle_conflicts(a, b, couplings, region=None):
    """Exhaustive check of the two defining conditions over all ordered pairs."""
    paulis = {c.index: c.pauli for c in couplings}
    s = region if region is not None else support_region(paulis[a], paulis[b])
    found = set()
    for c, d in itertools.permutations(paulis, 2):
        if {c, d} & {a, b}:
            continue
        pc, pd = paulis[c], paulis[d]
        same_inside = pc.restrict(s) == paulis[a].restrict(s) and pd.restrict(s) == paulis[b].restrict(s)
        out_c = {(x, ax) for x, ax in pc.sites if x not in s}
        out_d = {(x, ax) for x, ax in pd.sites if x not in s}
        if same_inside and out_c == out_d and out_c:
            found.add((c, d) if a != b or c <= d else (d, c))
    if a == b:
        found = {(c, d) for c, d in found if c <= d}
    return found


# ------------------------------------------------------------- conflicts

def test_conflicting_pairs_two_local_example():
    cs = couplings_of("X1", "X2", "X1 Z3", "X2 Z3")
    got = conflicting_pairs(0, 1, cs)
    assert got == {(2, 3)}
    assert got == oracle_conflicts(0, 1, cs)


def test_single_qubit_couplings_never_conflict():
    cs = couplings_of("X1", "Y1", "Z2", "X3")
    for a, b in itertools.combinations(range(4), 2):
        assert conflicting_pairs(a, b, cs) == set()


def test_disjoint_pair_with_no_other_couplings():
    cs = couplings_of("X1", "Z4")
    assert conflicting_pairs(0, 1, cs) == set()


def test_conflicting_pairs_randomized_against_oracle():
    rng = np.random.default_rng(9)
    axes = "XYZ"
    for _ in range(30):
        cs = []
        for i in range(6):
            sites = rng.choice(6, size=rng.integers(1, 3), replace=False)
            cs.append(
                CouplingTerm(i, PauliString.from_dict({int(s): axes[rng.integers(3)] for s in sites}))
            )
        a, b = rng.integers(0, 6, size=2)
        assert conflicting_pairs(int(a), int(b), cs) == oracle_conflicts(int(a), int(b), cs)


# ------------------------------------------------------------- regions

def test_enlarge_region_fig6_scenario():
    # single-qubit targets; two conflicting 2-local pairs through sites 2 and 3
    cs = couplings_of("X0", "X5", "X0 Z2", "X5 Z2", "X0 Y3", "X5 Y3")
    region = enlarge_region(0, 1, cs)
    assert region.sites == (0, 2, 3, 5)
    assert conflicting_pairs(0, 1, cs, region=region) == set()


def test_enlarge_region_no_conflicts_is_joint_support():
    cs = couplings_of("X0 X1", "Z3")
    assert enlarge_region(0, 1, cs).sites == (0, 1, 3)


def test_enlarge_region_shared_site_greedy():
    # two conflicting pairs whose outside supports share site 4
    cs = couplings_of(
        "X0", "X1", "X0 Z4 Z5", "X1 Z4 Z5", "X0 Y4", "X1 Y4"
    )
    pairs = conflicting_pairs(0, 1, cs)
    assert len(pairs) == 2
    region = enlarge_region(0, 1, cs)
    assert region.sites == (0, 1, 4)  # one shared extra site
    assert conflicting_pairs(0, 1, cs, region=region) == set()


def test_enlargement_kills_conflicts_randomized():
    rng = np.random.default_rng(17)
    axes = "XYZ"
    for _ in range(40):
        cs = []
        for i in range(7):
            sites = rng.choice(8, size=rng.integers(1, 4), replace=False)
            cs.append(
                CouplingTerm(i, PauliString.from_dict({int(s): axes[rng.integers(3)] for s in sites}))
            )
        a, b = int(rng.integers(7)), int(rng.integers(7))
        region = enlarge_region(a, b, cs)
        assert conflicting_pairs(a, b, cs, region=region) == set()


# ------------------------------------------------------------- gate choice

def test_select_w_even_order_is_identity():
    cs = couplings_of("X1", "X2")
    assert select_w(0, 1, 0, cs).is_identity()
    assert select_w(0, 1, 2, cs).is_identity()


def test_select_w_case2_site_rule():
    cs = couplings_of("X1 X2", "X1 Z2")
    w = select_w(0, 1, 1, cs)
    assert w.kind == "pauli" and w.pauli == P("Z2")
    # anticommutes with exactly one of the pair
    assert chi(w.pauli, P("X1 X2")) + chi(w.pauli, P("X1 Z2")) == 1
    # and with the product
    assert chi(w.pauli, multiply(P("X1 X2"), P("X1 Z2")).phaseless()) == 1


def test_select_w_case2_randomized_invariant():
    rng = np.random.default_rng(23)
    axes = "XYZ"
    for _ in range(50):
        pa = PauliString.from_dict(
            {int(s): axes[rng.integers(3)] for s in rng.choice(5, size=rng.integers(1, 4), replace=False)}
        )
        pb = PauliString.from_dict(
            {int(s): axes[rng.integers(3)] for s in rng.choice(5, size=rng.integers(1, 4), replace=False)}
        )
        if pa == pb:
            continue
        cs = [CouplingTerm(0, pa), CouplingTerm(1, pb)]
        w = select_w(0, 1, 3, cs)
        assert chi(w.pauli, pa) + chi(w.pauli, pb) == 1


def test_select_w_case3_sh_on_support():
    cs = couplings_of("Z5")
    w = select_w(0, 0, 1, cs)
    assert w.kind == "sh" and w.site == 5


# ------------------------------------------------------------- settings

def test_enumerate_settings_counts_and_coverage():
    cs = couplings_of("X0", "X1")
    region = Region.of(0, 1)
    settings = enumerate_settings(region, [KernelTarget(0, 1, (0, 1))], cs)
    by_w = {}
    for s in settings:
        by_w.setdefault(s.w.describe(), []).append(s)
    assert len(by_w) == 2  # identity and one Pauli variant
    for group in by_w.values():
        assert len(group) == 9  # 3^2 bases
        hosted = [t.p_in for s in group for t in s.traces]
        assert len(hosted) == 16  # all 4^2 inputs, each exactly once
        assert len(set(map(str, hosted))) == 16
        for s in group:
            for t in s.traces:
                # companion observable matches (P_e alpha P_f)^dag up to phase
                expect = companion_observable(P("X0"), t.p_in, P("X1"))
                assert t.p_out == expect


def test_case3_settings_conjugate_input():
    cs = couplings_of("X0")
    region = Region.of(0)
    settings = enumerate_settings(region, [KernelTarget(0, 0, (1,))], cs)
    sh = [s for s in settings if s.w.kind == "sh"]
    assert sh and all(s.conjugate_input for s in sh)
    ident = [s for s in settings if s.w.is_identity()]
    assert ident and not any(s.conjugate_input for s in ident)


def test_enumerate_settings_empty_targets():
    assert enumerate_settings(Region.of(0), [], couplings_of("X0")) == []


def test_lambda_setting_scale():
    st = lambda_setting(0, P("Z0"))
    # P_I = X0, O = 2i Z0 X0 = -2 Y0
    assert st.traces[0].p_in == P("X0")
    assert st.traces[0].p_out == P("Y0")
    assert st.lambda_scale == -2.0


# ------------------------------------------------------------- scheduling

def _dummy_setting(sid, region):
    return MeasurementSetting(
        sid=sid,
        region=region,
        basis=PauliString.from_dict({s: "X" for s in region.sites}),
        w=WSpec.identity(),
        target=("t", 0),
        traces=[],
    )


def test_schedule_disjoint_regions_one_round():
    settings = [_dummy_setting(f"s{i}", Region.of(2 * i, 2 * i + 1)) for i in range(5)]
    sched = schedule(settings)
    assert sched.n_rounds() == 1


def test_schedule_path_graph_two_rounds():
    regions = [Region.of(i, i + 1) for i in range(6)]
    settings = [_dummy_setting(f"s{i}", r) for i, r in enumerate(regions)]
    sched = schedule(settings)
    assert sched.n_rounds() == 2
    for rnd in sched.rounds:
        for (r1, _), (r2, _) in itertools.combinations(rnd, 2):
            assert not r1.overlaps(r2)


def test_schedule_round_count_independent_of_chain_length():
    counts = set()
    for n in (20, 40, 80):
        regions = [Region.of(i, i + 1, i + 2) for i in range(n - 2)]
        settings = [_dummy_setting(f"s{i}", r) for i, r in enumerate(regions)]
        sched = schedule(settings)
        counts.add(sched.n_rounds())
        assert sched.n_rounds() <= max_overlap_degree(regions) + 1
    assert len(counts) == 1


def test_plan_export_is_deterministic():
    cs = couplings_of("X0", "X1")
    settings = enumerate_settings(Region.of(0, 1), [KernelTarget(0, 1, (0,))], cs)
    sched = schedule(settings)
    d1 = plan_to_dict(settings, sched)
    d2 = plan_to_dict(
        enumerate_settings(Region.of(0, 1), [KernelTarget(0, 1, (0,))], cs), schedule(settings)
    )
    assert d1 == d2
