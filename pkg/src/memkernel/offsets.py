"""Offsets subtracted from trace derivatives before kernel inversion.

The m-th derivative of a measured trace splits into a part linear in the
kernel derivatives of order m-2 and an offset built from lower orders: the
closed double-commutator term at m = 2, and for m >= 3 the order-n >= 3 terms
of the expansion of the two-segment channel.  Each order-n term is a sum over
ordered tuples of Hamiltonian/coupling insertions, sandwich splits around the
input, Wick pairings of the environment slots, and exact simplex integrals of
kernel Taylor monomials; the kernel factors are tabulated one-sided
derivatives, with negative time arguments folded back through
K_{ab}(-t) = conj(K_{ba}(t)).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb, factorial

import numpy as np

from .pauli import PauliString, chi, multiply, multiply_all, normalized_trace, sh_conjugate

# ---------------------------------------------------------------------------
# exact simplex integrals


def nested_integral(d, t: float) -> float:
    """I_n(d, t) = int_0^t dt_1 ... int_0^{t_{n-1}} dt_n  prod t_s^{d_s}."""
    d = list(d)
    if any(x < 0 for x in d):
        raise ValueError("exponents must be non-negative")
    coeff = Fraction(1)
    for r in range(1, len(d) + 1):
        coeff /= r + sum(d[len(d) - r:])
    return float(coeff) * t ** (len(d) + sum(d))


def _nested_coeff(d) -> Fraction:
    """Coefficient of t^{n+||d||} in I_n(d, t)."""
    out = Fraction(1)
    n = len(d)
    for r in range(1, n + 1):
        out /= r + sum(d[n - r:])
    return out


def split_integral_derivative(d_upper, d_lower, m: int) -> Fraction:
    """d^m/dt^m at 0 of the two-block simplex integral of prod t_i^{d_i}.

    The first block of len(d_upper) nested variables runs over [t, 2t], the
    remaining len(d_lower) over [0, t]; with no upper block this is I_n(d, t).
    Nonzero only when m equals the total degree n + ||d||.
    """
    d_upper, d_lower = list(d_upper), list(d_lower)
    n = len(d_upper) + len(d_lower)
    if m != n + sum(d_upper) + sum(d_lower):
        return Fraction(0)
    low = _nested_coeff(d_lower)
    total = Fraction(0)
    for w in itertools.product(*(range(di + 1) for di in d_upper)):
        term = _nested_coeff(list(w))
        for di, wi in zip(d_upper, w):
            term *= comb(di, wi)
        total += term
    return factorial(m) * low * total


def full_simplex_derivative(d, m: int) -> Fraction:
    """d^m/dt^m at 0 of I_n(d, 2t): the W = identity (single segment of 2t) case."""
    d = list(d)
    if m != len(d) + sum(d):
        return Fraction(0)
    return factorial(m) * _nested_coeff(d) * 2**m


def integral_coefficient(z, slots, n: int, l: int, m: int) -> float:
    """Exact v^{z,s}: m-th derivative at 0 of the split integral of Taylor monomials.

    `slots` pairs (alpha_i, beta_i) of 0-based time-slot indices (slot 0 is the
    latest time; the first l slots live in [t, 2t]) and the i-th factor is
    (t_alpha - t_beta)^{z_i} / z_i!.
    """
    z = list(z)
    if len(z) != len(slots):
        raise ValueError("one exponent per slot pair")
    if sum(z) != m - n:
        return 0.0
    total = Fraction(0)
    for j in itertools.product(*(range(zi + 1) for zi in z)):
        d = [0] * n
        coeff = Fraction(1)
        for (alpha, beta), zi, ji in zip(slots, z, j):
            coeff *= Fraction(comb(zi, ji) * (-1) ** (zi - ji), factorial(zi))
            d[alpha] += ji
            d[beta] += zi - ji
        total += coeff * split_integral_derivative(d[:l], d[l:], m)
    return float(total)


# ---------------------------------------------------------------------------
# Wick pairings


def wick_pairings(n_slots: int):
    """All perfect matchings of {0..n_slots-1} as tuples of (i, j), i < j."""
    if n_slots % 2:
        return
    if n_slots == 0:
        yield ()
        return
    rest = list(range(1, n_slots))
    for k, j in enumerate(rest):
        others = rest[:k] + rest[k + 1:]
        for sub in _pairings_of(others):
            yield ((0, j),) + sub


def _pairings_of(items):
    if not items:
        yield ()
        return
    first = items[0]
    for k in range(1, len(items)):
        j = items[k]
        rest = items[1:k] + items[k + 1:]
        for sub in _pairings_of(rest):
            yield ((first, j),) + sub


def wick_pairings_sparse(slot_coupling, allowed_pair) -> list:
    """Perfect matchings built recursively, skipping pairs with no kernel.

    Equivalent to filtering `wick_pairings` by `allowed_pair`; the recursion
    visits only branches with nonzero kernels (Gaussian integration by parts).
    """
    slots = list(range(len(slot_coupling)))

    def rec(remaining):
        if not remaining:
            yield ()
            return
        first = remaining[0]
        for k in range(1, len(remaining)):
            j = remaining[k]
            if not allowed_pair(slot_coupling[first], slot_coupling[j]):
                continue
            rest = remaining[1:k] + remaining[k + 1:]
            for sub in rec(rest):
                yield ((first, j),) + sub

    return list(rec(slots))


# ---------------------------------------------------------------------------
# engine terms


@dataclass(frozen=True)
class EngineTerm:
    pauli: PauliString
    lam: float = 0.0  # system coefficient
    coupling: int | None = None  # coupling index when this is an environment term

    @property
    def is_env(self) -> bool:
        return self.coupling is not None


class KernelEstimates:
    """One-sided derivative table K^(z)_{a,b}(0); missing entries are zero."""

    def __init__(self, table: dict[tuple[int, int, int], complex]):
        self.table = dict(table)
        self._pairs = {(a, b) for (a, b, _), v in self.table.items() if v != 0}

    def value(self, a: int, b: int, z: int) -> complex:
        return self.table.get((a, b, z), 0.0)

    def pair_active(self, a: int, b: int) -> bool:
        return (a, b) in self._pairs or (b, a) in self._pairs


# ---------------------------------------------------------------------------
# offsets


def offset_m2(p_out: PauliString, p_in: PauliString, terms, w=None) -> float:
    """Second-derivative offset from the system Hamiltonian alone.

    For W = identity this is -(4/2^N) Tr(P_O [H_S, [H_S, P_I]]); with a mid
    gate the three segment placements weight the double commutator as
    (1, 2, 1) with the gate conjugations applied where they act.
    """
    items = [(t.pauli, t.lam) if isinstance(t, EngineTerm) else tuple(t) for t in terms]
    identity_w = w is None or getattr(w, "kind", "identity") == "identity"
    total = 0j
    if identity_w:
        for pa, la in items:
            if la == 0:
                continue
            for pb, lb in items:
                for seq, sign in _double_commutator_terms(pa, pb, p_in):
                    total += la * lb * sign * normalized_trace([p_out, seq])
        return _require_real(-4.0 * total)

    def cw(p):  # W (.) W^dag
        return _conjugate_by_w(p, w)

    def cw_inv(p):  # W^dag (.) W
        if w.kind == "pauli":
            return _conjugate_by_w(p, w)
        return sh_conjugate(p, w.site, inverse=True)

    for pa, la in items:
        if la == 0:
            continue
        for pb, lb in items:
            if lb == 0:
                continue
            contrib = 0j
            # segment [0,t]: W wraps the whole commutator; fold W onto P_O
            po_w = cw_inv(p_out)
            for seq, sign in _double_commutator_terms(pa, pb, p_in):
                contrib += sign * normalized_trace([po_w, seq])
            # straddling segments: [P_a, W [P_b, P_I] W^dag], weight 2
            left = cw_inv(multiply(p_out, pa))
            right = cw_inv(multiply(pa, p_out))
            for x, y, sign in (
                (pb, p_in, 1.0),
                (p_in, pb, -1.0),
            ):
                contrib += 2 * sign * normalized_trace([left, x, y])
                contrib -= 2 * sign * normalized_trace([right, x, y])
            # segment [t,2t]: only the input is conjugated
            x_tilde = cw(p_in)
            for seq, sign in _double_commutator_terms(pa, pb, x_tilde):
                contrib += sign * normalized_trace([p_out, seq])
            total += la * lb * contrib
    return _require_real(-1.0 * total)


def _require_real(z: complex) -> float:
    if abs(z.imag) > 1e-9:
        raise ArithmeticError(f"offset came out complex ({z.imag:.2e})")
    return float(z.real)


def _double_commutator_terms(pa, pb, x):
    yield multiply_all([pa, pb, x]), 1.0
    yield multiply_all([pa, x, pb]), -1.0
    yield multiply_all([pb, x, pa]), -1.0
    yield multiply_all([x, pb, pa]), 1.0


def _content_key(paulis) -> tuple:
    """Order-independent phaseless content of a product of Pauli strings."""
    prod = multiply_all(paulis)
    return prod.sites


def _observable_neighborhood(terms, p_out, estimates: KernelEstimates, depth: int):
    """Terms within `depth` interaction-graph steps of the observable.

    A contributing tuple must be connected to P_O through anticommutation or
    active kernel pairs, so anything farther than the tuple length never
    enters; this keeps the enumeration local on large lattices.
    """

    def linked(t1: EngineTerm, t2: EngineTerm) -> bool:
        if chi(t1.pauli, t2.pauli) == 1:
            return True
        return t1.is_env and t2.is_env and estimates.pair_active(t1.coupling, t2.coupling)

    current = [t for t in terms if chi(t.pauli, p_out) == 1]
    seen = set(id(t) for t in current)
    for _ in range(depth - 1):
        grown = False
        for t in terms:
            if id(t) in seen:
                continue
            if any(linked(t, s) for s in current):
                seen.add(id(t))
                current.append(t)
                grown = True
        if not grown:
            break
    return [t for t in terms if id(t) in seen]


def _connected_to_observable(tuple_terms, p_out, estimates: KernelEstimates) -> bool:
    n = len(tuple_terms)
    adj = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            ti, tj = tuple_terms[i], tuple_terms[j]
            linked = chi(ti.pauli, tj.pauli) == 1
            if not linked and ti.is_env and tj.is_env:
                linked = estimates.pair_active(ti.coupling, tj.coupling)
            adj[i][j] = adj[j][i] = linked
    seen = [chi(t.pauli, p_out) == 1 for t in tuple_terms]
    frontier = [i for i, s in enumerate(seen) if s]
    while frontier:
        i = frontier.pop()
        for j in range(n):
            if adj[i][j] and not seen[j]:
                seen[j] = True
                frontier.append(j)
    return all(seen)


def _sandwich_splits(n: int):
    """Left-index subsets; lefts multiply ascending, rights descending."""
    for mask in range(2**n):
        lefts = [i for i in range(n) if (mask >> i) & 1]
        rights = [i for i in range(n) if not (mask >> i) & 1][::-1]
        yield lefts, rights


def _conjugate_by_w(p: PauliString, w) -> PauliString:
    if w is None or getattr(w, "kind", "identity") == "identity":
        return p
    if w.kind == "pauli":
        return p.with_phase(p.phase_power + 2 * chi(p, w.pauli))
    if w.kind == "sh":
        return sh_conjugate(p, w.site)
    raise ValueError(f"unknown W {w!r}")


def offset_value(
    m: int,
    w,
    p_out: PauliString,
    p_in: PauliString,
    system_terms,
    coupling_terms,
    estimates: KernelEstimates,
    prune: bool = True,
    audit: list | None = None,
) -> float:
    """f^(m) for m >= 3: order n = 3..m contributions from tuple insertions.

    system_terms: iterable of (PauliString, lambda); coupling_terms: iterable
    of (PauliString, coupling index).  The kernel estimates must cover orders
    up to m - 3.
    """
    if m < 3:
        raise ValueError("use offset_m2 for the second derivative")
    terms = [EngineTerm(p, lam=l) for p, l in system_terms]
    terms += [EngineTerm(p, coupling=c) for p, c in coupling_terms]
    kind = "identity" if w is None else getattr(w, "kind", "identity")
    identity_w = kind == "identity"
    # an SH gate cycles Pauli content, so the content shortcut and the
    # commutation-graph prune are only sound for identity/Pauli gates
    content_ok = kind in ("identity", "pauli")
    prune = prune and identity_w

    if prune:
        terms = _observable_neighborhood(terms, p_out, estimates, depth=m - 1)

    by_content: dict[tuple, list[EngineTerm]] = {}
    for t in terms:
        by_content.setdefault(t.pauli.sites, []).append(t)

    total = 0j
    for n in range(3, m + 1):
        if content_ok:
            tuples = _content_matched_tuples(terms, by_content, p_out, p_in, n)
        else:
            tuples = itertools.product(terms, repeat=n)
        for tup in tuples:
            n_env = sum(t.is_env for t in tup)
            if n_env % 2:
                continue
            if any(not t.is_env and t.lam == 0 for t in tup):
                continue
            if prune and not _connected_to_observable(tup, p_out, estimates):
                continue
            val = _tuple_value(m, n, w, identity_w, p_out, p_in, tup, estimates)
            if audit is not None and val != 0:
                audit.append(([str(t.pauli) for t in tup], complex(val)))
            total += val
    if abs(total.imag) > 1e-9:
        raise ArithmeticError(f"offset came out complex ({total.imag:.2e}); check inputs")
    return float(total.real)


def _content_matched_tuples(terms, by_content, p_out, p_in, n):
    """Ordered n-tuples whose Pauli content cancels against P_O and P_I.

    The last slot is resolved by content lookup: the product of all Pauli
    factors must be proportional to the identity for a nonzero trace, and
    content is order independent, so fixing the final slot loses nothing.
    """
    base = multiply(p_out, p_in)
    for partial in itertools.product(terms, repeat=n - 1):
        need = multiply_all([base] + [t.pauli for t in partial]).sites
        for last in by_content.get(need, ()):
            yield partial + (last,)


def _tuple_value(m, n, w, identity_w, p_out, p_in, tup, estimates: KernelEstimates):
    env_slots = [i for i, t in enumerate(tup) if t.is_env]
    u = len(env_slots) // 2
    lam_prod = 1.0
    for t in tup:
        if not t.is_env:
            lam_prod *= t.lam
    if lam_prod == 0:
        return 0.0

    total = 0j
    w_splits = [0] if identity_w else range(n + 1)
    for lw in w_splits:
        upper, lower = list(range(lw)), list(range(lw, n))
        for lefts_u, rights_u in _sandwich_splits_of(upper):
            for lefts_l, rights_l in _sandwich_splits_of(lower):
                sign = (-1) ** (len(rights_u) + len(rights_l))
                inner = multiply_all(
                    [tup[i].pauli for i in lefts_l] + [p_in] + [tup[i].pauli for i in rights_l]
                )
                inner = _conjugate_by_w(inner, w) if not identity_w else inner
                seq = (
                    [p_out]
                    + [tup[i].pauli for i in lefts_u]
                    + [inner]
                    + [tup[i].pauli for i in rights_u]
                )
                trace = normalized_trace(seq)
                if trace == 0:
                    continue
                rolled = rights_l + rights_u + lefts_u + lefts_l
                rolled_env = [i for i in rolled if tup[i].is_env]
                wick = _wick_sum(m, n, None if identity_w else lw, rolled_env, tup, estimates, u)
                if wick:
                    total += sign * lam_prod * trace * wick
    return (-1j) ** n * total


def _sandwich_splits_of(slots):
    k = len(slots)
    for mask in range(2**k):
        lefts = [slots[i] for i in range(k) if (mask >> i) & 1]
        rights = [slots[i] for i in range(k) if not (mask >> i) & 1][::-1]
        yield lefts, rights


def _integral_dispatch(z, slots, n, lw, m) -> float:
    """lw = None selects the identity-W single segment of duration 2t."""
    if lw is not None:
        return integral_coefficient(z, slots, n, lw, m)
    z = list(z)
    if sum(z) != m - n:
        return 0.0
    total = Fraction(0)
    for j in itertools.product(*(range(zi + 1) for zi in z)):
        d = [0] * n
        coeff = Fraction(1)
        for (alpha, beta), zi, ji in zip(slots, z, j):
            coeff *= Fraction(comb(zi, ji) * (-1) ** (zi - ji), factorial(zi))
            d[alpha] += ji
            d[beta] += zi - ji
        total += coeff * full_simplex_derivative(d, m)
    return float(total)


def _wick_sum(m, n, lw, rolled_env, tup, estimates: KernelEstimates, u):
    if not rolled_env:
        if m != n:
            return 0.0
        return float(_integral_dispatch((), (), n, lw, m))
    total = 0j
    labels = [tup[i].coupling for i in rolled_env]
    for pairing in wick_pairings_sparse(labels, estimates.pair_active):
        slot_pairs = []
        for x, y in pairing:
            sx, sy = rolled_env[x], rolled_env[y]
            # orient each Taylor monomial to the earlier time (smaller slot index);
            # a flipped pair folds through K_{ab}(-t) = conj(K_{ba}(t))
            if sx < sy:
                slot_pairs.append((sx, sy, labels[x], labels[y], False))
            else:
                slot_pairs.append((sy, sx, labels[y], labels[x], True))
        for z in _compositions(m - n, u):
            coeff = 1.0 + 0j
            ok = True
            for (se, sl, ce, cl, conj), zi in zip(slot_pairs, z):
                k = estimates.value(ce, cl, zi)
                if conj:
                    k = np.conj(k)
                if k == 0:
                    ok = False
                    break
                coeff *= k
            if not ok:
                continue
            integral = _integral_dispatch(
                z, [(se, sl) for se, sl, *_ in slot_pairs], n, lw, m
            )
            if integral:
                total += coeff * integral
    return total


def _compositions(total, parts):
    if parts == 0:
        yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest
