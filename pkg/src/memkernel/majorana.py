"""Jordan-Wigner translation between Pauli strings and Majorana monomials.

Mode i (0-based) owns Majoranas 2i and 2i+1:

    c_{2i}   = Z_0 ... Z_{i-1} X_i        (a_i + a_i^dag)
    c_{2i+1} = Z_0 ... Z_{i-1} Y_i        (-i (a_i - a_i^dag))

so a_i = (c_{2i} + i c_{2i+1}) / 2 with the all-zeros qubit state as vacuum.
"""

from __future__ import annotations

from .pauli import PauliString, multiply, multiply_all


def jw_majorana(index: int) -> PauliString:
    """Majorana operator c_index as a Pauli string."""
    mode, kind = divmod(index, 2)
    axes = {j: "Z" for j in range(mode)}
    axes[mode] = "X" if kind == 0 else "Y"
    return PauliString.from_dict(axes)


def majorana_monomial(indices, phase_power: int = 0) -> PauliString:
    """i^phase_power * c_{i1} c_{i2} ... in the given order."""
    out = multiply_all(jw_majorana(i) for i in indices)
    return out.with_phase(out.phase_power + phase_power)


def pauli_to_majorana(p: PauliString) -> tuple[int, tuple[int, ...]]:
    """Decompose p = i^k c_{m1} c_{m2} ... with m1 < m2 < ... (exact).

    Peels the highest occupied site; each Pauli string is a phased Majorana
    monomial, and the peeling order makes the index list strictly decreasing.
    """
    q = p
    peeled: list[int] = []
    while not q.is_identity():
        site, axis = q.sites[-1]
        if axis == "Z":
            # Z = -i c_{2s} c_{2s+1}; strip the Y-type factor first
            q = multiply(q, jw_majorana(2 * site))
            peeled.append(2 * site)
            continue
        idx = 2 * site + (0 if axis == "X" else 1)
        q = multiply(q, jw_majorana(idx))
        peeled.append(idx)
    indices = tuple(reversed(peeled))
    # p * c_{m_k} ... c_{m_1} = i^k  =>  p = i^k c_{m_1} ... c_{m_k}
    check = majorana_monomial(indices)
    phase = (p.phase_power - check.phase_power) % 4
    return phase, indices


def majorana_pair(p: PauliString) -> tuple[complex, int, int]:
    """Read p as z * (c_a c_b), a < b; raises if p is not a Majorana pair."""
    phase, idx = pauli_to_majorana(p)
    if len(idx) != 2:
        raise ValueError(f"{p} is not a quadratic Majorana monomial")
    return 1j**phase, idx[0], idx[1]
