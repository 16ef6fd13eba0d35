"""Monomial-list polynomials: evaluation, differentiation, expansions.

A polynomial in d variables is a list of terms ``(coeff, powers)`` where
``powers`` is a length-d tuple of non-negative integer exponents.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement

import numpy as np


def poly_degree(terms) -> int:
    return max((sum(p) for _, p in terms), default=0)


def poly_simplify(terms):
    """Merge duplicate monomials, drop zero coefficients; deterministic order."""
    acc: dict[tuple[int, ...], float] = {}
    for coeff, powers in terms:
        key = tuple(int(e) for e in powers)
        acc[key] = acc.get(key, 0.0) + float(coeff)
    return [(c, p) for p, c in sorted(acc.items()) if c != 0.0]


def poly_derive(terms, axis: int):
    """d/dx_axis of the polynomial."""
    out = []
    for coeff, powers in terms:
        e = powers[axis]
        if e > 0:
            new_powers = powers[:axis] + (e - 1,) + powers[axis + 1 :]
            out.append((coeff * e, new_powers))
    return poly_simplify(out)


def poly_eval_batch(terms, x: np.ndarray) -> np.ndarray:
    """Evaluate at rows of x (N, d) -> (N,)."""
    n = x.shape[0]
    out = np.zeros(n)
    for coeff, powers in terms:
        val = np.full(n, float(coeff))
        for i, e in enumerate(powers):
            if e == 1:
                val = val * x[:, i]
            elif e > 1:
                val = val * x[:, i] ** e
        out += val
    return out


def linear_power_terms(u, power: int, coeff: float = 1.0):
    """Expand coeff * (u . x)**power into monomials."""
    u = np.asarray(u, dtype=np.float64)
    d = u.size
    out = []
    for combo in combinations_with_replacement(range(d), power):
        exps = [0] * d
        for i in combo:
            exps[i] += 1
        mult = math.factorial(power)
        cval = coeff
        for i, e in enumerate(exps):
            mult //= math.factorial(e)
            if e:
                cval *= u[i] ** e
        out.append((cval * mult, tuple(exps)))
    return poly_simplify(out)
