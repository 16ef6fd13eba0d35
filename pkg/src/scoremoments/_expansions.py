"""Symbolic expansion of the score recursion over derivative alphabets.

A term is ``coeff * (X_{n1} (x) ... (x) X_{nt})`` with its plain axes scattered
into output slots by ``placement``. Two alphabets are used:

* L-alphabet: X_n = the n-th derivative of log p; gradient rule
  ``grad L_n = L_{n+1}`` (derivative index appended last).
* P-alphabet: X_n = (n-th derivative of p) / p; gradient rule
  ``grad P_n = P_{n+1} - P_n (x) P_1`` (quotient rule).

The score recursion ``S_m = -S_{m-1} (x) L_1 - grad S_{m-1}`` expanded in the
L-alphabet gives the score tensors; expanding ``L_n = grad^{n-1} P_1`` in the
P-alphabet converts density-derivative ratios into log-density derivatives.
All symbol tensors are symmetric, which the canonical form exploits when
merging terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class ExpTerm:
    coeff: float
    factors: tuple[int, ...]  # symbol orders, plain axes concatenated in order
    placement: tuple[int, ...]  # plain axis -> output slot (0-based)


def _canonical_key(factors, placement):
    blocks = []
    off = 0
    for nf in factors:
        blocks.append((nf, tuple(sorted(placement[off : off + nf]))))
        off += nf
    blocks.sort()
    return (
        tuple(b[0] for b in blocks),
        tuple(s for b in blocks for s in b[1]),
    )


def _merge(terms):
    acc: dict = {}
    for t in terms:
        key = _canonical_key(t.factors, t.placement)
        acc[key] = acc.get(key, 0.0) + t.coeff
    return tuple(
        ExpTerm(c, f, p) for (f, p), c in sorted(acc.items()) if c != 0.0
    )


def _grad(terms, rule):
    """Product-rule gradient of a term sum; new derivative slot goes last."""
    out = []
    for t in terms:
        m_new = sum(t.factors) + 1
        off = 0
        for f, nf in enumerate(t.factors):
            head = t.placement[: off + nf]
            tail = t.placement[off + nf :]
            for rcoeff, block in rule(nf):
                out.append(
                    ExpTerm(
                        t.coeff * rcoeff,
                        t.factors[:f] + block + t.factors[f + 1 :],
                        head + (m_new - 1,) + tail,
                    )
                )
            off += nf
    return out


def _l_rule(n):
    return ((1.0, (n + 1,)),)


def _p_rule(n):
    return ((1.0, (n + 1,)), (-1.0, (n, 1)))


@lru_cache(maxsize=None)
def score_terms(m: int):
    """S_m in the L-alphabet, from the recursion with S_0 = 1."""
    if m == 0:
        return (ExpTerm(1.0, (), ()),)
    prev = score_terms(m - 1)
    out = [
        ExpTerm(-t.coeff, t.factors + (1,), t.placement + (m - 1,)) for t in prev
    ]
    out.extend(
        ExpTerm(-g.coeff, g.factors, g.placement) for g in _grad(prev, _l_rule)
    )
    return _merge(out)


@lru_cache(maxsize=None)
def logderiv_terms(n: int):
    """L_n in the P-alphabet (cumulants from moments of the density ratios)."""
    if n == 1:
        return (ExpTerm(1.0, (1,), (0,)),)
    return _merge(_grad(logderiv_terms(n - 1), _p_rule))


_LETTERS = "abcdefgh"


def evaluate_terms(terms, symbols, n_samples: int, d: int) -> np.ndarray:
    """Evaluate a term sum with batched symbol arrays.

    symbols: dict order -> (N, d**order) flat arrays. Returns (N, d**m) flat.
    """
    m = sum(terms[0].factors)
    out = np.zeros((n_samples,) + (d,) * m)
    for t in terms:
        operands = []
        subs = []
        off = 0
        for nf in t.factors:
            slots = t.placement[off : off + nf]
            subs.append("n" + "".join(_LETTERS[s] for s in slots))
            operands.append(symbols[nf].reshape((n_samples,) + (d,) * nf))
            off += nf
        spec = ",".join(subs) + "->n" + _LETTERS[:m]
        out += t.coeff * np.einsum(spec, *operands)
    return out.reshape(n_samples, d**m)
