"""Exact coefficients of the small-coupling series of the top exponent.

The regular part of the expansion is sum_k (-1)^(k+1) ell_k eps^(2k),
where the ell_k are determined by the integer moments m_l = E[Z^l] of the
disorder law through a two-index recursion: starting from the base row
g[0][0] = 1, g[0][k] = 0 (k >= 1),

    g[l][s] = m_l / (1 - m_l) *
              sum_{0<=r<=l, 0<=i, i+k=s, (i,r) != (0,l)}
                  C(l, r) * C(l+i-1, i) * g[i+r][k]

and then ell_s = sum_{j+k=s, j>=1} g[j][k] / j.  Everything is carried
out in exact rational arithmetic; float moment inputs are converted to
exact binary rationals first, so the recursion itself never loses
precision and the only sensitivity left is the conditioning of the
1/(1 - m_l) prefactors, reported alongside the table.

Coefficients requested up to order K exist when m_l < 1 for every
l <= K; m_l == 1 raises DegenerateMoment(l) and m_l > 1 raises
UnstableMoment(l).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import DegenerateMoment, UnstableMoment
from . import distributions as dist


@dataclass(frozen=True)
class MomentVector:
    """Integer moments (m_1, ..., m_K) of the disorder law, 1-indexed."""

    values: tuple
    exact: bool = True

    def __post_init__(self):
        if any(v <= 0 for v in self.values):
            raise ValueError("moments must be strictly positive")

    def __len__(self):
        return len(self.values)

    def m(self, l: int) -> Fraction:
        return self.values[l - 1]


def moments_from_spec(spec, order: int) -> MomentVector:
    """Moment vector (E[Z], ..., E[Z^order]); exact for discrete specs."""
    raw = [dist.moment(spec, l) for l in range(1, order + 1)]
    exact = all(isinstance(v, Fraction) for v in raw)
    return MomentVector(tuple(Fraction(v) for v in raw), exact=exact)


def _as_moment_vector(m, order: int) -> MomentVector:
    if isinstance(m, MomentVector):
        mv = m
    elif isinstance(m, dist.DistributionSpec):
        mv = moments_from_spec(m, order)
    else:
        vals = tuple(Fraction(v) for v in m)
        mv = MomentVector(vals, exact=all(isinstance(v, (int, Fraction)) for v in m))
    if len(mv) < order:
        raise ValueError(f"need {order} moments, got {len(mv)}")
    return mv


@dataclass(frozen=True)
class CoefficientTable:
    """Exact g-table and series coefficients up to order K.

    ``g[l][k]`` (l + k <= K) and ``ell[s-1]`` = ell_s are Fractions.
    ``condition`` is 1 / min_l |1 - m_l|, the natural amplification scale
    of the recursion; ``exact`` records whether the moment inputs were
    exact rationals rather than converted floats.
    """

    order: int
    moments: MomentVector
    g: tuple
    ell: tuple
    exact: bool
    condition: float

    def g_entry(self, l: int, k: int) -> Fraction:
        return self.g[l][k]

    def ell_entry(self, s: int) -> Fraction:
        return self.ell[s - 1]

    def ell_floats(self) -> tuple:
        return tuple(float(e) for e in self.ell)


def _check_moments(mv: MomentVector, order: int) -> None:
    for l in range(1, order + 1):
        if mv.m(l) == 1:
            raise DegenerateMoment(l)
        if mv.m(l) > 1:
            raise UnstableMoment(l)


def _entry_sum(g, l: int, s: int, horizon: int) -> Fraction:
    """Right-hand side of the recursion for g[l][s] with explicit horizon.

    Terms with i > s contribute nothing (they would need k = s - i < 0),
    so any horizon >= s returns the same value; the recursion itself uses
    horizon = s.
    """
    acc = Fraction(0)
    for i in range(0, horizon + 1):
        k = s - i
        if k < 0:
            continue
        w_i = math.comb(l + i - 1, i)
        for r in range(0, l + 1):
            if i == 0 and r == l:
                continue
            acc += math.comb(l, r) * w_i * g[i + r][k]
    return acc


def g_table(m, order: int) -> CoefficientTable:
    """Build the coefficient table up to total order K = ``order``.

    ``m`` may be a MomentVector, a DistributionSpec, or a plain sequence
    of the first K integer moments.
    """
    mv = _as_moment_vector(m, order)
    _check_moments(mv, order)

    # g[l] holds entries for k = 0..K-l; row 0 is the base case.
    g = [[Fraction(0)] * (order + 1 - l) for l in range(order + 1)]
    g[0][0] = Fraction(1)
    for s in range(0, order + 1):
        for l in range(1, order + 1 - s):
            ml = mv.m(l)
            g[l][s] = ml / (1 - ml) * _entry_sum(g, l, s, horizon=s)

    ell = tuple(
        sum((g[j][s - j] / j for j in range(1, s + 1)), Fraction(0))
        for s in range(1, order + 1)
    )
    if order >= 1:
        condition = float(1 / min(abs(1 - mv.m(l)) for l in range(1, order + 1)))
    else:
        condition = 1.0
    return CoefficientTable(order=order, moments=mv,
                            g=tuple(tuple(row) for row in g),
                            ell=ell, exact=mv.exact, condition=condition)


def ell_coefficients(m, order: int) -> tuple:
    """Series coefficients (ell_1, ..., ell_K) as exact Fractions."""
    return g_table(m, order).ell


def g_entry_with_horizon(m, l: int, s: int, horizon: int) -> Fraction:
    """Single coefficient computed with an explicit recursion horizon."""
    if horizon < s:
        raise ValueError("horizon must be at least s")
    mv = _as_moment_vector(m, l + s)
    table = g_table(mv, l + s)
    ml = mv.m(l)
    return ml / (1 - ml) * _entry_sum(table.g, l, s, horizon=horizon)


# -- closed forms for the first two orders --------------------------------

def closed_form_ell1(m1) -> Fraction:
    m1 = Fraction(m1)
    return m1 / (1 - m1)


def closed_form_ell2(m1, m2) -> Fraction:
    m1, m2 = Fraction(m1), Fraction(m2)
    return ((1 + m1) ** 2 * m2 + 2 * m1 ** 2 * (1 - m2)) \
        / (2 * (1 - m1) ** 2 * (1 - m2))


# -- evaluation ------------------------------------------------------------

def regular_part(table, eps: float) -> float:
    """Alternating partial sum  sum_{k<=K} (-1)^(k+1) ell_k eps^(2k).

    Accepts a CoefficientTable or a plain sequence of ell values.  Terms
    are combined with exact compensated summation (math.fsum); each term
    itself is one float multiply of ell_k and eps^(2k).
    """
    ell = table.ell if isinstance(table, CoefficientTable) else tuple(table)
    e2 = float(eps) * float(eps)
    terms = []
    p = 1.0
    for k, coeff in enumerate(ell, start=1):
        p *= e2
        terms.append((1.0 if k % 2 == 1 else -1.0) * float(coeff) * p)
    return math.fsum(terms)
