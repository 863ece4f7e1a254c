"""Distribution laws of the disorder multiplier Z and their exact calculus.

A :class:`DistributionSpec` pins down a positive random variable Z from
one of four families: ``two_point``, ``finite_discrete``,
``uniform_interval`` and ``log_uniform``.  All families used here have
bounded support and strictly positive values.  Finite discrete specs
store atoms and weights as exact :class:`fractions.Fraction` objects so
that integer moments, and through them the series coefficients, come out
as exact rationals.

The module also hosts the moment calculus on Z: power moments
``E[Z^gamma]``, the log moment ``E[log Z]``, the critical exponent
``alpha = sup {gamma : E[Z^gamma] < 1}`` found by bisection, seeded
sampling, and the report-only assumption checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidSpec, NoUpcrossing
from .mc import philox_generator

TWO_POINT = "two_point"
FINITE_DISCRETE = "finite_discrete"
UNIFORM_INTERVAL = "uniform_interval"
LOG_UNIFORM = "log_uniform"

_DISCRETE = (TWO_POINT, FINITE_DISCRETE)
_CONTINUOUS = (UNIFORM_INTERVAL, LOG_UNIFORM)


def as_fraction(value) -> Fraction:
    """Parse a number into an exact Fraction.

    Accepts Fraction, int, "p/q" or decimal strings, and floats.  Floats
    go through their shortest decimal repr, so ``0.2`` means 1/5 rather
    than the underlying binary expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # float() first: numpy scalars are float subclasses whose repr
        # ("np.float64(...)") Fraction cannot parse
        return Fraction(repr(float(value)))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidSpec(f"cannot parse number {value!r}") from exc
    raise InvalidSpec(f"cannot parse number {value!r}")


@dataclass(frozen=True)
class DistributionSpec:
    """Law of the positive disorder variable Z.

    For the discrete families ``atoms``/``weights`` hold exact rationals;
    for the interval families ``lower``/``upper`` are the endpoints.
    Invariants (checked at construction): atoms strictly positive and
    distinct, weights strictly positive and summing to 1 exactly, interval
    endpoints 0 < lower < upper, and at least two atoms of positive weight
    unless ``allow_degenerate`` was set (single-atom specs are only
    allowed as explicit oracle inputs).
    """

    family: str
    atoms: tuple = ()
    weights: tuple = ()
    lower: Fraction | None = None
    upper: Fraction | None = None
    allow_degenerate: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family in _DISCRETE:
            if not self.atoms or len(self.atoms) != len(self.weights):
                raise InvalidSpec("discrete spec needs matching atoms and weights")
            if self.family == TWO_POINT and len(self.atoms) != 2:
                raise InvalidSpec("two_point spec needs exactly two atoms")
            if any(a <= 0 for a in self.atoms):
                raise InvalidSpec("atoms must be strictly positive")
            if len(set(self.atoms)) != len(self.atoms):
                raise InvalidSpec("atoms must be distinct")
            if any(w <= 0 for w in self.weights):
                raise InvalidSpec("weights must be strictly positive")
            total = sum(self.weights, Fraction(0))
            if total != 1:
                raise InvalidSpec(f"weights sum to {total}, expected exactly 1")
            if len(self.atoms) < 2 and not self.allow_degenerate:
                raise InvalidSpec("degenerate (single atom) law: Z must be "
                                  "non-deterministic")
        elif self.family in _CONTINUOUS:
            if self.lower is None or self.upper is None:
                raise InvalidSpec("interval spec needs lower and upper endpoints")
            if not (0 < self.lower < self.upper):
                raise InvalidSpec("interval endpoints must satisfy 0 < lower < upper")
        else:
            raise InvalidSpec(f"unknown family {self.family!r}")

    # -- basic structure ------------------------------------------------

    @property
    def is_discrete(self) -> bool:
        return self.family in _DISCRETE

    def ess_sup(self) -> Fraction:
        return max(self.atoms) if self.is_discrete else self.upper

    def ess_inf(self) -> Fraction:
        return min(self.atoms) if self.is_discrete else self.lower


# -- constructors -------------------------------------------------------

def two_point(lo, hi, p_hi) -> DistributionSpec:
    """Two-atom law: P(Z = hi) = p_hi, P(Z = lo) = 1 - p_hi."""
    p = as_fraction(p_hi)
    return DistributionSpec(TWO_POINT, (as_fraction(lo), as_fraction(hi)),
                            (1 - p, p))


def finite_discrete(atoms, weights) -> DistributionSpec:
    return DistributionSpec(FINITE_DISCRETE,
                            tuple(as_fraction(a) for a in atoms),
                            tuple(as_fraction(w) for w in weights))


def uniform_interval(lo, hi) -> DistributionSpec:
    return DistributionSpec(UNIFORM_INTERVAL, lower=as_fraction(lo),
                            upper=as_fraction(hi))


def log_uniform(lo, hi) -> DistributionSpec:
    """log Z uniform on [log lo, log hi]."""
    return DistributionSpec(LOG_UNIFORM, lower=as_fraction(lo),
                            upper=as_fraction(hi))


def degenerate(value) -> DistributionSpec:
    """Deterministic Z == value, for oracle runs only."""
    return DistributionSpec(FINITE_DISCRETE, (as_fraction(value),),
                            (Fraction(1),), allow_degenerate=True)


def reciprocal(spec: DistributionSpec) -> DistributionSpec:
    """Law of 1/Z.  Defined for the families closed under reciprocal."""
    if spec.is_discrete:
        return DistributionSpec(spec.family,
                                tuple(1 / a for a in spec.atoms),
                                spec.weights,
                                allow_degenerate=spec.allow_degenerate)
    if spec.family == LOG_UNIFORM:
        return log_uniform(1 / spec.upper, 1 / spec.lower)
    raise InvalidSpec(f"{spec.family} is not closed under reciprocal")


# -- moments ------------------------------------------------------------

def _iroot(n: int, k: int):
    """Exact integer k-th root of n >= 0, or None if n is not a k-th power."""
    if n < 0:
        return None
    if n in (0, 1) or k == 1:
        return n
    x = 1 << -(-n.bit_length() // k)  # upper bound on the root
    while True:
        y = ((k - 1) * x + n // x ** (k - 1)) // k
        if y >= x:
            break
        x = y
    return x if x ** k == n else None


def _rational_pow(base: Fraction, expo: Fraction):
    """base ** expo as an exact Fraction, or None when irrational."""
    p, q = expo.numerator, expo.denominator
    num, den = base.numerator, base.denominator
    if p < 0:
        num, den, p = den, num, -p
    rn = _iroot(num, q)
    rd = _iroot(den, q)
    if rn is None or rd is None:
        return None
    return Fraction(rn ** p, rd ** p)


def moment(spec: DistributionSpec, gamma):
    """E[Z^gamma] for gamma >= 0.

    Returns an exact Fraction whenever the law is discrete and every
    atom power is rational (always the case for integer gamma); a float
    otherwise.  All supported families have bounded support, so the value
    is always finite.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if gamma == 0:
        return Fraction(1)
    if spec.is_discrete:
        g = _exact_exponent(gamma)
        if g is not None:
            total = Fraction(0)
            for a, w in zip(spec.atoms, spec.weights):
                term = a ** g.numerator if g.denominator == 1 \
                    else _rational_pow(a, g)
                if term is None:
                    break
                total += w * term
            else:
                return total
        gf = float(gamma)
        return float(math.fsum(float(w) * float(a) ** gf
                               for a, w in zip(spec.atoms, spec.weights)))
    if spec.family == UNIFORM_INTERVAL:
        g = _exact_exponent(gamma)
        if g is not None and g.denominator == 1:
            k = g.numerator
            lo, up = spec.lower, spec.upper
            return (up ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (up - lo))
        a, b, gf = float(spec.lower), float(spec.upper), float(gamma)
        return (b ** (gf + 1) - a ** (gf + 1)) / ((gf + 1) * (b - a))
    # log-uniform: Z = e^U with U uniform on [log a, log b]
    a, b, gf = float(spec.lower), float(spec.upper), float(gamma)
    return (b ** gf - a ** gf) / (gf * (math.log(b) - math.log(a)))


def _exact_exponent(gamma):
    """Normalise gamma to a Fraction if it is exactly rational-valued.

    Floats qualify when their (exact, binary) value has a small dyadic
    denominator -- integers, halves, quarters, ... -- which covers every
    midpoint the alpha bisection visits early on.
    """
    if isinstance(gamma, (int, Fraction)):
        return Fraction(gamma)
    if isinstance(gamma, float):
        g = Fraction(gamma)
        if g.denominator <= 64:
            return g
    return None


def log_moment(spec: DistributionSpec) -> float:
    """E[log Z]; a finite weighted sum for discrete laws."""
    if spec.is_discrete:
        return math.fsum(float(w) * math.log(a)
                         for a, w in zip(spec.atoms, spec.weights))
    a, b = float(spec.lower), float(spec.upper)
    if spec.family == UNIFORM_INTERVAL:
        return (b * math.log(b) - b - a * math.log(a) + a) / (b - a)
    return 0.5 * (math.log(a) + math.log(b))


# -- critical exponent ---------------------------------------------------

GAMMA_CAP = 512.0


@dataclass(frozen=True)
class AlphaResult:
    """Critical moment exponent alpha = sup {gamma : E[Z^gamma] < 1}.

    kind is "finite" (usual case, with |E[Z^alpha] - 1| <= tol),
    "infinite" (Z <= 1 a.s., every moment is < 1) or "zero_boundary"
    (E[log Z] >= 0, no gamma > 0 has E[Z^gamma] < 1).  For bounded
    support, a finite alpha always satisfies E[Z^alpha] = 1, so the
    admissible set is the open interval (0, alpha); moment_at_alpha
    records the residual curve value at the returned point.
    """

    kind: str
    alpha: float
    residual: float
    moment_at_alpha: float | None = None


def solve_alpha(spec: DistributionSpec, tol: float = 1e-10) -> AlphaResult:
    """Locate alpha by bracketed bisection on gamma -> E[Z^gamma] - 1.

    The upper bracket doubles from 1 until the curve upcrosses 1; the
    search is capped at gamma = 512, beyond which NoUpcrossing is raised
    (cannot occur for the bounded-support families unless Z <= 1, which
    is reported as kind="infinite" instead).
    """
    if spec.ess_sup() <= 1:
        return AlphaResult("infinite", math.inf, math.nan)
    if log_moment(spec) >= 0:
        return AlphaResult("zero_boundary", 0.0, math.nan)

    def f(g):
        # moment() is exact (Fraction) for rational powers of discrete
        # laws, which lets a true root of E[Z^g] = 1 be recognised as 0
        # instead of being bisected down to tol.
        m = moment(spec, g)
        if m == 1:
            return 0.0
        return float(m) - 1.0

    hi = 1.0
    fh = f(hi)
    while fh < 0.0:
        hi *= 2.0
        if hi > GAMMA_CAP:
            raise NoUpcrossing(f"E[Z^gamma] stays below 1 up to gamma={GAMMA_CAP}")
        fh = f(hi)
    if fh == 0.0:
        return AlphaResult("finite", hi, 0.0, 1.0)
    lo = hi / 2.0
    fl = f(lo)
    while fl >= 0.0:
        if fl == 0.0:
            return AlphaResult("finite", lo, 0.0, 1.0)
        lo /= 2.0
        if lo < 1e-12:
            raise NoUpcrossing("cannot bracket the upcrossing from below")
        fl = f(lo)
    # invariant: f(lo) < 0 < f(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return AlphaResult("finite", mid, 0.0, 1.0)
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    m = float(moment(spec, alpha))
    return AlphaResult("finite", alpha, abs(m - 1.0), m)


# -- sampling ------------------------------------------------------------

def sampler(spec: DistributionSpec):
    """Return a vectorised quantile map u in [0,1) -> Z.

    Every family consumes exactly one uniform per draw, so two specs
    sampled against the same (seed, stream) see the same underlying
    randomness -- the basis of all common-random-number comparisons in
    the package.
    """
    if spec.is_discrete:
        cum = np.cumsum(np.array([float(w) for w in spec.weights]))
        cum[-1] = 1.0
        atoms = np.array([float(a) for a in spec.atoms])

        def draw(u):
            return atoms[np.searchsorted(cum, u, side="right")]
        return draw
    if spec.family == UNIFORM_INTERVAL:
        a, b = float(spec.lower), float(spec.upper)

        def draw(u):
            return a + (b - a) * u
        return draw
    la, lb = math.log(float(spec.lower)), math.log(float(spec.upper))

    def draw(u):
        return np.exp(la + (lb - la) * u)
    return draw


def sample(spec: DistributionSpec, n: int, seed: int, stream: int = 0):
    """Draw n values of Z from the (seed, stream) Philox stream."""
    gen = philox_generator(seed, stream)
    return sampler(spec)(gen.random(n))


# -- assumption report ----------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    """Report-only check of the standing assumptions on Z."""

    positive_support: bool
    non_degenerate: bool
    negative_log_drift: bool
    finite_small_moment: bool
    bounded_support: bool
    ess_sup: float
    log_drift: float

    @property
    def passes(self) -> bool:
        return (self.positive_support and self.non_degenerate
                and self.negative_log_drift and self.finite_small_moment)


def validate_assumptions(spec: DistributionSpec) -> AssumptionReport:
    """Check positivity, non-degeneracy and E[log Z] < 0 without raising.

    Estimators remain runnable when a check fails (some oracle runs use
    degenerate or positive-drift laws on purpose); callers decide what to
    do with the report.
    """
    if spec.is_discrete:
        non_deg = len(spec.atoms) > 1
    else:
        non_deg = spec.lower < spec.upper
    drift = log_moment(spec)
    return AssumptionReport(
        positive_support=spec.ess_inf() > 0,
        non_degenerate=non_deg,
        negative_log_drift=drift < 0,
        finite_small_moment=True,  # bounded support
        bounded_support=True,
        ess_sup=float(spec.ess_sup()),
        log_drift=drift,
    )


# -- JSON interchange ------------------------------------------------------

def _frac_str(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def spec_to_dict(spec: DistributionSpec) -> dict:
    if spec.is_discrete:
        return {"family": spec.family,
                "atoms": [{"value": _frac_str(a), "weight": _frac_str(w)}
                          for a, w in zip(spec.atoms, spec.weights)]}
    return {"family": spec.family,
            "lower": _frac_str(spec.lower), "upper": _frac_str(spec.upper)}


def spec_from_dict(data: dict) -> DistributionSpec:
    if not isinstance(data, dict) or "family" not in data:
        raise InvalidSpec("spec JSON must be an object with a 'family' key")
    family = data["family"]
    if family in _DISCRETE:
        entries = data.get("atoms")
        if not isinstance(entries, list) or not entries:
            raise InvalidSpec("discrete spec JSON needs a non-empty 'atoms' list")
        try:
            atoms = tuple(as_fraction(e["value"]) for e in entries)
            weights = tuple(as_fraction(e["weight"]) for e in entries)
        except (KeyError, TypeError) as exc:
            raise InvalidSpec("each atom needs 'value' and 'weight'") from exc
        # a single atom is a legitimate deterministic law
        return DistributionSpec(family, atoms, weights,
                                allow_degenerate=len(atoms) == 1)
    if family in _CONTINUOUS:
        try:
            return DistributionSpec(family, lower=as_fraction(data["lower"]),
                                    upper=as_fraction(data["upper"]))
        except KeyError as exc:
            raise InvalidSpec("interval spec JSON needs 'lower' and 'upper'") from exc
    raise InvalidSpec(f"unknown family {family!r}")


def spec_to_json(spec: DistributionSpec, **kwargs) -> str:
    return json.dumps(spec_to_dict(spec), **kwargs)


def spec_from_json(text: str) -> DistributionSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"malformed spec JSON: {exc}") from exc
    return spec_from_dict(data)


def load_spec(path) -> DistributionSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_json(fh.read())
