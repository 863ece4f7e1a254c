"""Residual of the truncated expansion and its singularity exponent.

Subtracting the order-K regular part from the measured exponent leaves

    R_K(eps) = (-1)^(K+2) * (Lambda(eps) - sum_{k<=K} (-1)^(k+1) ell_k eps^(2k)),

a positive quantity whose small-eps decay rate carries the critical
exponent alpha of the disorder law: with K chosen as the last admissible
order, R_K is of order eps^(2 alpha) up to a log(1/eps) factor when
alpha is an integer, and squeezed between eps^(2 theta) and eps^(2 alpha)
for non-integer alpha with bounded disorder, where
theta = ceil(alpha) - log E[Z^ceil(alpha)] / log ||Z||_inf.

This module measures R_K on an eps grid (common random numbers across
the grid), fits its log-log slope by weighted least squares, and
computes the theoretical exponent brackets to compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import coefficients as coeffs
from . import distributions as dist
from .errors import InsufficientSignal, KNotInA
from .fitting import power_design, wls_fit
from .lyapunov import LyapunovEstimate, lyapunov_invariant

INTEGER_ALPHA_TOL = 1e-6


def default_eps_grid(j_min: int = 2, j_max: int = 10):
    """Dyadic grid eps = 2^-j, j = j_min..j_max."""
    return tuple(2.0 ** -j for j in range(j_min, j_max + 1))


@dataclass(frozen=True)
class ResidualSeries:
    """Measured residuals R_K over an eps grid.

    ``sign`` is (-1)^(K+2), the factor that makes the residual positive;
    ``lam`` and ``regular`` are kept so that the bookkeeping identity
    lam = regular + sign * residual can be re-checked exactly.
    """

    order: int
    eps: tuple
    lam: tuple
    lam_stderr: tuple
    regular: tuple
    residual: tuple
    sign: int
    ell: tuple
    n_steps: int
    seed: int


def residual_series(spec: dist.DistributionSpec, order: int, eps_grid,
                    n_steps: int = 10 ** 6, seed: int = 0,
                    burn_in: int = 10_000, replicas: int = 64,
                    threads: int = 1,
                    n_steps_per_eps=None) -> ResidualSeries:
    """Estimate R_K on a grid, sharing disorder across grid points.

    ``order`` must satisfy E[Z^order] < 1 (raises KNotInA otherwise);
    order 0 is allowed and returns the exponent itself.  A per-point
    sample-size schedule may be supplied via ``n_steps_per_eps`` to spend
    more effort where the signal is smallest.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if order >= 1 and dist.moment(spec, order) >= 1:
        raise KNotInA(f"E[Z^{order}] >= 1: order {order} is outside the "
                      "admissible moment interval")
    ell = coeffs.ell_coefficients(spec, order) if order >= 1 else ()
    sign = 1 if order % 2 == 0 else -1
    eps_grid = tuple(float(e) for e in eps_grid)
    budgets = list(n_steps_per_eps) if n_steps_per_eps is not None \
        else [n_steps] * len(eps_grid)
    if len(budgets) != len(eps_grid):
        raise ValueError("n_steps_per_eps must match the grid length")

    lam, lse, reg, res = [], [], [], []
    for eps, budget in zip(eps_grid, budgets):
        est = lyapunov_invariant(spec, eps, n_steps=budget, seed=seed,
                                 burn_in=burn_in, replicas=replicas,
                                 threads=threads)
        r = coeffs.regular_part(ell, eps)
        lam.append(est.value)
        lse.append(est.stderr)
        reg.append(r)
        res.append(sign * (est.value - r))
    return ResidualSeries(order=order, eps=eps_grid, lam=tuple(lam),
                          lam_stderr=tuple(lse), regular=tuple(reg),
                          residual=tuple(res), sign=sign,
                          ell=tuple(float(e) for e in ell),
                          n_steps=n_steps, seed=seed)


@dataclass(frozen=True)
class TheoryBracket:
    """Predicted window for the decay exponent p in R_K ~ eps^p.

    kind is "singular" when K is the last admissible order (the window
    comes from the tail exponent), "regular" when K+1 is still admissible
    (the next series term dominates, p = 2K+2 on the nose) and
    "no_singularity" when every moment of Z is below 1 (alpha infinite).
    ``log_correction`` marks the integer-alpha case where the upper edge
    carries an extra log(1/eps) factor.
    """

    kind: str
    lower_exp: float
    upper_exp: float
    alpha: float
    integer_alpha: bool
    log_correction: bool
    theta: float | None = None
    eta: float | None = None


def theory_brackets(spec: dist.DistributionSpec, order: int) -> TheoryBracket:
    """Exponent window predicted for R_K at K = ``order``."""
    if order >= 1 and dist.moment(spec, order) >= 1:
        raise KNotInA(f"E[Z^{order}] >= 1: order {order} is outside the "
                      "admissible moment interval")
    alpha_res = dist.solve_alpha(spec)
    if alpha_res.kind == "infinite":
        p = 2.0 * (order + 1)
        return TheoryBracket(kind="no_singularity", lower_exp=p, upper_exp=p,
                             alpha=math.inf, integer_alpha=False,
                             log_correction=False)
    if alpha_res.kind == "zero_boundary":
        raise KNotInA("E[log Z] >= 0: no admissible orders exist")
    alpha = alpha_res.alpha
    if dist.moment(spec, order + 1) < 1:
        # next coefficient exists: residual is dominated by the ell_{K+1} term
        p = 2.0 * (order + 1)
        return TheoryBracket(kind="regular", lower_exp=p, upper_exp=p,
                             alpha=alpha, integer_alpha=False,
                             log_correction=False)

    integer = abs(alpha - round(alpha)) < INTEGER_ALPHA_TOL
    if integer:
        a = float(round(alpha))
        return TheoryBracket(kind="singular", lower_exp=2 * a, upper_exp=2 * a,
                             alpha=alpha, integer_alpha=True,
                             log_correction=True, theta=a, eta=0.0)
    ceil_a = math.ceil(alpha)
    sup = float(spec.ess_sup())
    if not math.isfinite(sup):
        return TheoryBracket(kind="singular", lower_exp=2 * alpha,
                             upper_exp=2 * ceil_a, alpha=alpha,
                             integer_alpha=False, log_correction=False)
    eta = math.log(float(dist.moment(spec, ceil_a))) / math.log(sup)
    theta = ceil_a - eta
    return TheoryBracket(kind="singular", lower_exp=2 * alpha,
                         upper_exp=2 * theta, alpha=alpha,
                         integer_alpha=False, log_correction=False,
                         theta=theta, eta=eta)


@dataclass(frozen=True)
class FitResult:
    """Log-log fit of the residual decay.

    ``exponent`` is the fitted p in R ~ C eps^p (so p plays the role of
    2q); when the disorder has an integer critical exponent, a second
    model  log R = log C + 2 alpha log eps + log log(1/eps)  with pinned
    slope is also fitted and ``with_log_model`` records whether it beats
    the free power law in weighted residual sum.
    """

    exponent: float
    exponent_stderr: float
    log_amplitude: float
    r2: float
    with_log_model: bool
    log_model_amplitude: float | None
    log_model_rss: float | None
    power_rss: float
    n_used: int
    used_eps: tuple
    bracket: TheoryBracket | None


def fit_exponent(series: ResidualSeries, spec=None, min_points: int = 5,
                 noise_factor: float = 4.0) -> FitResult:
    """Weighted log-log fit of a residual series.

    Grid points whose residual is within ``noise_factor`` standard errors
    of zero are dropped; fewer than ``min_points`` survivors raises
    InsufficientSignal.  Passing the originating ``spec`` adds the theory
    bracket and enables the pinned-slope log model at integer alpha.
    """
    r = np.asarray(series.residual)
    se = np.asarray(series.lam_stderr)
    eps = np.asarray(series.eps)
    keep = r > noise_factor * se
    if int(keep.sum()) < min_points:
        raise InsufficientSignal(
            f"only {int(keep.sum())} of {r.size} grid points clear the "
            f"{noise_factor}-sigma noise floor; need {min_points}")
    eps, r, se = eps[keep], r[keep], se[keep]

    x = np.log(eps)
    y = np.log(r)
    sig = se / r  # delta method for log-residual errors
    design = np.column_stack([np.ones_like(x), x])
    fit = wls_fit(design, y, sig)

    bracket = theory_brackets(spec, series.order) if spec is not None else None
    with_log = False
    log_amp = None
    log_rss = None
    if bracket is not None and bracket.log_correction:
        # pinned model: log R - 2 alpha log eps - log log(1/eps) = const
        a2 = bracket.lower_exp
        y2 = y - a2 * x - np.log(np.log(1.0 / eps))
        pin = wls_fit(np.ones((y2.size, 1)), y2, sig)
        log_amp = pin.coefficients[0]
        log_rss = pin.weighted_rss
        with_log = log_rss < fit.weighted_rss
    return FitResult(exponent=fit.coefficients[1],
                     exponent_stderr=fit.stderrs[1],
                     log_amplitude=fit.coefficients[0], r2=fit.r2,
                     with_log_model=with_log, log_model_amplitude=log_amp,
                     log_model_rss=log_rss, power_rss=fit.weighted_rss,
                     n_used=int(r.size), used_eps=tuple(float(e) for e in eps),
                     bracket=bracket)
