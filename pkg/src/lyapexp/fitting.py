"""Small weighted-least-squares helper shared by the fitting front-ends.

Weights are 1/sigma^2 with caller-supplied standard errors; coefficient
covariance is (X^T W X)^{-1}, i.e. the supplied errors are taken at face
value rather than rescaled by the residual chi^2.  That is the right
convention here: the sigmas come from batch-means estimates whose own
noise is small, and rescaling would hide genuine lack of fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FitSummary:
    coefficients: tuple
    stderrs: tuple
    covariance: np.ndarray
    r2: float
    weighted_rss: float
    n_points: int


def wls_fit(design: np.ndarray, y: np.ndarray, sigma: np.ndarray) -> FitSummary:
    """Fit y = design @ coef by weighted least squares.

    ``sigma`` holds per-point standard errors; rows with larger errors
    count less.  The weighted R^2 is measured about the weighted mean of
    y (1.0 for a perfect fit; can be negative for a model worse than the
    constant).
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if design.ndim != 2 or design.shape[0] != y.size:
        raise ValueError("design matrix and data length mismatch")
    if np.any(sigma <= 0):
        raise ValueError("standard errors must be positive")
    sw = 1.0 / sigma
    a = design * sw[:, None]
    b = y * sw
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < design.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient design matrix")
    cov = np.linalg.inv(a.T @ a)
    resid = b - a @ coef
    rss = float(resid @ resid)
    w = sw * sw
    ybar = float((w * y).sum() / w.sum())
    tss = float((w * (y - ybar) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss == 0 else -np.inf)
    return FitSummary(coefficients=tuple(float(c) for c in coef),
                      stderrs=tuple(float(s) for s in np.sqrt(np.diag(cov))),
                      covariance=cov, r2=r2, weighted_rss=rss,
                      n_points=int(y.size))


def power_design(x: np.ndarray, powers) -> np.ndarray:
    """Design matrix with columns x**p for p in powers."""
    x = np.asarray(x, dtype=float)
    return np.column_stack([x ** float(p) for p in powers])
