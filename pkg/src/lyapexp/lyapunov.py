"""Top Lyapunov exponent of products of  [[1, eps], [eps Z, Z]].

Two estimators are provided and cross-checked against each other
throughout the test-suite:

``direct_product``
    Iterate a positive vector through the random matrices, renormalising
    by the max-norm at every step and averaging the log of the
    normalisers (Furstenberg--Kesten).  Needs no assumption on the sign
    of E[log Z]; an initial stretch of increments is discarded so the
    direction can forget the start vector.

``invariant_formula``
    Average log(1 + eps^2 x_n) along the invariant chain of
    :mod:`.chain`; valid in the contracting regime E[log Z] < 0 where
    the chain equilibrates.

Both estimates depend on eps only through |eps| (conjugating by
diag(-1, 1) flips the sign), so engines normalise the sign on entry and
runs at +/-eps are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from .chain import ChainConfig, simulate_chain
from .mc import (KahanSum, batch_means, fixed_chunks, philox_generator,
                 run_blocks)

DIRECT = "direct_product"
INVARIANT = "invariant_formula"


@dataclass(frozen=True)
class LyapunovEstimate:
    eps: float
    method: str
    value: float
    stderr: float
    n: int
    seed: int


def lyapunov_invariant(spec: dist.DistributionSpec, eps: float,
                       n_steps: int = 10 ** 6, seed: int = 0,
                       burn_in: int = 10_000, replicas: int = 64,
                       stream_base: int = 0,
                       threads: int = 1) -> LyapunovEstimate:
    """E[log(1 + eps^2 X)] along the stationary chain."""
    cfg = ChainConfig(eps=abs(float(eps)), n_steps=n_steps, seed=seed,
                      burn_in=burn_in, replicas=replicas,
                      stream_base=stream_base, threads=threads)
    stats = simulate_chain(spec, cfg, gammas=())
    return LyapunovEstimate(eps=cfg.eps, method=INVARIANT,
                            value=stats.log1p_mean,
                            stderr=stats.log1p_stderr, n=stats.n_kept,
                            seed=seed)


def lyapunov_direct(spec: dist.DistributionSpec, eps: float,
                    n_steps: int = 10 ** 6, seed: int = 0,
                    replicas: int = 64, discard: int = 1000,
                    start=(1.0, 1.0), stream_base: int = 0,
                    threads: int = 1) -> LyapunovEstimate:
    """Renormalised vector iteration through the matrix product.

    ``n_steps`` counted log-increments are split across ``replicas``
    independent trajectories; each trajectory additionally runs
    ``discard`` initial steps whose increments are not averaged (the
    direction of the iterated vector forgets ``start`` at a rate set by
    the gap between the two exponents, so the default is generous).
    """
    eps = abs(float(eps))
    s0, s1 = float(start[0]), float(start[1])
    if s0 < 0 or s1 < 0 or max(s0, s1) <= 0:
        raise ValueError("start vector must be nonnegative and nonzero")
    m0 = max(s0, s1)
    s0, s1 = s0 / m0, s1 / m0
    draw = dist.sampler(spec)
    per_rep = -(-n_steps // replicas)
    total = discard + per_rep

    def run_block(block_idx, start_col, stop_col):
        width = stop_col - start_col
        gen = philox_generator(seed, stream_base + block_idx)
        v0 = np.full(width, s0)
        v1 = np.full(width, s1)
        w0 = np.empty(width)
        w1a = np.empty(width)
        w1b = np.empty(width)
        acc = KahanSum(width)
        for c0, c1 in fixed_chunks(total):
            span = c1 - c0
            u = gen.random((span, width))
            z = draw(u)
            mbuf = np.empty((span, width))
            for t in range(span):
                zt = z[t]
                # top row:  1*v0 + eps*v1
                np.multiply(eps, v1, out=w0)
                np.add(v0, w0, out=w0)
                # bottom row:  eps*z*v0 + z*v1
                np.multiply(zt, v0, out=w1a)
                np.multiply(eps, w1a, out=w1a)
                np.multiply(zt, v1, out=w1b)
                np.add(w1a, w1b, out=w1b)
                m = np.maximum(w0, w1b)
                mbuf[t] = m
                v0 = w0 / m
                v1 = w1b / m
            keep0 = max(discard - c0, 0)
            if keep0 < span:
                acc.add(np.log(mbuf[keep0:]).sum(axis=0))
        return acc.total / per_rep

    per_replica = np.concatenate(run_blocks(run_block, replicas, threads))
    value, stderr = batch_means(per_replica)
    return LyapunovEstimate(eps=eps, method=DIRECT, value=value,
                            stderr=stderr, n=per_rep * replicas, seed=seed)


def estimate(spec: dist.DistributionSpec, eps: float, method: str = DIRECT,
             **kwargs) -> LyapunovEstimate:
    if method == DIRECT:
        return lyapunov_direct(spec, eps, **kwargs)
    if method == INVARIANT:
        return lyapunov_invariant(spec, eps, **kwargs)
    raise ValueError(f"unknown method {method!r}")


# -- exact special cases -----------------------------------------------------

def deterministic_exponent(z: float, eps: float) -> float:
    """log of the Perron eigenvalue of [[1, eps], [eps z, z]] (Z == z)."""
    z = float(z)
    e2 = float(eps) * float(eps)
    disc = math.sqrt((1.0 - z) ** 2 + 4.0 * e2 * z)
    return math.log(0.5 * ((1.0 + z) + disc))


def decoupled_exponent(spec: dist.DistributionSpec) -> float:
    """Exact exponent at eps = 1: E[log(1 + Z)] (finite sum for atoms)."""
    if spec.is_discrete:
        return math.fsum(float(w) * math.log(1.0 + float(a))
                         for a, w in zip(spec.atoms, spec.weights))
    raise ValueError("closed form available for discrete laws only")


# -- inversion symmetry ------------------------------------------------------

@dataclass(frozen=True)
class FactorizationReport:
    """Check of the exact identity  Lam_Z(eps) = E[log Z] + Lam_{1/Z}(eps).

    Both sides are estimated with the direct method on common random
    numbers (the reciprocal law consumes the same uniforms, so its
    matrices are the inverses' conjugates pathwise); ``gap`` should
    vanish within ``4 * gap_stderr``.
    """

    eps: float
    lam: LyapunovEstimate
    lam_reciprocal: LyapunovEstimate
    log_moment: float
    gap: float
    gap_stderr: float

    @property
    def ok(self) -> bool:
        return abs(self.gap) <= 4.0 * self.gap_stderr


def factorization_check(spec: dist.DistributionSpec, eps: float,
                        n_steps: int = 10 ** 6, seed: int = 0,
                        replicas: int = 64,
                        discard: int = 1000) -> FactorizationReport:
    lam = lyapunov_direct(spec, eps, n_steps=n_steps, seed=seed,
                          replicas=replicas, discard=discard)
    lam_r = lyapunov_direct(dist.reciprocal(spec), eps, n_steps=n_steps,
                            seed=seed, replicas=replicas, discard=discard)
    elog = dist.log_moment(spec)
    gap = lam.value - (elog + lam_r.value)
    gap_stderr = math.hypot(lam.stderr, lam_r.stderr)
    return FactorizationReport(eps=abs(float(eps)), lam=lam,
                               lam_reciprocal=lam_r, log_moment=elog,
                               gap=gap, gap_stderr=gap_stderr)
