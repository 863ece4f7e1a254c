"""Simulation of the invariant-measure chain  x' = Z (1 + x) / (1 + eps^2 x).

The chain is the workhorse behind the invariant-formula Lyapunov
estimator and all moment studies: its stationary law is the fixed point
X_eps of the random map, E[log(1 + eps^2 X_eps)] is the top exponent,
and its moments E[X_eps^gamma] control the residual terms of the
small-eps expansion.

Numerical layout
----------------
``replicas`` independent chains run in parallel as numpy rows; replicas
are grouped into fixed 512-wide blocks, each owning its own Philox
stream (see :mod:`.mc`), and the time axis is processed in 2048-step
chunks.  One uniform is consumed per step per replica, so runs with the
same (seed, replicas) see identical disorder regardless of eps, thread
count, or which statistics are requested -- the basis for the
common-random-number comparisons across an eps grid.

The step is evaluated as ``(z + z*x) / (1 + eps^2 * x)``: numerator and
denominator are kept monotone in x floating-point-wise, which makes the
pathwise domination results hold exactly in simulation, and the same
operation order is used by the d = 1 case of the block engine so the two
produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from .errors import TruncationOverflow
from .mc import (KahanSum, batch_means, fixed_chunks, kept_offsets,
                 philox_generator, run_blocks)

# Moments with gamma above this cutoff are accumulated in log space
# (log-sum-exp) to avoid overflow of x**gamma at small eps.
LOG_SPACE_GAMMA = 4.0


@dataclass(frozen=True)
class ChainConfig:
    """Run layout for the invariant chain.

    ``n_steps`` is the total number of retained samples across all
    replicas; each replica runs ``burn_in`` discarded steps followed by
    ``ceil(n_steps / replicas) * thinning`` further steps, of which every
    ``thinning``-th is retained.
    """

    eps: float
    n_steps: int
    seed: int
    burn_in: int = 10_000
    thinning: int = 1
    replicas: int = 64
    stream_base: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.replicas < 2:
            raise ValueError("need at least two replicas for error bars")
        if self.n_steps < self.replicas:
            raise ValueError("n_steps must be at least the replica count")
        if self.burn_in < 0 or self.thinning < 1:
            raise ValueError("burn_in must be >= 0 and thinning >= 1")

    @property
    def kept_per_replica(self) -> int:
        return -(-self.n_steps // self.replicas)

    @property
    def steps_per_replica(self) -> int:
        return self.burn_in + self.kept_per_replica * self.thinning


@dataclass(frozen=True)
class ChainStats:
    """Stationary statistics of one chain run.

    ``moments[i]`` estimates E[X^gammas[i]] over retained samples,
    ``trunc_moments[i]`` the truncated version E[X^gamma; eps^2 X <= B]
    with B = ``b_cutoff``.  ``log1p_mean`` is the invariant-formula
    Lyapunov estimate E[log(1 + eps^2 X)].  All standard errors are
    batch means over 64 replica groups.
    """

    eps: float
    seed: int
    n_kept: int
    gammas: tuple
    moments: tuple
    moment_stderrs: tuple
    trunc_moments: tuple
    trunc_stderrs: tuple
    b_cutoff: float
    log1p_mean: float
    log1p_stderr: float
    max_x: float
    replicas: int

    def moment(self, gamma) -> float:
        return self.moments[self.gammas.index(gamma)]


def step(x, z, eps):
    """One move of the chain; accepts scalars or aligned arrays.

    Identical operation order to the simulation engine, so scalar
    re-checks of engine trajectories match bitwise.
    """
    e2 = eps * eps
    num = z * x
    num = z + num
    den = e2 * x
    den = 1.0 + den
    return num / den


def default_cutoff(spec: dist.DistributionSpec) -> float:
    """Truncation level B: twice the essential supremum of Z.

    Bounded disorder gives eps^2 X <= ||Z||_inf pathwise, so with this
    default the truncated and plain statistics coincide and the
    truncation only bites for laws where it is informative.
    """
    return 2.0 * float(spec.ess_sup())


def simulate_chain(spec: dist.DistributionSpec, cfg: ChainConfig,
                   gammas=(1.0, 2.0), b_cutoff=None) -> ChainStats:
    """Run the chain and collect stationary moment / Lyapunov statistics."""
    gammas = tuple(float(g) for g in gammas)
    if b_cutoff is None:
        b_cutoff = default_cutoff(spec)
    b_cutoff = float(b_cutoff)
    draw = dist.sampler(spec)
    eps = abs(float(cfg.eps))
    e2 = eps * eps
    kept = cfg.kept_per_replica
    total = cfg.steps_per_replica
    log_space = [g > LOG_SPACE_GAMMA for g in gammas]

    def run_block(block_idx, start, stop):
        width = stop - start
        gen = philox_generator(cfg.seed, cfg.stream_base + block_idx)
        x = np.zeros(width)
        num = np.empty(width)
        den = np.empty(width)
        moment_acc = [KahanSum(width) for _ in gammas]
        trunc_acc = [KahanSum(width) for _ in gammas]
        logsum = [np.full(width, -np.inf) for _ in gammas]
        trunc_logsum = [np.full(width, -np.inf) for _ in gammas]
        lyap_acc = KahanSum(width)
        xmax = np.zeros(width)
        for c0, c1 in fixed_chunks(total):
            span = c1 - c0
            u = gen.random((span, width))
            z = draw(u)
            xbuf = np.empty((span, width))
            dbuf = np.empty((span, width))
            for t in range(span):
                zt = z[t]
                np.multiply(zt, x, out=num)
                np.add(zt, num, out=num)
                np.multiply(e2, x, out=den)
                np.add(1.0, den, out=den)
                dbuf[t] = den
                np.divide(num, den, out=xbuf[t])
                x = xbuf[t]
            # retained rows: post-step states x_j for j = c0+t+1, kept when
            # j > burn_in and (j - burn_in - 1) % thinning == 0; the log
            # increment of row t uses the matching pre-step state.
            j0 = c0 + 1
            offs = kept_offsets(j0, span, cfg.burn_in, cfg.thinning)
            if offs.size == 0:
                continue
            if offs.size == span:
                xk, dk = xbuf, dbuf
            else:
                xk, dk = xbuf[offs], dbuf[offs]
            lyap_acc.add(np.log(dk).sum(axis=0))
            np.maximum(xmax, xk.max(axis=0), out=xmax)
            wmask = None
            for i, g in enumerate(gammas):
                if log_space[i]:
                    vals = g * np.log(xk)
                    logsum[i] = np.logaddexp(logsum[i],
                                             _logsumexp0(vals))
                    if wmask is None:
                        wmask = e2 * xk <= b_cutoff
                    tvals = np.where(wmask, vals, -np.inf)
                    trunc_logsum[i] = np.logaddexp(trunc_logsum[i],
                                                   _logsumexp0(tvals))
                else:
                    vals = _power(xk, g)
                    moment_acc[i].add(vals.sum(axis=0))
                    if wmask is None:
                        wmask = e2 * xk <= b_cutoff
                    trunc_acc[i].add(np.where(wmask, vals, 0.0).sum(axis=0))
        out_m = []
        out_t = []
        for i in range(len(gammas)):
            if log_space[i]:
                out_m.append(np.exp(logsum[i] - math.log(kept)))
                out_t.append(np.exp(trunc_logsum[i] - math.log(kept)))
            else:
                out_m.append(moment_acc[i].total / kept)
                out_t.append(trunc_acc[i].total / kept)
        return out_m, out_t, lyap_acc.total / kept, xmax

    results = run_blocks(run_block, cfg.replicas, cfg.threads)

    moments, stderrs, truncs, tstderrs = [], [], [], []
    for i in range(len(gammas)):
        per_rep = np.concatenate([r[0][i] for r in results])
        m, se = batch_means(per_rep)
        moments.append(m)
        stderrs.append(se)
        per_rep_t = np.concatenate([r[1][i] for r in results])
        mt, set_ = batch_means(per_rep_t)
        truncs.append(mt)
        tstderrs.append(set_)
    lyap_rep = np.concatenate([r[2] for r in results])
    lmean, lse = batch_means(lyap_rep)
    max_x = float(max(r[3].max() for r in results)) if results else 0.0

    return ChainStats(eps=eps, seed=cfg.seed, n_kept=kept * cfg.replicas,
                      gammas=gammas, moments=tuple(moments),
                      moment_stderrs=tuple(stderrs),
                      trunc_moments=tuple(truncs),
                      trunc_stderrs=tuple(tstderrs), b_cutoff=b_cutoff,
                      log1p_mean=lmean, log1p_stderr=lse, max_x=max_x,
                      replicas=cfg.replicas)


def _power(x: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return x
    if gamma == 2.0:
        return x * x
    if gamma == int(gamma) and 0 < gamma <= LOG_SPACE_GAMMA:
        return x ** int(gamma)
    return x ** gamma


def _logsumexp0(vals: np.ndarray) -> np.ndarray:
    """log(sum(exp(vals), axis=0)) without scipy, safe against -inf rows."""
    top = vals.max(axis=0)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(vals - top).sum(axis=0)) + top


# -- perpetuity sampler ----------------------------------------------------

def sample_x0(spec: dist.DistributionSpec, n: int, seed: int,
              trunc_tol: float = 1e-12, max_terms: int = 100_000,
              stream_base: int = 0) -> np.ndarray:
    """Draw ``n`` samples of the perpetuity X_0 = sum_k Z_1 ... Z_k.

    Partial sums are accumulated until the running product stays below
    ``trunc_tol`` times the partial sum for 50 consecutive terms; if a
    sample fails to converge within ``max_terms`` terms (drift E[log Z]
    at or above 0), TruncationOverflow is raised.
    """
    draw = dist.sampler(spec)

    def run_block(block_idx, start, stop):
        width = stop - start
        gen = philox_generator(seed, stream_base + block_idx)
        prod = np.ones(width)
        total = np.zeros(width)
        consec = np.zeros(width, dtype=np.int64)
        for _ in range(max_terms):
            z = draw(gen.random(width))
            prod *= z
            total += prod
            small = prod < trunc_tol * total
            consec = np.where(small, consec + 1, 0)
            if consec.min() >= 50:
                return total
        raise TruncationOverflow(
            f"perpetuity did not converge within {max_terms} terms; "
            "E[log Z] may be too close to 0 for the requested tolerance")

    return np.concatenate(run_blocks(run_block, n))


# -- coupled trajectories ---------------------------------------------------

def coupled_paths(spec: dist.DistributionSpec, eps_a: float, eps_b: float,
                  n: int, seed: int, stream: int = 0):
    """Two chains driven by the same disorder sequence, eps_a and eps_b.

    Returns the pair of post-step trajectories (length n each).  With
    eps_a <= eps_b the first path dominates the second pathwise; with
    eps_a = 0 the first path follows the undamped recursion
    x' = Z (1 + x), whose time-n value matches the n-term partial sum of
    the perpetuity in law.
    """
    gen = philox_generator(seed, stream)
    z = dist.sampler(spec)(gen.random(n))
    e2a = float(eps_a) * float(eps_a)
    e2b = float(eps_b) * float(eps_b)
    path_a = np.empty(n)
    path_b = np.empty(n)
    a = b = 0.0
    for i in range(n):
        zi = z[i]
        a = (zi + zi * a) / (1.0 + e2a * a)
        b = (zi + zi * b) / (1.0 + e2b * b)
        path_a[i] = a
        path_b[i] = b
    return path_a, path_b


# -- grids -------------------------------------------------------------------

def moment_scan(spec: dist.DistributionSpec, gamma, eps_values, n_steps: int,
                seed: int, burn_in: int = 10_000, replicas: int = 64,
                b_cutoff=None, threads: int = 1):
    """Chain statistics for one gamma across an eps grid.

    All grid points share the same (seed, streams), i.e. identical
    disorder sequences -- differences across eps are then driven purely
    by the damping, which removes most of the Monte Carlo noise from
    ratios and differences along the grid.
    """
    out = []
    for eps in eps_values:
        cfg = ChainConfig(eps=float(eps), n_steps=n_steps, seed=seed,
                          burn_in=burn_in, replicas=replicas,
                          threads=threads)
        out.append(simulate_chain(spec, cfg, gammas=(gamma,),
                                  b_cutoff=b_cutoff))
    return out
