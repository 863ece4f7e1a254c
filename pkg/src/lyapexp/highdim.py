"""Block generalisation: products of (d+1) x (d+1) matrices

    M_eps = [[1,       eps * L^T],
             [eps * C,  N       ]]

with random nonnegative blocks (L, C, N).  The invariant vector chain is
x' = (C + N x) / (1 + eps^2 L.x), the exponent is
E[log(1 + eps^2 L.X_eps)], and the role of the moment conditions
E[Z^l] != 1 is taken by the invertibility of I - G^(l), where G^(l) acts
on the multi-index moments of order l.

Everything here reduces to the scalar theory at d = 1 with
(L, C, N) = (1, Z, Z); the engines deliberately execute the same
floating-point operations as the scalar ones in that case, so d = 1 runs
reproduce the 2x2 results bit for bit -- a strong end-to-end check that
both implementations mean the same object.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import distributions as dist
from .distributions import as_fraction
from .errors import InsufficientSignal, InvalidSpec, SingularSystem
from .fitting import power_design, wls_fit
from .lyapunov import DIRECT, INVARIANT, LyapunovEstimate
from .mc import (KahanSum, batch_means, fixed_chunks, kept_offsets,
                 philox_generator, run_blocks)

COND_LIMIT = 1e12

# Chunk span for laws that materialise whole (span, width, d, d) block
# arrays at once; keeps peak memory modest at d = 4.
CALLABLE_CHUNK = 256


# -- block laws --------------------------------------------------------------

@dataclass(frozen=True)
class FiniteBlockLaw:
    """Finitely supported law of the block triple (L, C, N).

    ``ls``/``cs`` have shape (m, d), ``ns`` shape (m, d, d); atom k is
    drawn with probability ``weights[k]``.  Exact rational copies of the
    N blocks and weights are kept so that the limit moments E[N^omega]
    can be computed in exact arithmetic.
    """

    d: int
    weights: tuple
    ls: np.ndarray
    cs: np.ndarray
    ns: np.ndarray
    ns_exact: tuple
    cum: np.ndarray

    @property
    def eps_dependent(self) -> bool:
        return False

    def indices(self, u: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.cum, u, side="right")


def finite_block_law(triples, weights) -> FiniteBlockLaw:
    """Build a finite block law from (L, C, N) triples.

    Entries may be Fractions, "p/q" strings, ints or floats; all blocks
    must be nonnegative and share one dimension d.
    """
    if not triples or len(triples) != len(weights):
        raise InvalidSpec("need matching non-empty triples and weights")
    w = tuple(as_fraction(x) for x in weights)
    if any(x <= 0 for x in w) or sum(w, Fraction(0)) != 1:
        raise InvalidSpec("weights must be positive and sum to 1 exactly")
    ls, cs, ns, ns_exact = [], [], [], []
    d = None
    for L, C, N in triples:
        lrow = [as_fraction(v) for v in L]
        crow = [as_fraction(v) for v in C]
        nmat = [[as_fraction(v) for v in row] for row in N]
        if d is None:
            d = len(lrow)
        if len(lrow) != d or len(crow) != d or len(nmat) != d \
                or any(len(r) != d for r in nmat):
            raise InvalidSpec("all blocks must share one dimension d")
        if any(v < 0 for v in lrow + crow) \
                or any(v < 0 for row in nmat for v in row):
            raise InvalidSpec("block entries must be nonnegative")
        ls.append([float(v) for v in lrow])
        cs.append([float(v) for v in crow])
        ns.append([[float(v) for v in row] for row in nmat])
        ns_exact.append(tuple(tuple(row) for row in nmat))
    cum = np.cumsum(np.array([float(x) for x in w]))
    cum[-1] = 1.0
    return FiniteBlockLaw(d=d, weights=w, ls=np.array(ls), cs=np.array(cs),
                          ns=np.array(ns), ns_exact=tuple(ns_exact), cum=cum)


@dataclass(frozen=True)
class CallableBlockLaw:
    """Block law given as a sampler ``fn(eps, gen, shape) -> (L, C, N)``.

    The callable owns its own consumption of the generator; laws that
    depend on eps are supported in this form only (their limit moments
    are then estimated by Monte Carlo at a small probe eps).
    """

    d: int
    fn: object
    eps_dependent: bool = True


@dataclass(frozen=True)
class BlockSpec:
    """Dimension, sampler and assumption flags for a block model."""

    d: int
    law: object
    moments_finite: bool = True
    primitivity_claimed: bool = True

    def __post_init__(self):
        if self.d < 1:
            raise InvalidSpec("dimension d must be >= 1")
        if self.law.d != self.d:
            raise InvalidSpec("law dimension does not match d")


def from_scalar(spec: dist.DistributionSpec) -> BlockSpec:
    """d = 1 embedding (L, C, N) = (1, Z, Z) of a scalar disorder law.

    For discrete laws the result is a finite block law whose atoms sit
    in the same order as the scalar sampler's, so both consume identical
    uniforms and draw identical disorder.
    """
    if spec.is_discrete:
        triples = [(((Fraction(1),)), (a,), ((a,),)) for a in spec.atoms]
        return BlockSpec(d=1, law=finite_block_law(triples, spec.weights))
    draw = dist.sampler(spec)

    def fn(eps, gen, shape):
        z = draw(gen.random(shape))
        ones = np.ones(shape + (1,))
        return ones, z[..., None], z[..., None, None]

    return BlockSpec(d=1, law=CallableBlockLaw(d=1, fn=fn,
                                               eps_dependent=False))


# -- multi-index machinery ----------------------------------------------------

def multi_indices(d: int, l: int):
    """All d-part compositions of l, in descending lexicographic order."""
    if d == 1:
        return [(l,)]
    out = []
    for first in range(l, -1, -1):
        for rest in multi_indices(d - 1, l - first):
            out.append((first,) + rest)
    return out


def count_multi_indices(d: int, l: int) -> int:
    return math.comb(l + d - 1, d - 1)


def _contingency_tables(row_sums, col_sums):
    """Nonnegative integer matrices with the given row and column sums."""
    d = len(col_sums)

    def fill(i, cols_left, rows):
        if i == len(row_sums):
            if all(c == 0 for c in cols_left):
                yield tuple(rows)
            return
        for row in _bounded_compositions(row_sums[i], cols_left):
            yield from fill(i + 1,
                            tuple(c - r for c, r in zip(cols_left, row)),
                            rows + [row])

    yield from fill(0, tuple(col_sums), [])


def _bounded_compositions(total, bounds):
    """Compositions of ``total`` into len(bounds) parts, part j <= bounds[j]."""
    d = len(bounds)

    def rec(j, left):
        if j == d - 1:
            if left <= bounds[j]:
                yield (left,)
            return
        for v in range(min(left, bounds[j]), -1, -1):
            for rest in rec(j + 1, left - v):
                yield (v,) + rest

    yield from rec(0, total)


@dataclass(frozen=True)
class GMatrix:
    """Moment-transfer matrix G^(l) on multi-indices of norm l.

    entry(lam, lam') = sum over contingency tables omega with row sums
    lam and column sums lam' of E[N^omega], N^omega = prod N_ij^omega_ij.
    ``exact`` holds the same entries as Fractions when the law is finite.
    """

    l: int
    d: int
    indices: tuple
    matrix: np.ndarray
    condition: float
    exact: tuple | None = None
    stderr: np.ndarray | None = None


def _exact_block_moment(law: FiniteBlockLaw, omega) -> Fraction:
    total = Fraction(0)
    for w, nmat in zip(law.weights, law.ns_exact):
        term = w
        for i, row in enumerate(omega):
            for j, p in enumerate(row):
                if p:
                    term *= nmat[i][j] ** p
        total += term
    return total


def g_matrix(block_spec: BlockSpec, l: int, probe_eps: float = 1e-3,
             mc_samples: int = 20_000, seed: int = 0) -> GMatrix:
    """Compute G^(l); exact for finite laws, Monte Carlo otherwise.

    Raises SingularSystem when I - G^(l) has 2-norm condition number
    above 1e12, which is the block analogue of E[Z^l] == 1.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    d = block_spec.d
    idx = tuple(multi_indices(d, l))
    law = block_spec.law
    size = len(idx)
    exact = None
    stderr = None
    if isinstance(law, FiniteBlockLaw):
        ex = [[Fraction(0)] * size for _ in range(size)]
        mat = np.zeros((size, size))
        for a, lam in enumerate(idx):
            for b, lam2 in enumerate(idx):
                total = Fraction(0)
                for omega in _contingency_tables(lam, lam2):
                    total += _exact_block_moment(law, omega)
                ex[a][b] = total
                mat[a, b] = float(total)
        exact = tuple(tuple(row) for row in ex)
    else:
        gen = philox_generator(seed, 0)
        _, _, n_blocks = law.fn(probe_eps, gen, (mc_samples,))
        mat = np.zeros((size, size))
        stderr = np.zeros((size, size))
        for a, lam in enumerate(idx):
            for b, lam2 in enumerate(idx):
                acc = np.zeros(mc_samples)
                nonzero = False
                for omega in _contingency_tables(lam, lam2):
                    prod = np.ones(mc_samples)
                    for i in range(d):
                        for j in range(d):
                            p = omega[i][j]
                            if p:
                                prod = prod * n_blocks[:, i, j] ** p
                    acc += prod
                    nonzero = True
                if nonzero:
                    mat[a, b] = acc.mean()
                    stderr[a, b] = acc.std(ddof=1) / math.sqrt(mc_samples)
    eye = np.eye(size)
    condition = float(np.linalg.cond(eye - mat))
    if not np.isfinite(condition) or condition > COND_LIMIT:
        raise SingularSystem(
            f"I - G^({l}) is numerically singular (cond ~ {condition:.3g})")
    return GMatrix(l=l, d=d, indices=idx, matrix=mat, condition=condition,
                   exact=exact, stderr=stderr)


# -- vector chain -------------------------------------------------------------

def vector_chain_step(x, L, C, N, eps):
    """One move  x' = (C + N x) / (1 + eps^2 L.x)  of the vector chain.

    Accepts a single state (shape (d,)) or a batch (width, d) with
    matching leading dimensions on the blocks.  Operation order matches
    the simulation engines (and the scalar chain at d = 1).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
        L = np.asarray(L, dtype=float)[None, :]
        C = np.asarray(C, dtype=float)[None, :]
        N = np.asarray(N, dtype=float)[None, :, :]
    e2 = float(eps) * float(eps)
    nx = (N * x[:, None, :]).sum(axis=2)
    num = C + nx
    lx = (L * x).sum(axis=1)
    den = e2 * lx
    den = 1.0 + den
    out = num / den[:, None]
    return out[0] if single else out


def _chunk_blocks(law, eps, gen, span, width):
    """Draw one time-chunk of block triples, shaped (span, width, ...)."""
    if isinstance(law, FiniteBlockLaw):
        u = gen.random((span, width))
        idx = law.indices(u)
        return law.ls[idx], law.cs[idx], law.ns[idx]
    return law.fn(eps, gen, (span, width))


def _law_chunk_span(law) -> int:
    return 10 ** 9 if isinstance(law, FiniteBlockLaw) else CALLABLE_CHUNK


def lyapunov_general(block_spec: BlockSpec, eps: float, method: str = DIRECT,
                     n_steps: int = 10 ** 6, seed: int = 0,
                     burn_in: int = 10_000, replicas: int = 64,
                     discard: int = 1000, stream_base: int = 0,
                     threads: int = 1) -> LyapunovEstimate:
    """Top exponent of the block product, by either estimator.

    ``direct_product`` renormalises a positive (d+1)-vector through the
    full matrices; ``invariant_formula`` runs the vector chain and
    averages log(1 + eps^2 L.x).  Layout, burn-in/discard conventions
    and error bars mirror the scalar estimators exactly.
    """
    eps = abs(float(eps))
    if method == DIRECT:
        return _general_direct(block_spec, eps, n_steps, seed, replicas,
                               discard, stream_base, threads)
    if method == INVARIANT:
        return _general_invariant(block_spec, eps, n_steps, seed, burn_in,
                                  replicas, stream_base, threads)
    raise ValueError(f"unknown method {method!r}")


def _general_invariant(block_spec, eps, n_steps, seed, burn_in, replicas,
                       stream_base, threads) -> LyapunovEstimate:
    d = block_spec.d
    law = block_spec.law
    e2 = eps * eps
    kept = -(-n_steps // replicas)
    total = burn_in + kept
    max_span = _law_chunk_span(law)

    def run_block(block_idx, start, stop):
        width = stop - start
        gen = philox_generator(seed, stream_base + block_idx)
        x = np.zeros((width, d))
        acc = KahanSum(width)
        for c0, c1 in fixed_chunks(total):
            for s0 in range(c0, c1, max_span):
                s1 = min(s0 + max_span, c1)
                span = s1 - s0
                ls, cs, ns = _chunk_blocks(law, eps, gen, span, width)
                dbuf = np.empty((span, width))
                for t in range(span):
                    nx = (ns[t] * x[:, None, :]).sum(axis=2)
                    num = cs[t] + nx
                    lx = (ls[t] * x).sum(axis=1)
                    den = e2 * lx
                    den = 1.0 + den
                    dbuf[t] = den
                    x = num / den[:, None]
                offs = kept_offsets(s0 + 1, span, burn_in, 1)
                if offs.size == 0:
                    continue
                dk = dbuf if offs.size == span else dbuf[offs]
                acc.add(np.log(dk).sum(axis=0))
        return acc.total / kept

    per_replica = np.concatenate(run_blocks(run_block, replicas, threads))
    value, stderr = batch_means(per_replica)
    return LyapunovEstimate(eps=eps, method=INVARIANT, value=value,
                            stderr=stderr, n=kept * replicas, seed=seed)


def _general_direct(block_spec, eps, n_steps, seed, replicas, discard,
                    stream_base, threads) -> LyapunovEstimate:
    d = block_spec.d
    law = block_spec.law
    per_rep = -(-n_steps // replicas)
    total = discard + per_rep
    max_span = _law_chunk_span(law)

    def run_block(block_idx, start, stop):
        width = stop - start
        gen = philox_generator(seed, stream_base + block_idx)
        v0 = np.ones(width)
        w = np.ones((width, d))
        acc = KahanSum(width)
        for c0, c1 in fixed_chunks(total):
            for s0 in range(c0, c1, max_span):
                s1 = min(s0 + max_span, c1)
                span = s1 - s0
                ls, cs, ns = _chunk_blocks(law, eps, gen, span, width)
                mbuf = np.empty((span, width))
                for t in range(span):
                    lw = (ls[t] * w).sum(axis=1)
                    top = np.multiply(eps, lw)
                    top = np.add(v0, top)
                    cv = ns[t] * w[:, None, :]
                    bot = cs[t] * v0[:, None]
                    bot = np.multiply(eps, bot)
                    bot = np.add(bot, cv.sum(axis=2))
                    m = np.maximum(top, bot.max(axis=1))
                    mbuf[t] = m
                    v0 = top / m
                    w = bot / m[:, None]
                keep0 = max(discard - s0, 0)
                if keep0 < span:
                    acc.add(np.log(mbuf[keep0:]).sum(axis=0))
        return acc.total / per_rep

    per_replica = np.concatenate(run_blocks(run_block, replicas, threads))
    value, stderr = batch_means(per_replica)
    return LyapunovEstimate(eps=eps, method=DIRECT, value=value,
                            stderr=stderr, n=per_rep * replicas, seed=seed)


def coupled_vector_paths(block_spec: BlockSpec, eps: float, n: int,
                         seed: int, stream: int = 0):
    """Vector chain and its undamped majorant on shared disorder.

    Returns (damped, undamped) trajectories of shape (n, d); the
    undamped path follows y' = C + N y, whose time-n value matches the
    n-term partial sum of the matrix perpetuity in law, and dominates
    the damped path coordinatewise.
    """
    d = block_spec.d
    law = block_spec.law
    gen = philox_generator(seed, stream)
    e2 = float(eps) * float(eps)
    x = np.zeros(d)
    y = np.zeros(d)
    xs = np.empty((n, d))
    ys = np.empty((n, d))
    done = 0
    while done < n:
        span = min(CALLABLE_CHUNK, n - done)
        ls, cs, ns = _chunk_blocks(law, eps, gen, span, 1)
        for t in range(span):
            L, C, N = ls[t][0], cs[t][0], ns[t][0]
            nx = (N * x).sum(axis=1)
            x = (C + nx) / (1.0 + e2 * (L * x).sum())
            y = C + (N * y).sum(axis=1)
            xs[done + t] = x
            ys[done + t] = y
        done += span
    return xs, ys


# -- expansion extraction ------------------------------------------------------

@dataclass(frozen=True)
class ExpansionFit:
    """Least-squares coefficients of Lambda(eps) ~ sum q_k eps^k, k = 2..2K."""

    order: int
    powers: tuple
    coefficients: tuple
    stderrs: tuple
    r2: float
    estimates: tuple
    conditions: dict


def extract_expansion(block_spec: BlockSpec, order: int, eps_grid,
                      method: str = INVARIANT, n_steps: int = 10 ** 6,
                      seed: int = 0, burn_in: int = 10_000,
                      replicas: int = 64, discard: int = 1000,
                      threads: int = 1) -> ExpansionFit:
    """Fit the regular expansion of the block exponent on an eps grid.

    Checks the invertibility of I - G^(l) for l <= order first (the
    existence condition for the expansion), then estimates the exponent
    at every grid point with common random numbers and solves for the
    monomial coefficients eps^2 .. eps^(2K) by weighted least squares.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if order == 0:
        return ExpansionFit(order=0, powers=(), coefficients=(), stderrs=(),
                            r2=math.nan, estimates=(), conditions={})
    eps_grid = tuple(float(e) for e in eps_grid)
    powers = tuple(range(2, 2 * order + 1))
    if len(eps_grid) < len(powers):
        raise InsufficientSignal(
            f"{len(powers)} coefficients need at least {len(powers)} "
            f"grid points; got {len(eps_grid)}")
    conditions = {}
    for l in range(1, order + 1):
        conditions[l] = g_matrix(block_spec, l,
                                 probe_eps=min(eps_grid), seed=seed).condition

    estimates = []
    for eps in eps_grid:
        estimates.append(lyapunov_general(
            block_spec, eps, method=method, n_steps=n_steps, seed=seed,
            burn_in=burn_in, replicas=replicas, discard=discard,
            threads=threads))
    y = np.array([e.value for e in estimates])
    sig = np.array([max(e.stderr, 1e-300) for e in estimates])
    design = power_design(np.array(eps_grid), powers)
    fit = wls_fit(design, y, sig)
    return ExpansionFit(order=order, powers=powers,
                        coefficients=fit.coefficients, stderrs=fit.stderrs,
                        r2=fit.r2, estimates=tuple(estimates),
                        conditions=conditions)


# -- empirical assumption checks ------------------------------------------------

@dataclass(frozen=True)
class BlockReport:
    """Empirical check of the block assumptions on a sample of triples."""

    nonnegative: bool
    coupling_nonzero: bool
    feed_nonzero: bool
    irreducible: bool
    primitive: bool
    support: np.ndarray

    @property
    def passes(self) -> bool:
        return (self.nonnegative and self.coupling_nonzero
                and self.feed_nonzero and self.primitive)


def validate_blocks(block_spec: BlockSpec, probe_eps: float = 1e-3,
                    n: int = 1024, seed: int = 0) -> BlockReport:
    """Sample triples and test nonnegativity and a primitivity witness.

    The witness checks that the union support S of the N samples is
    strongly connected ((I + S)^d fully positive) and that some power
    S^k, k up to the Wielandt bound, is fully positive.
    """
    d = block_spec.d
    gen = philox_generator(seed, 0)
    ls, cs, ns = _chunk_blocks(block_spec.law, probe_eps, gen, n, 1)
    ls, cs, ns = ls.reshape(n, d), cs.reshape(n, d), ns.reshape(n, d, d)
    nonneg = bool((ls >= 0).all() and (cs >= 0).all() and (ns >= 0).all())
    support = (ns > 0).any(axis=0)
    adj = support.astype(np.int64)
    reach = np.eye(d, dtype=np.int64) + adj
    power = reach.copy()
    for _ in range(d - 1):
        power = np.minimum(power @ reach, 1)
    irreducible = bool((power > 0).all())
    sk = adj.copy()
    primitive = bool((sk > 0).all())
    for _ in range((d - 1) ** 2 + 1):
        if primitive:
            break
        sk = np.minimum(sk @ adj, 1)
        primitive = bool((sk > 0).all())
    return BlockReport(nonnegative=nonneg,
                       coupling_nonzero=bool((ls > 0).any()),
                       feed_nonzero=bool((cs > 0).any()),
                       irreducible=irreducible, primitive=primitive,
                       support=support)


# -- JSON interchange -----------------------------------------------------------

def blocks_from_dict(data: dict) -> BlockSpec:
    """Parse {"d": ..., "triples": [{"weight","L","C","N"}, ...]}."""
    if not isinstance(data, dict) or "triples" not in data:
        raise InvalidSpec("block JSON must be an object with a 'triples' list")
    entries = data["triples"]
    if not isinstance(entries, list) or not entries:
        raise InvalidSpec("'triples' must be a non-empty list")
    try:
        triples = [(e["L"], e["C"], e["N"]) for e in entries]
        weights = [e["weight"] for e in entries]
    except (KeyError, TypeError) as exc:
        raise InvalidSpec("each triple needs 'weight', 'L', 'C', 'N'") from exc
    law = finite_block_law(triples, weights)
    if "d" in data and int(data["d"]) != law.d:
        raise InvalidSpec(f"declared d={data['d']} but blocks have d={law.d}")
    return BlockSpec(d=law.d, law=law)


def blocks_from_json(text: str) -> BlockSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"malformed block JSON: {exc}") from exc
    return blocks_from_dict(data)


def load_blocks(path) -> BlockSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return blocks_from_json(fh.read())
