"""Monte Carlo plumbing: counter-based RNG streams, compensated
accumulators and batch-means error bars.

Reproducibility contract
------------------------
Every stochastic routine in the package is keyed by ``(seed, stream)``.
Streams are realised as Philox generators with ``key = seed * 2^64 + stream``,
so distinct streams are independent by construction and a (seed, stream)
pair always reproduces the same draws regardless of how many worker
threads consume them.  Replicas are grouped into fixed-width blocks
(:data:`BLOCK_WIDTH` columns per stream) and the time axis is processed in
chunks of :data:`TIME_CHUNK` steps; both constants are part of the layout,
never derived from the thread count, so results are bit-identical for any
``threads`` setting.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Fixed layout constants.  Changing either changes the draws assigned to a
# replica, so they are deliberately module-level and not configurable.
BLOCK_WIDTH = 512
TIME_CHUNK = 2048

# Batch count for batch-means standard errors.
N_BATCHES = 64

_MASK64 = (1 << 64) - 1


def philox_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for a (seed, stream) pair."""
    key = ((int(seed) & _MASK64) << 64) | (int(stream) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def replica_blocks(n_replicas: int):
    """Partition replica indices into fixed-width contiguous blocks.

    Returns a list of ``(block_index, start, stop)`` triples.  Block
    ``b`` of a run with base stream ``s0`` always draws from stream
    ``s0 + b``, independent of threading.
    """
    blocks = []
    b = 0
    for start in range(0, n_replicas, BLOCK_WIDTH):
        blocks.append((b, start, min(start + BLOCK_WIDTH, n_replicas)))
        b += 1
    return blocks


def run_blocks(worker, n_replicas: int, threads: int = 1):
    """Run ``worker(block_index, start, stop)`` over all replica blocks.

    Results are collected into a list indexed by block, then returned in
    block order.  With ``threads > 1`` the blocks are dispatched to a
    thread pool; because every block owns its generator and accumulators,
    scheduling order cannot affect the result.
    """
    blocks = replica_blocks(n_replicas)
    out = [None] * len(blocks)
    if threads <= 1 or len(blocks) == 1:
        for b, start, stop in blocks:
            out[b] = worker(b, start, stop)
        return out
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(worker, b, start, stop): b
                   for b, start, stop in blocks}
        for fut, b in futures.items():
            out[b] = fut.result()
    return out


class KahanSum:
    """Vector Kahan (compensated) accumulator.

    Chunk totals are added in a fixed order; the compensation term keeps
    the running sums accurate over ~1e9 additions, which matters when the
    accumulated quantity is O(eps^2) per step.
    """

    def __init__(self, n: int):
        self.total = np.zeros(n)
        self._comp = np.zeros(n)

    def add(self, values: np.ndarray) -> None:
        y = values - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t


def batch_means(per_replica_means: np.ndarray, n_batches: int = N_BATCHES):
    """Mean and batch-means standard error from per-replica averages.

    Replicas are grouped into ``min(n_batches, R)`` contiguous batches
    (replicas are independent streams, so batches are independent).  The
    returned mean is the plain average over replicas; the standard error
    is ``std(batch means, ddof=1) / sqrt(#batches)``.
    """
    r = np.asarray(per_replica_means, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need at least two replica means for an error bar")
    nb = min(n_batches, r.size)
    groups = np.array_split(r, nb)
    bmeans = np.array([g.mean() for g in groups])
    mean = float(r.mean())
    stderr = float(bmeans.std(ddof=1) / np.sqrt(nb))
    return mean, stderr


def fixed_chunks(total: int, chunk: int = TIME_CHUNK):
    """Yield (start, stop) pairs covering range(total) in fixed chunks."""
    for start in range(0, total, chunk):
        yield start, min(start + chunk, total)


def kept_offsets(j0: int, span: int, burn_in: int, thinning: int) -> np.ndarray:
    """Row offsets within a chunk whose post-step index is retained.

    Row t corresponds to post-step index j = j0 + t; a row is retained
    when j > burn_in and (j - burn_in - 1) % thinning == 0.  Shared by
    the scalar and block chain engines so their retained-sample layout
    (and hence their reductions) coincide exactly.
    """
    j = np.arange(j0, j0 + span)
    mask = j > burn_in
    if thinning > 1:
        mask &= (j - burn_in - 1) % thinning == 0
    return np.nonzero(mask)[0]
