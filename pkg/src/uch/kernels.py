"""Hot loops with numba-compiled fast paths and pure-numpy twins.

Ranking a query set against a database is a popcount over packed codes,
and averaging precision over every query is a tight loop over ranked
relevance lists.  Both get an @njit kernel here.  Setting UCH_NO_NUMBA=1
(or running without numba installed) selects the numpy implementations
instead.  The two paths are written so their floating point results are
identical, not just close; benchmarks/bench_kernels.py compares speed.
"""

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("UCH_NO_NUMBA", "").strip() not in ("", "0")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via UCH_NO_NUMBA instead
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and not _FORCE_NUMPY

# 8-bit popcount table shared by both paths.
_POPCOUNT8 = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)


def _hamming_numpy(packed_q: np.ndarray, packed_db: np.ndarray) -> np.ndarray:
    nq, nbytes = packed_q.shape
    ndb = packed_db.shape[0]
    out = np.empty((nq, ndb), dtype=np.int32)
    # Chunk queries so the (chunk, ndb, nbytes) XOR temporary stays near 64 MB.
    chunk = max(1, (64 << 20) // max(1, ndb * nbytes))
    for lo in range(0, nq, chunk):
        hi = min(nq, lo + chunk)
        xored = packed_q[lo:hi, None, :] ^ packed_db[None, :, :]
        out[lo:hi] = _POPCOUNT8[xored].sum(axis=2, dtype=np.int32)
    return out


def _ap_numpy(relevance: np.ndarray, r_cutoff: int) -> np.ndarray:
    rel = relevance[:, :r_cutoff].astype(np.int64)
    hits = np.cumsum(rel, axis=1)
    ranks = np.arange(1, r_cutoff + 1, dtype=np.int64)
    # cumsum keeps the same left-to-right accumulation order as the numba
    # loop, so the two paths agree bit for bit.
    acc = np.cumsum((hits / ranks) * rel, axis=1)[:, -1]
    total = hits[:, -1]
    out = np.zeros(relevance.shape[0], dtype=np.float64)
    found = total > 0
    out[found] = acc[found] / total[found]
    return out


if USE_NUMBA:

    @njit(cache=True)
    def _hamming_numba(packed_q, packed_db, table):  # pragma: no cover - compiled
        nq, nbytes = packed_q.shape
        ndb = packed_db.shape[0]
        out = np.empty((nq, ndb), dtype=np.int32)
        for i in range(nq):
            for j in range(ndb):
                acc = 0
                for k in range(nbytes):
                    acc += table[packed_q[i, k] ^ packed_db[j, k]]
                out[i, j] = acc
        return out

    @njit(cache=True)
    def _ap_numba(relevance, r_cutoff):  # pragma: no cover - compiled
        nq = relevance.shape[0]
        out = np.zeros(nq, dtype=np.float64)
        for q in range(nq):
            hits = 0
            acc = 0.0
            for m in range(r_cutoff):
                if relevance[q, m]:
                    hits += 1
                    acc += hits / (m + 1)
            if hits > 0:
                out[q] = acc / hits
        return out


def hamming_distances(packed_q: np.ndarray, packed_db: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between two sets of bit-packed codes.

    Inputs are uint8 arrays of shape (n, nbytes) as produced by
    encoder.pack_codes.  Returns an int32 matrix of shape (nq, ndb).
    """
    if packed_q.ndim != 2 or packed_db.ndim != 2:
        raise ValueError("packed code arrays must be 2-d")
    if packed_q.shape[1] != packed_db.shape[1]:
        raise ValueError(
            f"byte width mismatch: {packed_q.shape[1]} vs {packed_db.shape[1]}"
        )
    pq = np.ascontiguousarray(packed_q, dtype=np.uint8)
    pdb = np.ascontiguousarray(packed_db, dtype=np.uint8)
    if USE_NUMBA:
        return _hamming_numba(pq, pdb, _POPCOUNT8)
    return _hamming_numpy(pq, pdb)


def average_precision_batch(relevance: np.ndarray, r_cutoff: int) -> np.ndarray:
    """Average precision at r_cutoff for every row of a 0/1 relevance matrix.

    Row q holds the relevance of the database items as ranked for query q.
    Queries with no relevant item inside the cutoff score 0.
    """
    if relevance.ndim != 2:
        raise ValueError("relevance must be 2-d (queries by ranked items)")
    if not 1 <= r_cutoff <= relevance.shape[1]:
        raise ValueError(
            f"r_cutoff must be in [1, {relevance.shape[1]}], got {r_cutoff}"
        )
    rel = np.ascontiguousarray(relevance, dtype=np.uint8)
    if USE_NUMBA:
        return _ap_numba(rel, r_cutoff)
    return _ap_numpy(rel, r_cutoff)
