"""Neighborhood structure over the concatenated features.

Two constructions are supported.  The locally-linear variant rebuilds
each sample as an affine combination of its k nearest neighbors and
stores those reconstruction weights row-wise in a sparse matrix W whose
rows sum to 1.  The anchor variant measures similarity to m landmark
points, keeps the s nearest anchors per sample, and represents the full
similarity S = Z diag(lam)^-1 Z^T only in factored form together with
its Laplacian L = I - S, so nothing n-by-n is ever materialized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NumericalError, UsageError
from .model import ConcatenatedFeatures
from .seeds import named_rng

log = logging.getLogger(__name__)

KMEANS_ITERS = 25


def _as_array(y) -> np.ndarray:
    if isinstance(y, ConcatenatedFeatures):
        return y.data
    a = np.asarray(y, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"expected 2-d features, got shape {a.shape}")
    return a


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a and rows of b."""
    aa = (a * a).sum(axis=1)
    bb = (b * b).sum(axis=1)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    # rounding can push tiny true distances below zero
    np.maximum(d, 0.0, out=d)
    return d


@dataclass(frozen=True)
class AffinityGraph:
    """Sample affinity in one of two shapes.

    variant "lle": `weights` is the sparse n x n reconstruction matrix W
    (k nonzeros per row, zero diagonal, rows summing to 1).  variant
    "lpp": `anchors` (m x d), sparse `z` (n x m, rows summing to 1) and
    `lambda_diag` (column masses of z) hold S = Z diag(lam)^-1 Z^T in
    factored form; `weights` is None.
    """

    variant: str
    weights: sp.csr_matrix | None = None
    anchors: np.ndarray | None = None
    z: sp.csr_matrix | None = None
    lambda_diag: np.ndarray | None = None
    delta: float | None = None  # resolved bandwidth (lpp only)

    def __post_init__(self):
        if self.variant == "lle":
            if self.weights is None:
                raise DataError("lle graph requires a weight matrix")
        elif self.variant == "lpp":
            if self.z is None or self.lambda_diag is None or self.anchors is None:
                raise DataError("lpp graph requires anchors, z and lambda_diag")
        else:
            raise DataError(f"unknown graph variant {self.variant!r}")

    @property
    def n(self) -> int:
        return self.weights.shape[0] if self.variant == "lle" else self.z.shape[0]

    def similarity_dense(self) -> np.ndarray:
        """Densified similarity, for tests and dumps only."""
        if self.variant == "lle":
            return self.weights.toarray()
        if self.n > 2000:
            raise UsageError("refusing to densify an anchor graph with n > 2000")
        z = self.z.toarray()
        return (z / self.lambda_diag[None, :]) @ z.T

    def smoothness(self, f: np.ndarray) -> float:
        """Graph penalty on continuous codes: ||F - WF||_F^2 for lle,
        Tr(F^T L F) for lpp."""
        f = np.asarray(f, dtype=np.float64)
        if self.variant == "lle":
            resid = f - self.weights @ f
            return float((resid * resid).sum())
        ztf = self.z.T @ f
        return float((f * f).sum() - ((ztf * ztf) / self.lambda_diag[:, None]).sum())


@dataclass(frozen=True)
class GraphLaplacian:
    """L = I - Z diag(lam)^-1 Z^T in factored form."""

    z: sp.csr_matrix
    lambda_diag: np.ndarray

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return f - self.z @ ((self.z.T @ f) / self.lambda_diag[:, None])

    def quad(self, f: np.ndarray) -> float:
        """Tr(F^T L F)."""
        ztf = self.z.T @ f
        return float((f * f).sum() - ((ztf * ztf) / self.lambda_diag[:, None]).sum())

    def dense(self) -> np.ndarray:
        if self.n > 2000:
            raise UsageError("refusing to densify a Laplacian with n > 2000")
        z = self.z.toarray()
        return np.eye(self.n) - (z / self.lambda_diag[None, :]) @ z.T


def knn_indices(y, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors of every row (self excluded).

    Ties are broken toward the smaller index.  Returns an (n, k) int
    array ordered nearest-first.
    """
    data = _as_array(y)
    n = data.shape[0]
    if not 1 <= k < n:
        raise UsageError(f"k must satisfy 1 <= k < n={n}, got {k}")
    d = pairwise_sq_dists(data, data)
    np.fill_diagonal(d, np.inf)
    # stable sort keeps equal distances in index order
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def lle_weights(y, k: int, ridge: float = 1e-3) -> AffinityGraph:
    """Affine reconstruction weights of each sample from its k neighbors.

    For sample i with neighbor differences d_a = y_i - y_a, the local
    Gram matrix G[a][b] = d_a . d_b is ridge-regularized by
    ridge * trace(G)/k (plain ridge when the trace vanishes), and the
    weight row is G^-1 1 normalized to sum to 1.
    """
    data = _as_array(y)
    if ridge < 0:
        raise UsageError(f"ridge must be >= 0, got {ridge}")
    n = data.shape[0]
    nbrs = knn_indices(data, k)
    rows = np.empty((n, k), dtype=np.float64)
    ones = np.ones(k)
    eye = np.eye(k)
    for i in range(n):
        diffs = data[i] - data[nbrs[i]]
        g = diffs @ diffs.T
        tr = float(np.trace(g))
        g = g + (ridge * tr / k if tr > 0 else ridge) * eye
        try:
            w = np.linalg.solve(g, ones)
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"local Gram system is singular at sample {i}; increase ridge"
            ) from None
        s = float(w.sum())
        if not np.isfinite(s) or abs(s) < 1e-300:
            raise NumericalError(
                f"local Gram system is singular at sample {i}; increase ridge"
            )
        rows[i] = w / s
    indptr = np.arange(0, n * k + 1, k)
    w = sp.csr_matrix((rows.ravel(), nbrs.ravel(), indptr), shape=(n, n))
    return AffinityGraph(variant="lle", weights=w)


def anchor_select(y, m: int, seed: int, method: str = "kmeans") -> np.ndarray:
    """Pick m anchor points: seeded k-means centroids (fixed iteration
    budget), or a plain seeded subsample with method="sample"."""
    data = _as_array(y)
    n = data.shape[0]
    if not 1 <= m <= n:
        raise UsageError(f"m must satisfy 1 <= m <= n={n}, got {m}")
    rng = named_rng(seed, "anchors")
    chosen = rng.choice(n, size=m, replace=False)
    centers = data[chosen].copy()
    if method == "sample":
        return centers
    if method != "kmeans":
        raise UsageError(f"unknown anchor method {method!r}")
    for _ in range(KMEANS_ITERS):
        assign = np.argmin(pairwise_sq_dists(data, centers), axis=1)
        for j in range(m):
            members = assign == j
            # empty clusters keep their previous centroid
            if members.any():
                centers[j] = data[members].mean(axis=0)
    return centers


def anchor_graph(y, anchors: np.ndarray, s_nearest: int, delta: float | None = None) -> AffinityGraph:
    """Truncated similarity of every sample to its s nearest anchors.

    Keeps the s_nearest closest anchors per sample, weights them by
    exp(-dist^2/delta) and normalizes each row to sum to 1.  delta=None
    self-tunes to the mean kept squared distance.  Anchors that receive
    zero total mass are dropped with a warning.
    """
    data = _as_array(y)
    anchors = np.asarray(anchors, dtype=np.float64)
    n, m = data.shape[0], anchors.shape[0]
    if not 1 <= s_nearest <= m:
        raise UsageError(f"s_nearest must be in [1, {m}], got {s_nearest}")
    d = pairwise_sq_dists(data, anchors)
    kept = np.argsort(d, axis=1, kind="stable")[:, :s_nearest]
    kept_d = np.take_along_axis(d, kept, axis=1)
    if delta is None:
        delta = float(kept_d.mean())
        if delta <= 0:
            delta = 1.0  # all samples sit on their anchors
    elif delta <= 0:
        raise UsageError(f"delta must be > 0, got {delta}")
    # subtract the row minimum before exponentiating for stability
    w = np.exp(-(kept_d - kept_d.min(axis=1, keepdims=True)) / delta)
    w /= w.sum(axis=1, keepdims=True)
    indptr = np.arange(0, n * s_nearest + 1, s_nearest)
    z = sp.csr_matrix((w.ravel(), kept.ravel(), indptr), shape=(n, m))
    lam = np.asarray(z.sum(axis=0)).ravel()
    dead = lam == 0
    if dead.any():
        log.warning("dropping %d anchors with zero total mass", int(dead.sum()))
        keep_cols = np.flatnonzero(~dead)
        z = z[:, keep_cols].tocsr()
        anchors = anchors[keep_cols]
        lam = lam[keep_cols]
    return AffinityGraph(
        variant="lpp", anchors=anchors, z=z, lambda_diag=lam, delta=delta
    )


def laplacian(graph: AffinityGraph) -> GraphLaplacian:
    """Factored L = I - S for an anchor graph."""
    if graph.variant != "lpp":
        raise UsageError("laplacian is defined for the anchor variant only")
    return GraphLaplacian(z=graph.z, lambda_diag=graph.lambda_diag)


def dump_graph(graph: AffinityGraph, path) -> None:
    """Write the graph as CSV triplets (i, j, w) for inspection.

    For the anchor variant the dumped matrix is Z, so j indexes anchors.
    """
    mat = (graph.weights if graph.variant == "lle" else graph.z).tocoo()
    col_name = "col" if graph.variant == "lle" else "anchor"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"row,{col_name},weight\n")
        for i, j, w in zip(mat.row, mat.col, mat.data):
            fh.write(f"{i},{j},{float(w)!r}\n")
