"""Hamming ranking and mean average precision for the two cross-modal
tasks: image queries against text-side codes and vice versa."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .encoder import encode, pack_codes
from .errors import DataError, UsageError
from .model import CodeMatrix, UchModel

# task name -> query modality id (the database side is the unified codes)
TASKS = {"i2t": 1, "t2i": 2}


@dataclass(frozen=True)
class RetrievalReport:
    task: str
    map: float
    ap_per_query: np.ndarray
    r_cutoff: int
    code_length: int

    def __post_init__(self):
        ap = np.asarray(self.ap_per_query, dtype=np.float64)
        if np.any(ap < 0) or np.any(ap > 1):
            raise DataError("per-query AP values must lie in [0, 1]")
        if abs(float(ap.mean()) - self.map) > 1e-12:
            raise DataError("map must equal the mean per-query AP")


def hamming_rank(query_codes: CodeMatrix, db_codes: CodeMatrix) -> np.ndarray:
    """Database indices sorted by ascending Hamming distance per query.

    Ties break toward the smaller database index.  Returns an (nq, ndb)
    int array of ranked indices.
    """
    if query_codes.nbits != db_codes.nbits:
        raise DataError(
            f"code length mismatch: {query_codes.nbits} vs {db_codes.nbits}"
        )
    dist = kernels.hamming_distances(pack_codes(query_codes), pack_codes(db_codes))
    return np.argsort(dist, axis=1, kind="stable")


def average_precision(ranked_relevance, r_cutoff: int) -> float:
    """Average precision of one ranked 0/1 relevance list at cutoff.

    Mean of precision-at-m over the relevant positions m <= r_cutoff,
    normalized by the number of relevant items inside the cutoff; 0 when
    nothing relevant is retrieved.
    """
    rel = np.asarray(ranked_relevance).astype(bool).ravel()
    if not 1 <= r_cutoff <= rel.size:
        raise UsageError(f"r_cutoff must be in [1, {rel.size}], got {r_cutoff}")
    hits = 0
    acc = 0.0
    for m in range(r_cutoff):
        if rel[m]:
            hits += 1
            acc += hits / (m + 1)
    return acc / hits if hits else 0.0


def evaluate_task(
    model: UchModel,
    split,
    task: str,
    r_cutoff: int | None = None,
    db: str = "train",
) -> RetrievalReport:
    """MAP for one retrieval direction.

    Queries are the held-out samples of the task's source modality;
    the database is the unified training codes (db="train", default) or
    the re-encoded held-out samples of the other modality (db="query").
    Relevance is shared class label.
    """
    key = task.lower()
    if key not in TASKS:
        raise UsageError(f"task must be one of {sorted(TASKS)}, got {task!r}")
    if split.query_features is None:
        raise DataError("empty query set: nothing to evaluate")
    src = TASKS[key]
    query_codes = encode(model, split.query_features[src - 1], src)
    if db == "train":
        db_codes = model.training_codes
        db_labels = split.train_labels
    elif db == "query":
        other = 2 if src == 1 else 1
        db_codes = encode(model, split.query_features[other - 1], other)
        db_labels = split.query_labels
    else:
        raise UsageError(f"db must be 'train' or 'query', got {db!r}")
    if r_cutoff is None:
        r_cutoff = db_codes.n
    if not 1 <= r_cutoff <= db_codes.n:
        raise UsageError(f"r_cutoff must be in [1, {db_codes.n}], got {r_cutoff}")
    order = hamming_rank(query_codes, db_codes)
    relevance = (db_labels[order] == split.query_labels[:, None]).astype(np.uint8)
    ap = kernels.average_precision_batch(relevance, r_cutoff)
    return RetrievalReport(
        task=key,
        map=float(ap.mean()),
        ap_per_query=ap,
        r_cutoff=int(r_cutoff),
        code_length=model.nbits,
    )
