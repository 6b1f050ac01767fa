"""File ingestion and persistence.

Feature files are headerless UTF-8 CSVs, one sample per row; labels are
a one-column CSV.  A dataset is described by a key-value manifest whose
paths are resolved relative to the manifest's directory.  Models are
stored in a small versioned binary container so round-trips are exact.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import CodeMatrix, FeatureMatrix, UchModel
from .seeds import named_rng

log = logging.getLogger(__name__)

MODEL_MAGIC = b"UCHM"
MODEL_VERSION = 1

_VARIANT_CODES = {"lle": 0, "lpp": 1}
_VARIANT_NAMES = {v: k for k, v in _VARIANT_CODES.items()}
_TARGET_CODES = {"relaxed": 0, "binary": 1}
_TARGET_NAMES = {v: k for k, v in _TARGET_CODES.items()}


def read_kv_file(path) -> dict[str, str]:
    """Parse a key = value text file; # starts a comment, blanks ignored."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    out: dict[str, str] = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{path} line {ln}: expected key = value")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise DataError(f"{path} line {ln}: empty key")
        if key in out:
            raise DataError(f"{path} line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    modality_files: tuple[tuple[int, Path, int], ...]  # (modality_id, path, dim)
    labels_path: Path | None
    labels_block: int
    train_count: int
    query_count: int | None  # None: everything after the train rows
    seed: int


def _manifest_int(kv: dict, key: str, path) -> int:
    try:
        return int(kv[key])
    except ValueError:
        raise DataError(f"{path}: key {key} must be an integer, got {kv[key]!r}") from None


def load_manifest(path) -> DatasetManifest:
    """Read and validate a dataset manifest."""
    path = Path(path)
    kv = read_kv_file(path)
    base = path.parent
    for key in ("name", "split.train", "split.seed"):
        if key not in kv:
            raise DataError(f"{path}: missing manifest key {key}")
    mods = []
    v = 1
    while f"modality.{v}.path" in kv:
        dim_key = f"modality.{v}.dim"
        if dim_key not in kv:
            raise DataError(f"{path}: missing manifest key {dim_key}")
        dim = _manifest_int(kv, dim_key, path)
        if dim < 1:
            raise DataError(f"{path}: {dim_key} must be >= 1, got {dim}")
        mods.append((v, base / kv[f"modality.{v}.path"], dim))
        v += 1
    if len(mods) < 2:
        raise DataError(f"{path}: manifests need modality.1.* and modality.2.* keys")
    labels_path = base / kv["labels.path"] if "labels.path" in kv else None
    block = _manifest_int(kv, "labels.block", path) if "labels.block" in kv else 200
    if block < 1:
        raise DataError(f"{path}: labels.block must be >= 1, got {block}")
    train = _manifest_int(kv, "split.train", path)
    query = _manifest_int(kv, "split.query", path) if "split.query" in kv else None
    seed = _manifest_int(kv, "split.seed", path)
    if seed < 0:
        raise DataError(f"{path}: split.seed must be >= 0, got {seed}")
    known = {"name", "labels.path", "labels.block", "split.train", "split.query", "split.seed"}
    known.update(k for u in range(1, v) for k in (f"modality.{u}.path", f"modality.{u}.dim"))
    unknown = sorted(set(kv) - known)
    if unknown:
        raise DataError(f"{path}: unknown manifest keys: {', '.join(unknown)}")
    return DatasetManifest(
        name=kv["name"],
        modality_files=tuple(mods),
        labels_path=labels_path,
        labels_block=block,
        train_count=train,
        query_count=query,
        seed=seed,
    )


def load_matrix(path, expected_cols: int) -> np.ndarray:
    """Parse a headerless numeric CSV into an (n, expected_cols) array.

    Row order follows the file.  Errors carry 1-based row/line numbers.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            if len(tokens) != expected_cols:
                raise DataError(
                    f"{path}: row {ln}: expected {expected_cols} columns, "
                    f"found {len(tokens)}"
                )
            try:
                rows.append([float(tok) for tok in tokens])
            except ValueError:
                bad = next(t for t in tokens if not _is_number(t))
                raise DataError(
                    f"{path}: line {ln}: non-numeric value {bad.strip()!r}"
                ) from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    mat = np.asarray(rows, dtype=np.float64)
    finite = np.isfinite(mat).all(axis=1)
    if not finite.all():
        raise DataError(f"{path}: row {int(np.argmin(finite)) + 1}: non-finite value")
    return mat


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_labels(path, n_expected: int) -> np.ndarray:
    """One integer class label per line, n_expected of them, all >= 0."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            tok = line.strip()
            if not tok:
                continue
            try:
                labels.append(int(tok))
            except ValueError:
                raise DataError(
                    f"{path}: line {ln}: labels must be integers, got {tok!r}"
                ) from None
            if labels[-1] < 0:
                raise DataError(f"{path}: line {ln}: labels must be >= 0")
    if len(labels) != n_expected:
        raise DataError(
            f"{path}: expected {n_expected} labels, found {len(labels)}"
        )
    return np.asarray(labels, dtype=np.int64)


def block_labels(n_total: int, block: int) -> np.ndarray:
    """Derive labels from row position for class-blocked files."""
    if n_total % block != 0:
        raise DataError(
            f"cannot derive block labels: {n_total} rows not divisible by {block}"
        )
    return np.repeat(np.arange(n_total // block, dtype=np.int64), block)


def center_train_query(train: np.ndarray, query: np.ndarray | None, modality_id: int = 1):
    """Subtract the train column means from both matrices.

    Returns (train FeatureMatrix, query FeatureMatrix or None, mean).
    Query rows are deliberately centered by the TRAIN means.
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 1:
        raise DataError(f"train matrix must be 2-d and non-empty, got {train.shape}")
    mean = train.mean(axis=0)
    train_fm = FeatureMatrix(data=train - mean, modality_id=modality_id, mean=mean)
    query_fm = None
    if query is not None and np.asarray(query).shape[0] > 0:
        query = np.asarray(query, dtype=np.float64)
        if query.ndim != 2 or query.shape[1] != train.shape[1]:
            raise DataError(
                f"query matrix shape {query.shape} does not match train "
                f"({train.shape[1]} columns)"
            )
        query_fm = FeatureMatrix(data=query - mean, modality_id=modality_id, mean=mean)
    return train_fm, query_fm, mean


@dataclass(frozen=True)
class LabeledSplit:
    train_features: tuple[FeatureMatrix, ...]
    train_labels: np.ndarray
    query_features: tuple[FeatureMatrix, ...] | None
    query_labels: np.ndarray | None
    train_indices: np.ndarray
    query_indices: np.ndarray


def split_dataset(manifest: DatasetManifest) -> LabeledSplit:
    """Load, permute, split and center every modality consistently.

    A seeded uniform permutation of all rows is drawn once; the first
    train_count entries become the train set and the next query_count
    the query set, identically across modalities and labels.
    """
    mats = []
    for v, mpath, dim in manifest.modality_files:
        if not mpath.is_file():
            raise DataError(f"modality.{v}.path: {mpath}: no such file")
        mats.append(load_matrix(mpath, dim))
    counts = {m.shape[0] for m in mats}
    if len(counts) != 1:
        raise DataError(
            f"modality files disagree on sample count: {sorted(counts)}"
        )
    n_total = mats[0].shape[0]
    if manifest.labels_path is not None:
        if not manifest.labels_path.is_file():
            raise DataError(f"labels.path: {manifest.labels_path}: no such file")
        labels = load_labels(manifest.labels_path, n_total)
    else:
        labels = block_labels(n_total, manifest.labels_block)
    train_count = manifest.train_count
    query_count = (
        manifest.query_count if manifest.query_count is not None else n_total - train_count
    )
    if train_count < 2:
        raise DataError(f"split.train must be >= 2, got {train_count}")
    if query_count < 0:
        raise DataError(f"split.query must be >= 0, got {query_count}")
    if train_count + query_count > n_total:
        raise DataError(
            f"split asks for {train_count}+{query_count} rows but files have {n_total}"
        )
    perm = named_rng(manifest.seed, "split").permutation(n_total)
    train_idx = perm[:train_count]
    query_idx = perm[train_count : train_count + query_count]
    if query_count == 0:
        log.warning("query split is empty; evaluation will be impossible")
    train_fms = []
    query_fms = []
    for (v, _, _), mat in zip(manifest.modality_files, mats):
        tr, qu, _ = center_train_query(
            mat[train_idx], mat[query_idx] if query_count else None, modality_id=v
        )
        train_fms.append(tr)
        query_fms.append(qu)
    return LabeledSplit(
        train_features=tuple(train_fms),
        train_labels=labels[train_idx],
        query_features=tuple(query_fms) if query_count else None,
        query_labels=labels[query_idx] if query_count else None,
        train_indices=train_idx,
        query_indices=query_idx,
    )


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise DataError(f"{self.path}: truncated model file")
        vals = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return vals

    def array(self, count: int) -> np.ndarray:
        size = count * 8
        if self.pos + size > len(self.blob):
            raise DataError(f"{self.path}: truncated model file")
        arr = np.frombuffer(self.blob, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return arr.astype(np.float64)


def save_model(model: UchModel, path) -> None:
    """Serialize a model to the versioned binary container."""
    nmod = len(model.projections)
    r = model.nbits
    n = model.training_codes.n
    hyper = model.hyper
    lambdas = tuple(hyper.get("lambdas", (0.0,) * nmod))
    if len(lambdas) != nmod:
        raise DataError("hyper lambdas must match the modality count")
    target = hyper.get("fit_target", "relaxed")
    if target not in _TARGET_CODES:
        raise DataError(f"unknown fit target {target!r}")
    parts = [MODEL_MAGIC, struct.pack("<H", MODEL_VERSION)]
    parts.append(
        struct.pack(
            "<BBBII", _VARIANT_CODES[model.variant], _TARGET_CODES[target], nmod, r, n
        )
    )
    parts.append(struct.pack(f"<{nmod}I", *(p.shape[0] for p in model.projections)))
    parts.append(struct.pack("<d", model.gamma))
    parts.append(struct.pack(f"<{nmod}d", *lambdas))
    parts.append(
        struct.pack(
            "<ddIdIdQ",
            float(hyper.get("rho", 0.0)),
            float(hyper.get("mu", 0.0)),
            int(hyper.get("graph_size", 0)),
            float(hyper.get("delta", 0.0)),
            int(hyper.get("max_iters", 0)),
            float(hyper.get("tol", 0.0)),
            int(hyper.get("seed", 0)),
        )
    )
    parts.append(np.asarray(model.alphas, dtype="<f8").tobytes())
    for mean in model.means:
        parts.append(np.asarray(mean, dtype="<f8").tobytes())
    for p in model.projections:
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    parts.append(model.training_codes.codes.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> UchModel:
    """Read a model container; exact inverse of save_model."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    rd = _Reader(path.read_bytes(), path)
    if rd.take("4s")[0] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file (bad magic)")
    (version,) = rd.take("<H")
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    variant_code, target_code, nmod, r, n = rd.take("<BBBII")
    if variant_code not in _VARIANT_NAMES:
        raise DataError(f"{path}: unknown variant code {variant_code}")
    if target_code not in _TARGET_NAMES:
        raise DataError(f"{path}: unknown fit-target code {target_code}")
    dims = rd.take(f"<{nmod}I")
    (gamma,) = rd.take("<d")
    lambdas = rd.take(f"<{nmod}d")
    rho, mu, graph_size, delta, max_iters, tol, seed = rd.take("<ddIdIdQ")
    alphas = rd.array(nmod)
    means = tuple(rd.array(d) for d in dims)
    projections = tuple(rd.array(d * r).reshape(d, r) for d in dims)
    codes_f = rd.array(n * r).reshape(n, r)
    if rd.pos != len(rd.blob):
        raise DataError(f"{path}: trailing bytes after model payload")
    if not np.all(np.abs(codes_f) == 1.0):
        raise DataError(f"{path}: stored codes are not sign values")
    return UchModel(
        projections=projections,
        means=means,
        alphas=alphas,
        training_codes=CodeMatrix(codes=codes_f.astype(np.int8)),
        gamma=gamma,
        variant=_VARIANT_NAMES[variant_code],
        hyper={
            "lambdas": tuple(lambdas),
            "rho": rho,
            "mu": mu,
            "fit_target": _TARGET_NAMES[target_code],
            "graph_size": int(graph_size),
            "delta": delta,
            "max_iters": int(max_iters),
            "tol": tol,
            "seed": int(seed),
        },
    )
