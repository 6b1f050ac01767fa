"""Core value types plus the shared numerics used across training and eval.

Conventions: samples are rows everywhere, so a modality with n samples of
dimension d is an (n, d) matrix and a projection maps it to (n, r).  Codes
live in {-1, +1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError


def _check_matrix(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise DataError(f"{name} must be 2-d, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DataError(f"{name} must be non-empty, got shape {a.shape}")
    return a


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in {name}")


@dataclass(frozen=True)
class FeatureMatrix:
    """One modality's samples after centering, one row per sample.

    `mean` is the column mean that was subtracted (the train-split mean,
    also applied to query rows), kept so raw inputs can be centered the
    same way later.
    """

    data: np.ndarray
    modality_id: int
    mean: np.ndarray

    def __post_init__(self):
        data = _check_matrix("feature matrix", self.data)
        _check_finite("feature matrix", data)
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.shape != (data.shape[1],):
            raise DataError(
                f"mean has shape {mean.shape}, expected ({data.shape[1]},)"
            )
        if self.modality_id < 1:
            raise DataError(f"modality_id must be >= 1, got {self.modality_id}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ConcatenatedFeatures:
    """Row-wise concatenation of every modality, used to build the graph."""

    data: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        data = _check_matrix("concatenated features", self.data)
        if sum(self.dims) != data.shape[1]:
            raise DataError(
                f"dims {self.dims} sum to {sum(self.dims)}, "
                f"but data has {data.shape[1]} columns"
            )


def concatenate_features(features: list[FeatureMatrix]) -> ConcatenatedFeatures:
    """Join per-modality matrices column-wise; all must share a sample count."""
    if not features:
        raise DataError("no modalities to concatenate")
    counts = {f.n for f in features}
    if len(counts) != 1:
        raise DataError(f"modalities disagree on sample count: {sorted(counts)}")
    data = np.concatenate([f.data for f in features], axis=1)
    return ConcatenatedFeatures(data=data, dims=tuple(f.dim for f in features))


@dataclass(frozen=True)
class CodeMatrix:
    """Binary codes, one row per sample, entries in {-1, +1}."""

    codes: np.ndarray

    def __post_init__(self):
        codes = _check_matrix("code matrix", self.codes)
        if codes.dtype != np.int8:
            raise DataError(f"codes must be int8, got {codes.dtype}")
        if not np.all(np.abs(codes) == 1):
            raise DataError("codes must contain only -1 and +1")

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def nbits(self) -> int:
        return self.codes.shape[1]


def sign_quantize(x: np.ndarray) -> CodeMatrix:
    """Elementwise sign with sign(0) = +1, returned as a CodeMatrix."""
    x = _check_matrix("quantization input", np.asarray(x, dtype=np.float64))
    _check_finite("quantization input", x)
    return CodeMatrix(codes=np.where(x < 0, -1, 1).astype(np.int8))


def l21_norm(m: np.ndarray) -> float:
    """Sum of the euclidean norms of the rows."""
    m = _check_matrix("l21 input", np.asarray(m, dtype=np.float64))
    _check_finite("l21 input", m)
    return float(np.sqrt((m * m).sum(axis=1)).sum())


@dataclass(frozen=True)
class UchModel:
    """Trained hashing model: one projection per modality plus the shared
    training codes and the modality weights the optimizer settled on."""

    projections: tuple[np.ndarray, ...]
    means: tuple[np.ndarray, ...]
    alphas: np.ndarray
    training_codes: CodeMatrix
    gamma: float
    variant: str
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("lle", "lpp"):
            raise DataError(f"unknown variant {self.variant!r}")
        if len(self.projections) != len(self.means):
            raise DataError("projections and means disagree on modality count")
        if len(self.projections) < 1:
            raise DataError("model needs at least one modality")
        r = self.training_codes.nbits
        for v, (p, mu) in enumerate(zip(self.projections, self.means), start=1):
            p = _check_matrix(f"projection {v}", p)
            _check_finite(f"projection {v}", p)
            if p.shape[1] != r:
                raise DataError(
                    f"projection {v} maps to {p.shape[1]} bits, codes have {r}"
                )
            if np.asarray(mu).shape != (p.shape[0],):
                raise DataError(f"mean {v} does not match projection {v} rows")
        alphas = np.asarray(self.alphas, dtype=np.float64)
        if alphas.shape != (len(self.projections),):
            raise DataError("one alpha per modality required")
        if np.any(alphas < 0) or abs(alphas.sum() - 1.0) > 1e-9:
            raise DataError("alphas must be non-negative and sum to 1")
        if not self.gamma > 1.0:
            raise DataError(f"gamma must be > 1, got {self.gamma}")

    @property
    def nbits(self) -> int:
        return self.training_codes.nbits

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(p.shape[0] for p in self.projections)


def relaxed_objective(
    f: np.ndarray,
    b: CodeMatrix,
    projections: list[np.ndarray],
    alphas: np.ndarray,
    gamma: float,
    lambdas: list[float],
    rho: float,
    mu: float,
    graph,
    features: list[np.ndarray],
) -> float:
    """The monitored training objective.

    Sum over modalities of alpha_v^gamma (||X_v P_v - F||_F^2
    + lambda_v * l21(P_v)), plus rho times the graph smoothness of F and
    mu times ||F - B||_F^2.  `graph` must provide smoothness(f).
    """
    f = _check_matrix("relaxed codes", np.asarray(f, dtype=np.float64))
    _check_finite("relaxed codes", f)
    if f.shape != b.codes.shape:
        raise DataError(f"F shape {f.shape} does not match codes {b.codes.shape}")
    if not (len(projections) == len(features) == len(lambdas) == len(alphas)):
        raise DataError("per-modality argument lists disagree on length")
    total = 0.0
    for x, p, a, lam in zip(features, projections, alphas, lambdas):
        if x.shape[0] != f.shape[0]:
            raise DataError("feature rows do not match code rows")
        resid = x @ p - f
        total += a**gamma * (float((resid * resid).sum()) + lam * l21_norm(p))
    total += rho * float(graph.smoothness(f))
    gap = f - b.codes
    total += mu * float((gap * gap).sum())
    if not np.isfinite(total):
        raise NumericalError("relaxed objective is non-finite")
    return total
