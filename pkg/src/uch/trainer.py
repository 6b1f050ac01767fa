"""Alternating minimization of the hashing objective.

One training iteration refreshes the IRLS reweighting, solves the
continuous codes F in closed form, quantizes them to B, re-fits every
projection, and rebalances the modality weights.  All four updates are
closed-form linear algebra; the n x n (or anchor-factored) system is
factored once and reused until the weights move.

Two fit targets are supported.  The default, "relaxed", fits the
projections and modality weights to the continuous F, which makes every
update the exact minimizer of the monitored objective over its block,
so the objective trace is non-increasing; the quantization term
mu*||F - B||^2 is what anchors the code scale, hence mu must stay
positive in this mode or the codes shrink toward a degenerate subspace.
"binary" instead fits projections and weights to the quantized B
(the classical printed form of the update); it produces very similar
codes but the monitored objective may tick upward, since the P and
alpha blocks then optimize a different target than F.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NumericalError, UsageError
from .graph import AffinityGraph, GraphLaplacian, anchor_graph, anchor_select, laplacian, lle_weights
from .model import (
    CodeMatrix,
    UchModel,
    concatenate_features,
    l21_norm,
    relaxed_objective,
    sign_quantize,
)
from .seeds import named_rng

log = logging.getLogger(__name__)

# Denominator guard in the IRLS reweighting, a fixed constant of the method.
IRLS_EPS = 1e-5

# Refactor the code-update system only when the effective weight sum moved.
_REFACTOR_TOL = 1e-12


@dataclass
class TrainConfig:
    variant: str = "lle"
    bits: int = 64
    gamma: float = 2.0
    lambdas: tuple[float, ...] = (1.0, 1.0)
    rho: float = 1.0
    mu: float = 0.5
    fit_target: str = "relaxed"
    neighbors: int = 50
    anchors: int = 100
    s_nearest: int = 5
    delta: float | None = None
    ridge: float = 1e-3
    anchor_method: str = "kmeans"
    max_iters: int = 50
    tol: float = 1e-5
    seed: int = 0
    log_path: str | None = None

    def validate(self) -> None:
        if self.variant not in ("lle", "lpp"):
            raise UsageError(f"variant must be lle or lpp, got {self.variant!r}")
        if self.bits < 1:
            raise UsageError(f"bits must be >= 1, got {self.bits}")
        if not self.gamma > 1.0:
            raise UsageError(f"gamma must be > 1, got {self.gamma}")
        if any(lam < 0 for lam in self.lambdas):
            raise UsageError(f"lambdas must be >= 0, got {self.lambdas}")
        if self.rho < 0 or self.mu < 0:
            raise UsageError("rho and mu must be >= 0")
        if self.fit_target not in ("relaxed", "binary"):
            raise UsageError(
                f"fit_target must be relaxed or binary, got {self.fit_target!r}"
            )
        if self.fit_target == "relaxed" and self.mu == 0:
            log.warning(
                "fit_target=relaxed with mu=0 leaves the codes unanchored; "
                "they will shrink toward a degenerate subspace"
            )
        if self.max_iters < 1:
            raise UsageError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise UsageError(f"tol must be >= 0, got {self.tol}")


@dataclass
class TrainState:
    f: np.ndarray
    b: CodeMatrix
    p: list[np.ndarray]
    d_diag: list[np.ndarray]
    alpha: np.ndarray
    objective_trace: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class TrainResult:
    model: UchModel
    objective_trace: list[float]
    n_iters: int


def init_state(xs: list[np.ndarray], r: int, seed: int) -> TrainState:
    """Seeded start: B from signs of a normal draw, projections from
    scaled normals, uniform modality weights, F = B.

    Each projection draws from a stream keyed by its dimension, so
    modalities with identical shape start identical and duplicated
    inputs evolve symmetrically.
    """
    n = xs[0].shape[0]
    b = sign_quantize(named_rng(seed, "init", 0).standard_normal((n, r)))
    p = [
        named_rng(seed, "init", x.shape[1]).standard_normal((x.shape[1], r))
        / np.sqrt(x.shape[1])
        for x in xs
    ]
    nmod = len(xs)
    return TrainState(
        f=b.codes.astype(np.float64),
        b=b,
        p=p,
        d_diag=[irls_weights(pv) for pv in p],
        alpha=np.full(nmod, 1.0 / nmod),
    )


def irls_weights(p: np.ndarray, eps: float = IRLS_EPS) -> np.ndarray:
    """Diagonal reweighting 1 / (2 ||row|| + eps) for the l2,1 penalty."""
    return 1.0 / (2.0 * np.sqrt((p * p).sum(axis=1)) + eps)


def _fit_rhs(xs, projections, alphas, gamma):
    """Weighted sum of projected modalities and the effective weight sum."""
    weights = np.asarray(alphas, dtype=np.float64) ** gamma
    rhs = np.zeros((xs[0].shape[0], projections[0].shape[1]))
    for x, p, w in zip(xs, projections, weights):
        rhs += w * (x @ p)
    return rhs, float(weights.sum())


class _LleSolver:
    """Factors (shift*I + rho*(I-W)^T(I-W)) once per shift value."""

    def __init__(self, graph: AffinityGraph, rho: float):
        n = graph.n
        iw = sp.identity(n, format="csr") - graph.weights
        self.t = rho * (iw.T @ iw).toarray()
        self._shift = None
        self._factor = None

    def solve(self, shift: float, rhs: np.ndarray) -> np.ndarray:
        if self._shift is None or abs(shift - self._shift) > _REFACTOR_TOL:
            a = self.t.copy()
            a[np.diag_indices_from(a)] += shift
            try:
                self._factor = scipy.linalg.cho_factor(a, check_finite=False)
            except np.linalg.LinAlgError:
                raise NumericalError("code-update system is not positive definite") from None
            self._shift = shift
        return scipy.linalg.cho_solve(self._factor, rhs, check_finite=False)


class _LppSolver:
    """Solves (shift*I + rho*L) F = rhs through the anchor factorization.

    With L = I - Z lam^-1 Z^T the system is c*I - rho*Z lam^-1 Z^T for
    c = shift + rho, and its inverse is rhs/c plus a correction through
    an m x m system: cost O(n m r + m^3), nothing n x n is formed.  The
    inner matrix lam/rho - Z^T Z / c is positive definite because
    Z^T Z <= lam in the Loewner order and c > rho.
    """

    def __init__(self, lap: GraphLaplacian, rho: float):
        self.z = lap.z
        self.lam = lap.lambda_diag
        self.rho = rho
        self.ztz = (lap.z.T @ lap.z).toarray()
        self._c = None
        self._factor = None

    def solve(self, shift: float, rhs: np.ndarray) -> np.ndarray:
        if shift <= 0:
            raise NumericalError("code-update system needs a positive shift")
        if self.rho == 0:
            return rhs / shift
        c = shift + self.rho
        if self._c is None or abs(c - self._c) > _REFACTOR_TOL:
            inner = np.diag(self.lam / self.rho) - self.ztz / c
            try:
                self._factor = scipy.linalg.cho_factor(inner, check_finite=False)
            except np.linalg.LinAlgError:
                raise NumericalError("anchor code-update system is not positive definite") from None
            self._c = c
        ztr = self.z.T @ rhs
        return rhs / c + (self.z @ scipy.linalg.cho_solve(self._factor, ztr, check_finite=False)) / (c * c)


def update_codes_lle(xs, projections, alphas, gamma, graph, rho, mu, b, solver=None):
    """Closed-form F under the reconstruction-weight penalty, then B = sgn(F).

    Solves (alpha_eff*I + rho*(I-W)^T(I-W) + mu*I) F = sum_v a_v^g X_v P_v + mu*B.
    mu = 0 reproduces the plain update; mu > 0 adds the binary-gap pull.
    """
    rhs, alpha_eff = _fit_rhs(xs, projections, alphas, gamma)
    if mu > 0:
        rhs = rhs + mu * b.codes
    if solver is None:
        solver = _LleSolver(graph, rho)
    f = solver.solve(alpha_eff + mu, rhs)
    return f, sign_quantize(f)


def update_codes_lpp(xs, projections, alphas, gamma, lap, rho, mu, b, solver=None):
    """Closed-form F under the anchor Laplacian, then B = sgn(F).

    Solves (alpha_eff*I + rho*L + mu*I) F = sum_v a_v^g X_v P_v + mu*B via
    the factored form of L.  mu = 0 reproduces the plain update.
    """
    rhs, alpha_eff = _fit_rhs(xs, projections, alphas, gamma)
    if mu > 0:
        rhs = rhs + mu * b.codes
    if solver is None:
        solver = _LppSolver(lap, rho)
    f = solver.solve(alpha_eff + mu, rhs)
    return f, sign_quantize(f)


def update_projection(x, target, lam, d_diag, xtx=None):
    """Reweighted ridge fit of one modality onto the codes:
    (X^T X + lam * diag(d)) P = X^T target."""
    if np.any(np.asarray(d_diag) <= 0):
        raise NumericalError("IRLS weights must be strictly positive")
    a = (x.T @ x if xtx is None else xtx.copy())
    idx = np.diag_indices_from(a)
    a[idx] = a[idx] + lam * np.asarray(d_diag, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(a, check_finite=False)
    except np.linalg.LinAlgError:
        hint = "; set lambda > 0" if lam == 0 else ""
        raise NumericalError(f"projection system is singular{hint}") from None
    return scipy.linalg.cho_solve(factor, x.T @ target, check_finite=False)


def modality_costs(xs, projections, target, lambdas):
    """Per-modality fit cost against the given code target (binary or
    continuous): squared residual plus the weighted l2,1 penalty.
    Drives the weight rebalancing."""
    costs = []
    for x, p, lam in zip(xs, projections, lambdas):
        resid = x @ p - target
        costs.append(float((resid * resid).sum()) + lam * l21_norm(p))
    return costs


def update_modality_weights(costs, gamma) -> np.ndarray:
    """Closed-form simplex weights: alpha_v proportional to
    (gamma * C_v)^(1/(1-gamma)); cheaper modalities weigh more."""
    if not gamma > 1.0:
        raise UsageError(f"gamma must be > 1, got {gamma}")
    c = np.asarray(costs, dtype=np.float64)
    if np.any(c <= 0):
        log.warning("clamping %d non-positive modality costs", int((c <= 0).sum()))
        c = np.where(c <= 0, 1e-12, c)
    w = (gamma * c) ** (1.0 / (1.0 - gamma))
    return w / w.sum()


def build_graph(split, config: TrainConfig):
    """Construct the affinity structure on concatenated train features."""
    y = concatenate_features(split.train_features)
    if config.variant == "lle":
        graph = lle_weights(y, config.neighbors, config.ridge)
        return graph, None
    centers = anchor_select(y, config.anchors, config.seed, config.anchor_method)
    s = min(config.s_nearest, centers.shape[0])
    graph = anchor_graph(y, centers, s, config.delta)
    return graph, laplacian(graph)


def train(split, config: TrainConfig, graph_pair=None) -> TrainResult:
    """Run the alternating updates until the monitored objective settles.

    Per iteration, in order: refresh the IRLS diagonals, solve F and
    quantize to B, re-fit projections, rebalance modality weights.  The
    monitored objective is evaluated at the end of each iteration; the
    logged per-modality costs are the ones the weight update consumed.

    graph_pair optionally injects a prebuilt (graph, laplacian) pair,
    e.g. when sweeping penalties with the neighborhood fixed; it must
    match what build_graph(split, config) would produce.
    """
    config.validate()
    xs = [fm.data for fm in split.train_features]
    if len(xs) != len(config.lambdas):
        raise UsageError(
            f"{len(config.lambdas)} lambdas for {len(xs)} modalities"
        )
    graph, lap = graph_pair if graph_pair is not None else build_graph(split, config)
    if config.variant == "lle":
        solver = _LleSolver(graph, config.rho)
    else:
        solver = _LppSolver(lap, config.rho)
    xtx = [x.T @ x for x in xs]
    state = init_state(xs, config.bits, config.seed)
    log_rows = []
    n_iters = 0
    update_codes = update_codes_lle if config.variant == "lle" else update_codes_lpp
    graph_or_lap = graph if config.variant == "lle" else lap
    for t in range(1, config.max_iters + 1):
        n_iters = t
        state.d_diag = [irls_weights(pv) for pv in state.p]
        state.f, state.b = update_codes(
            xs, state.p, state.alpha, config.gamma, graph_or_lap,
            config.rho, config.mu, state.b, solver=solver,
        )
        if config.fit_target == "relaxed":
            target = state.f
        else:
            target = state.b.codes.astype(np.float64)
        state.p = [
            update_projection(x, target, lam, dd, xtx=g)
            for x, lam, dd, g in zip(xs, config.lambdas, state.d_diag, xtx)
        ]
        costs = modality_costs(xs, state.p, target, config.lambdas)
        state.alpha = update_modality_weights(costs, config.gamma)
        try:
            obj = relaxed_objective(
                state.f, state.b, state.p, state.alpha, config.gamma,
                list(config.lambdas), config.rho, config.mu, graph, xs,
            )
        except NumericalError as err:
            raise NumericalError(f"{err} at iteration {t}") from None
        state.objective_trace.append(obj)
        log_rows.append([t, obj, *state.alpha, *costs])
        log.debug("iter %d objective %.6g alpha %s", t, obj, state.alpha)
        if not np.isfinite(config.tol):
            break
        if t > 1:
            prev = state.objective_trace[-2]
            if abs(obj - prev) / max(abs(prev), 1e-12) < config.tol:
                break
    if config.log_path:
        _write_log(config.log_path, log_rows, len(xs))
    model = UchModel(
        projections=tuple(state.p),
        means=tuple(fm.mean for fm in split.train_features),
        alphas=state.alpha,
        training_codes=state.b,
        gamma=config.gamma,
        variant=config.variant,
        hyper=_hyper_record(config, graph),
    )
    return TrainResult(model=model, objective_trace=state.objective_trace, n_iters=n_iters)


def _hyper_record(config: TrainConfig, graph) -> dict:
    rec = {
        "lambdas": tuple(config.lambdas),
        "rho": config.rho,
        "mu": config.mu,
        "fit_target": config.fit_target,
        "graph_size": config.neighbors if config.variant == "lle" else graph.z.shape[1],
        "delta": float(graph.delta) if config.variant == "lpp" else 0.0,
        "max_iters": config.max_iters,
        "tol": config.tol,
        "seed": config.seed,
    }
    return rec


def _write_log(path, rows, nmod):
    header = (
        ["iter", "objective"]
        + [f"alpha_{v}" for v in range(1, nmod + 1)]
        + [f"cost_{v}" for v in range(1, nmod + 1)]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(
            [[f"{float(v)!r}" if isinstance(v, float) else v for v in row] for row in rows]
        )
