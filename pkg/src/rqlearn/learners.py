"""Regression and probability learners used for nuisance estimation.

The suite covers a deliberately diverse range: (possibly polynomial-expanded)
linear and logistic models, an additive natural-cubic-spline expansion, a
Nadaraya-Watson kernel smoother, a bagged-tree forest, and a convex stack of
any of these.  All learners include an intercept internally, are deterministic
given a seed, and expose a pure ``predict``.  Probability-task predictions are
clipped to [0, 1]; bounding away from {0, 1} is the caller's concern.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import nnls
from scipy.special import expit

from . import forest as _forest
from .exceptions import (
    DegenerateLabelsError,
    PositiveDefiniteError,
    RqlearnError,
    SingularDesignError,
)

log = logging.getLogger(__name__)

KINDS = ("linear", "logistic", "additive_spline", "kernel", "random_forest", "super_learner")
TASKS = ("regression", "probability")

_SCORE_TOL = 1e-8
_MAX_IRLS = 100
_SEPARATION_RIDGE = 1e-6


def child_seed(*keys) -> int:
    """Deterministic 32-bit seed derived from a tuple of integer keys."""
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class LearnerSpec:
    """Declarative description of a learner and its hyperparameters."""

    kind: str
    task: str = "regression"
    degree: int = 1              # linear/logistic polynomial expansion
    interactions: bool = True    # degree-2 expansion: include pairwise products
    knots: int = 5               # additive_spline knots per dimension
    trees: int = 100             # random_forest
    min_leaf: int = 5
    mtry: Optional[int] = None   # default: ceil(d/3) regression, ceil(sqrt(d)) probability
    max_depth: int = 32
    bandwidth_scale: float = 1.0  # kernel
    v_folds: int = 5             # super_learner internal CV
    ridge: float = 1e-6          # spline stabilization
    base: Tuple["LearnerSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        if not 0 <= self.knots <= 50:
            raise ValueError("knots must lie in [0, 50]")
        if not 1 <= self.trees <= 5000:
            raise ValueError("trees must lie in [1, 5000]")
        if self.min_leaf < 1 or self.max_depth < 1:
            raise ValueError("min_leaf and max_depth must be positive")
        if self.bandwidth_scale <= 0:
            raise ValueError("bandwidth_scale must be positive")
        if self.v_folds < 2:
            raise ValueError("v_folds must be at least 2")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.kind == "super_learner":
            if not self.base:
                raise ValueError("super_learner needs a nonempty base list")
            if any(b.kind == "super_learner" for b in self.base):
                raise ValueError("super_learner bases cannot be nested stacks")
        if self.kind == "logistic" and self.task != "probability":
            raise ValueError("logistic learners are probability-task only")


def expand_poly(X: np.ndarray, degree: int, interactions: bool = True) -> np.ndarray:
    """Degree-2 expansion appends squares and, optionally, pairwise products."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if degree == 1:
        return X
    d = X.shape[1]
    cols = [X, X**2]
    if interactions:
        for i in range(d):
            for j in range(i + 1, d):
                cols.append(X[:, i : i + 1] * X[:, j : j + 1])
    return np.column_stack(cols)


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def fit_least_squares(X: np.ndarray, y: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
    """Weighted least squares via SVD with an explicit rank check.

    Returns the minimizer of sum_i w_i (y_i - x_i' beta)^2; the result
    satisfies the weighted normal equations to ~1e-8 relative accuracy.

    Raises
    ------
    SingularDesignError
        If n < d, weights degenerate, or the weighted design is numerically
        rank deficient (condition estimate attached).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < d:
        raise SingularDesignError(f"need at least {d} rows, got {n}")
    if w is None:
        A, b = X, y
    else:
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0) or w.sum() <= 0:
            raise SingularDesignError("weights must be nonnegative with positive sum")
        sw = np.sqrt(w)
        A, b = X * sw[:, None], y * sw
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[0] <= 0 or s[-1] <= s[0] * 1e-12:
        cond = np.inf if s[-1] == 0 else float(s[0] / s[-1])
        raise SingularDesignError("rank-deficient weighted design", cond=cond)
    return vt.T @ ((u.T @ b) / s)


def solve_spd(mat: np.ndarray, rhs: np.ndarray, jitter: float = 1e-10, jitter_max: float = 1e-6):
    """Solve a symmetric positive-definite system with escalating jitter.

    Jitter (scaled by the mean diagonal) starts at 1e-10 and grows tenfold up
    to 1e-6 before giving up; near-singularity is only guaranteed away
    asymptotically, so small samples occasionally need the help.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if not np.isfinite(mat).all():
        raise PositiveDefiniteError("matrix has non-finite entries", cond=np.inf)
    scale = float(np.mean(np.abs(np.diag(mat))))
    if scale <= 0.0:
        raise PositiveDefiniteError("matrix has a zero diagonal", cond=np.inf)
    eps = 0.0
    while True:
        try:
            c = np.linalg.cholesky(mat + eps * scale * np.eye(mat.shape[0]))
            z = np.linalg.solve(c, rhs)
            out = np.linalg.solve(c.T, z)
            if np.isfinite(out).all():
                return out
        except np.linalg.LinAlgError:
            pass
        eps = jitter if eps == 0.0 else eps * 10.0
        if eps > jitter_max:
            svals = np.linalg.svd(mat, compute_uv=False)
            cond = np.inf if svals[-1] == 0 else float(svals[0] / svals[-1])
            raise PositiveDefiniteError("matrix not positive definite after jitter", cond=cond)


def fit_logistic_irls(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Bernoulli MLE by iteratively reweighted least squares.

    Converged when the max absolute score falls below 1e-8 within 100
    iterations.  Divergence (separation) falls back to a ridge-stabilized
    fit (lambda = 1e-6) and sets the returned flag.

    Returns (coefficients, separation_flag).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < d:
        raise SingularDesignError(f"need at least {d} rows, got {n}")
    if y.min() == y.max():
        raise DegenerateLabelsError("both classes must be present")

    beta = np.zeros(d)
    for _ in range(_MAX_IRLS):
        p = expit(X @ beta)
        score = X.T @ (y - p)
        if np.max(np.abs(score)) < _SCORE_TOL:
            if _is_separated(X, y, beta):
                break
            return beta, False
        h = X.T @ (X * (p * (1.0 - p))[:, None])
        try:
            beta = beta + solve_spd(h, score)
        except PositiveDefiniteError:
            break
        if np.max(np.abs(beta)) > 1e2:
            break
    return _ridge_logistic(X, y, _SEPARATION_RIDGE), True


def _is_separated(X, y, beta) -> bool:
    # (Quasi-)separation: the fitted direction classifies every observation
    # weakly correctly with saturated log-odds somewhere.
    margins = (2.0 * y - 1.0) * (X @ beta)
    return bool(np.all(margins >= 0.0) and margins.max() > 10.0)


def _ridge_logistic(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    # Penalized Newton with step halving; strictly convex, so this converges.
    n, d = X.shape
    beta = np.zeros(d)

    def obj(b):
        eta = X @ b
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * lam * b @ b)

    cur = obj(beta)
    for _ in range(200):
        p = expit(X @ beta)
        grad = X.T @ (y - p) - lam * beta
        if np.max(np.abs(grad)) < _SCORE_TOL:
            break
        h = X.T @ (X * (p * (1.0 - p))[:, None]) + lam * np.eye(d)
        step = solve_spd(h, grad)
        t = 1.0
        while t > 1e-8 and obj(beta + t * step) > cur:
            t *= 0.5
        beta = beta + t * step
        cur = obj(beta)
    return beta


def _natural_spline_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    # Natural cubic basis beyond the linear term: K knots yield K-2 columns.
    k = knots
    last = k[-1]

    def d(j):
        return (np.clip(x - k[j], 0.0, None) ** 3 - np.clip(x - last, 0.0, None) ** 3) / (last - k[j])

    dlast = d(len(k) - 2)
    return np.column_stack([d(j) - dlast for j in range(len(k) - 2)])


@dataclass(frozen=True)
class FittedModel:
    """Base for fitted learners; predict is pure and deterministic."""

    kind: str
    task: str
    n_features: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = self._predict(np.asarray(X, dtype=np.float64))
        if self.task == "probability":
            out = np.clip(out, 0.0, 1.0)
        return out

    def _predict(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class LinearFit(FittedModel):
    coef: np.ndarray = field(default=None)
    degree: int = 1
    interactions: bool = True

    def _predict(self, X):
        return _with_intercept(expand_poly(X, self.degree, self.interactions)) @ self.coef


@dataclass(frozen=True)
class LogisticFit(FittedModel):
    coef: np.ndarray = field(default=None)
    degree: int = 1
    interactions: bool = True
    separation: bool = False

    def _predict(self, X):
        return expit(_with_intercept(expand_poly(X, self.degree, self.interactions)) @ self.coef)


@dataclass(frozen=True)
class SplineFit(FittedModel):
    coef: np.ndarray = field(default=None)
    knots: tuple = ()            # per-dim knot arrays (possibly empty)
    centers: np.ndarray = field(default=None)
    scales: np.ndarray = field(default=None)

    def _basis(self, X):
        cols = [np.ones(X.shape[0])]
        for j in range(X.shape[1]):
            xj = X[:, j]
            cols.append(xj)
            kj = self.knots[j]
            if len(kj) >= 3:
                cols.append(_natural_spline_basis(xj, np.asarray(kj)))
        raw = np.column_stack(cols)
        out = raw.copy()
        out[:, 1:] = (raw[:, 1:] - self.centers) / self.scales
        return out

    def _predict(self, X):
        return self._basis(X) @ self.coef


@dataclass(frozen=True)
class KernelFit(FittedModel):
    x_train: np.ndarray = field(default=None)
    y_train: np.ndarray = field(default=None)
    bandwidths: np.ndarray = field(default=None)
    kept: np.ndarray = field(default=None)
    fallback: float = 0.0

    def _predict(self, X):
        if self.x_train is None or self.x_train.shape[1] == 0:
            return np.full(X.shape[0], self.fallback)
        xq = X[:, self.kept] / self.bandwidths
        xt = self.x_train / self.bandwidths
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], 512):
            hi = min(lo + 512, X.shape[0])
            d2 = ((xq[lo:hi, None, :] - xt[None, :, :]) ** 2).sum(axis=2)
            wmat = np.exp(-0.5 * d2)
            den = wmat.sum(axis=1)
            num = wmat @ self.y_train
            out[lo:hi] = np.where(den > 1e-300, num / np.maximum(den, 1e-300), self.fallback)
        return out


@dataclass(frozen=True)
class ForestFit(FittedModel):
    model: object = None

    def _predict(self, X):
        return self.model.predict(X)


@dataclass(frozen=True)
class StackFit(FittedModel):
    weights: np.ndarray = field(default=None)
    models: tuple = ()
    cv_risks: np.ndarray = field(default=None)
    cv_risk_stack: float = np.nan

    def _predict(self, X):
        out = np.zeros(X.shape[0])
        for wgt, model in zip(self.weights, self.models):
            if wgt > 0.0 and model is not None:
                out += wgt * model.predict(X)
        return out


def fit_additive_spline(
    X: np.ndarray, y: np.ndarray, knots_per_dim: int, ridge: float = 1e-6, task: str = "regression"
) -> SplineFit:
    """Least squares on an additive natural-cubic-spline expansion.

    Knots sit at equally spaced quantiles per dimension; fewer than three
    distinct knots degrade that dimension to its linear term.  Non-intercept
    columns are standardized internally and ridge-penalized (lambda = 1e-6)
    for stability.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n <= d * (knots_per_dim + 3):
        raise RqlearnError(f"additive spline needs n > d*(knots+3) = {d * (knots_per_dim + 3)}, got {n}")

    knots = []
    for j in range(d):
        if knots_per_dim >= 3:
            qs = np.quantile(X[:, j], np.linspace(0, 1, knots_per_dim + 2)[1:-1])
            kj = np.unique(qs)
            knots.append(tuple(kj) if len(kj) >= 3 else ())
        else:
            knots.append(())

    shell = SplineFit(
        kind="additive_spline", task=task, n_features=d,
        coef=None, knots=tuple(knots),
        centers=np.zeros(0), scales=np.ones(0),
    )
    raw_cols = [np.ones(n)]
    for j in range(d):
        raw_cols.append(X[:, j])
        if len(knots[j]) >= 3:
            raw_cols.append(_natural_spline_basis(X[:, j], np.asarray(knots[j])))
    raw = np.column_stack(raw_cols)
    centers = raw[:, 1:].mean(axis=0)
    scales = raw[:, 1:].std(axis=0)
    scales[scales == 0.0] = 1.0
    basis = raw.copy()
    basis[:, 1:] = (raw[:, 1:] - centers) / scales

    gram = basis.T @ basis
    pen = ridge * np.eye(gram.shape[0])
    pen[0, 0] = 0.0
    coef = solve_spd(gram + pen, basis.T @ y)
    return replace(shell, coef=coef, centers=centers, scales=scales)


def fit_kernel_smoother(
    X: np.ndarray, y: np.ndarray, bandwidth_scale: float = 1.0, task: str = "regression"
) -> KernelFit:
    """Nadaraya-Watson smoother with a product Gaussian kernel.

    Per-dimension Silverman-style bandwidths sigma_j * (4/((d+2) n))^(1/(d+4));
    constant columns have zero bandwidth and are dropped with a warning.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < 10:
        raise RqlearnError("kernel smoother needs at least 10 rows")
    sig = X.std(axis=0)
    kept = sig > 0.0
    if not kept.all():
        warnings.warn(f"dropping {int((~kept).sum())} constant dimension(s) from kernel smoother")
    dk = int(kept.sum())
    if dk == 0:
        return KernelFit(kind="kernel", task=task, n_features=d,
                         x_train=None, y_train=None, bandwidths=None,
                         kept=kept, fallback=float(y.mean()))
    h = bandwidth_scale * sig[kept] * (4.0 / ((dk + 2) * n)) ** (1.0 / (dk + 4))
    return KernelFit(kind="kernel", task=task, n_features=d,
                     x_train=X[:, kept].copy(), y_train=y.copy(),
                     bandwidths=h, kept=kept, fallback=float(y.mean()))


def fit_random_forest(X: np.ndarray, y: np.ndarray, spec: LearnerSpec, seed: int) -> ForestFit:
    """Seeded bagged regression trees (probability task: mean of 0/1 leaves).

    mtry defaults to ceil(d/3) for regression and ceil(sqrt(d)) for the
    probability task; per-tree seeds are derived by counter from ``seed`` so
    predictions are bit-identical for a fixed seed regardless of schedule.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < 10:
        raise RqlearnError("random forest needs at least 10 rows")
    if spec.mtry is not None:
        mtry = spec.mtry
    elif spec.task == "probability":
        mtry = int(np.ceil(np.sqrt(d)))
    else:
        mtry = int(np.ceil(d / 3.0))
    mtry = max(1, min(mtry, d))
    model = _forest.Forest.fit(
        X, y,
        n_trees=spec.trees, min_leaf=spec.min_leaf, mtry=mtry,
        max_depth=spec.max_depth, seed=seed,
    )
    return ForestFit(kind="random_forest", task=spec.task, n_features=d, model=model)


def fit_learner(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int = 0) -> FittedModel:
    """Fit any LearnerSpec; the single dispatch point used by cross-fitting."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have matching row counts")
    if spec.task == "probability" and spec.kind in ("logistic",) and not np.isin(y, (0.0, 1.0)).all():
        raise DegenerateLabelsError("logistic learner needs 0/1 labels")

    if spec.kind == "linear":
        design = _with_intercept(expand_poly(X, spec.degree, spec.interactions))
        try:
            coef = fit_least_squares(design, y)
        except SingularDesignError:
            # Collinear expansions (e.g. a binary column equals its square)
            # fall back to the jittered normal equations.
            coef = solve_spd(design.T @ design, design.T @ y)
        return LinearFit(kind="linear", task=spec.task, n_features=X.shape[1],
                         coef=coef, degree=spec.degree, interactions=spec.interactions)
    if spec.kind == "logistic":
        design = _with_intercept(expand_poly(X, spec.degree, spec.interactions))
        coef, sep = fit_logistic_irls(design, y)
        return LogisticFit(kind="logistic", task=spec.task, n_features=X.shape[1],
                           coef=coef, degree=spec.degree, interactions=spec.interactions,
                           separation=sep)
    if spec.kind == "additive_spline":
        return fit_additive_spline(X, y, spec.knots, spec.ridge, task=spec.task)
    if spec.kind == "kernel":
        return fit_kernel_smoother(X, y, spec.bandwidth_scale, task=spec.task)
    if spec.kind == "random_forest":
        return fit_random_forest(X, y, spec, seed)
    if spec.kind == "super_learner":
        return fit_super_learner(X, y, spec.base, spec.v_folds, seed, task=spec.task)
    raise ValueError(f"unknown learner kind {spec.kind!r}")


def _cv_predictions(spec: LearnerSpec, X, y, plan, seed_key) -> np.ndarray:
    out = np.empty(X.shape[0])
    for k in range(plan.k):
        hold = plan.assignment == k
        model = fit_learner(spec, X[~hold], y[~hold], seed=child_seed(*seed_key, k))
        out[hold] = model.predict(X[hold])
    return out


def fit_super_learner(
    X: np.ndarray,
    y: np.ndarray,
    base: Tuple[LearnerSpec, ...],
    v_folds: int = 5,
    seed: int = 0,
    task: str = "regression",
) -> StackFit:
    """Convex stack of base learners weighted by cross-validated risk.

    v-fold CV predictions per base feed a sum-to-one nonnegative least
    squares problem; a base whose fit fails anywhere gets weight zero (and is
    logged), unless every base fails.  Probabilities are stacked under
    squared-error loss like any regression target.  The returned weights lie
    on the simplex and the stack's CV risk never exceeds the best single
    base's CV risk by more than 1e-8.
    """
    from .crossfit import make_folds

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if not base:
        raise ValueError("super_learner needs at least one base learner")
    n = X.shape[0]
    plan = make_folds(n, v_folds, seed=child_seed(seed, 7))

    nb = len(base)
    z = np.zeros((n, nb))
    ok = np.zeros(nb, dtype=bool)
    for b, bs in enumerate(base):
        try:
            z[:, b] = _cv_predictions(bs, X, y, plan, (seed, 11, b))
            ok[b] = np.isfinite(z[:, b]).all()
        except RqlearnError as exc:
            log.warning("super learner base %s failed (%s); weight set to 0", bs.kind, exc)
    if not ok.any():
        raise RqlearnError("all super learner base fits failed")

    if task == "probability":
        z[:, ok] = np.clip(z[:, ok], 0.0, 1.0)
    risks = np.full(nb, np.inf)
    risks[ok] = np.mean((y[:, None] - z[:, ok]) ** 2, axis=0)

    zk = z[:, ok]
    if zk.shape[1] == 1:
        w_ok = np.array([1.0])
    else:
        rho = 1e6 * (np.linalg.norm(y) + 1.0)
        a = np.vstack([zk, rho * np.ones((1, zk.shape[1]))])
        t = np.concatenate([y, [rho]])
        w_ok, _ = nnls(a, t)
        if w_ok.sum() <= 0.0:
            w_ok = np.zeros(zk.shape[1])
            w_ok[int(np.argmin(risks[ok]))] = 1.0
        w_ok = w_ok / w_ok.sum()
        # Guard the oracle property exactly: blend toward the best base if the
        # normalized solution ever loses to it.
        best = int(np.argmin(risks[ok]))
        if np.mean((y - zk @ w_ok) ** 2) > risks[ok][best]:
            u = zk @ w_ok
            dvec = zk[:, best] - u
            denom = dvec @ dvec
            if denom > 0:
                tstar = float(np.clip((y - u) @ dvec / denom, 0.0, 1.0))
                e = np.zeros_like(w_ok)
                e[best] = 1.0
                w_ok = (1.0 - tstar) * w_ok + tstar * e

    weights = np.zeros(nb)
    weights[ok] = w_ok
    cv_risk_stack = float(np.mean((y - z[:, ok] @ w_ok) ** 2))

    models = []
    for b, bs in enumerate(base):
        if weights[b] > 0.0:
            models.append(fit_learner(bs, X, y, seed=child_seed(seed, 13, b)))
        else:
            models.append(None)
    return StackFit(kind="super_learner", task=task, n_features=X.shape[1],
                    weights=weights, models=tuple(models),
                    cv_risks=risks, cv_risk_stack=cv_risk_stack)


def cv_risk(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, v_folds: int, seed: int = 0) -> float:
    """Mean squared prediction error over deterministic v-fold splits."""
    from .crossfit import make_folds

    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n // v_folds < 2:
        raise RqlearnError(f"cv_risk needs folds with at least 2 rows (n={n}, v={v_folds})")
    plan = make_folds(n, v_folds, seed=child_seed(seed, 3))
    preds = _cv_predictions(spec, X, y, plan, (seed, 5))
    return float(np.mean((y - preds) ** 2))
