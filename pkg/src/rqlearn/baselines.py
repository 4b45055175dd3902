"""Comparator estimators and bootstrap inference.

Standard Q-learning posits linear working models for the full Q-functions
(main effects plus treatment-by-modifier interactions) and backward-inducts
through the fitted maximum.  dWOLS is the same backward induction run as
weighted least squares with balancing weights |A - pihat| from stage-specific
logistic propensities.  The two share one code path: dWOLS with unit weights
reproduces standard Q-learning bit for bit.  First-stage confidence intervals
can come from the n-out-of-n bootstrap or from an m-out-of-n variant whose
resample size shrinks with an estimated degree of non-regularity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .data_model import Dataset, StageDesign, build_design_matrices
from .exceptions import RqlearnError
from .learners import child_seed, fit_least_squares, fit_logistic_irls
from .robust_q import Regime

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ComparatorFit:
    """Interaction (blip) coefficients from a two-stage working-model fit."""

    beta2: np.ndarray
    beta1: np.ndarray
    main2: np.ndarray
    main1: np.ndarray

    @property
    def regime(self) -> Regime:
        return Regime(beta1=self.beta1, beta2=self.beta2)


def _main_effects(data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    ones = np.ones(data.n)
    m2 = np.column_stack([ones, data.x1, data.a1.astype(np.float64), data.x2])
    m1 = np.column_stack([ones, data.x1])
    return m2, m1


def _backward_wls(
    data: Dataset,
    design: StageDesign,
    w2: Optional[np.ndarray],
    w1: Optional[np.ndarray],
) -> ComparatorFit:
    mats = build_design_matrices(data, design)
    m2, m1 = _main_effects(data)
    mask = data.a2_observed

    x2fit = np.column_stack([m2, data.a2_filled[:, None] * mats.s])
    b2 = fit_least_squares(x2fit[mask], data.y[mask], None if w2 is None else w2[mask])
    main2, beta2 = b2[: m2.shape[1]], b2[m2.shape[1] :]

    # Backward induction: the observed outcome plus the forgone second-stage
    # benefit under the fitted rule.  Rows with no second-stage decision have
    # zero blip rows, hence zero correction.
    blip = mats.s @ beta2
    pseudo = data.y + np.where(
        mask, np.clip(blip, 0.0, None) - data.a2_filled * blip, 0.0
    )

    x1fit = np.column_stack([m1, data.a1[:, None] * mats.w])
    b1 = fit_least_squares(x1fit, pseudo, w1)
    main1, beta1 = b1[: m1.shape[1]], b1[m1.shape[1] :]
    return ComparatorFit(beta2=beta2, beta1=beta1, main2=main2, main1=main1)


def fit_standard_q(data: Dataset, design: StageDesign) -> ComparatorFit:
    """Ordinary least squares Q-learning with linear working models."""
    return _backward_wls(data, design, None, None)


def balancing_weight(a: np.ndarray, pihat: np.ndarray) -> np.ndarray:
    """The |A - pihat| weight giving dWOLS its balancing property."""
    return np.abs(a - pihat)


def fit_dwols(
    data: Dataset,
    design: StageDesign,
    weight_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = balancing_weight,
) -> ComparatorFit:
    """Doubly weighted least squares with logistic stage propensities.

    Propensities are logistic regressions on the stage-specific histories
    (the nuisance-conditioning features of the design); weights default to
    |A - pihat| per stage.  Unit weights reproduce ``fit_standard_q``.
    """
    mats = build_design_matrices(data, design)
    mask = data.a2_observed
    ones = np.ones(data.n)

    d2 = np.column_stack([ones, mats.s0])
    coef2, _ = fit_logistic_irls(d2[mask], data.a2_filled[mask])
    pi2 = _expit_design(d2, coef2)
    w2 = np.where(mask, weight_fn(data.a2_filled, pi2), 0.0)

    d1 = np.column_stack([ones, mats.w0])
    coef1, _ = fit_logistic_irls(d1, data.a1.astype(np.float64))
    pi1 = _expit_design(d1, coef1)
    w1 = weight_fn(data.a1.astype(np.float64), pi1)
    return _backward_wls(data, design, w2, w1)


def _expit_design(design_matrix: np.ndarray, coef: np.ndarray) -> np.ndarray:
    from scipy.special import expit

    return expit(design_matrix @ coef)


@dataclass(frozen=True)
class BootstrapSpec:
    """Bootstrap configuration; kappa only matters for the m-of-n variant."""

    variant: str = "n_of_n"
    kappa: float = 0.05
    n_boot: int = 200
    ci_level: float = 0.95

    def __post_init__(self):
        if self.variant not in ("n_of_n", "m_of_n"):
            raise ValueError("variant must be 'n_of_n' or 'm_of_n'")
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError("kappa must lie in [0, 1)")
        if self.n_boot < 50:
            raise ValueError("n_boot must be at least 50")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")


def resample_size_m(n: int, kappa: float, p_hat: float) -> int:
    """Bootstrap resample size n^((1 + kappa (1 - p_hat)) / (1 + kappa)).

    kappa = 0 or p_hat = 0 give m = n; larger estimated non-regularity
    shrinks the resamples.  Clamped to [2, n].
    """
    if not 0.0 <= kappa < 1.0:
        raise ValueError("kappa must lie in [0, 1)")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError("p_hat must lie in [0, 1]")
    expo = (1.0 + kappa * (1.0 - p_hat)) / (1.0 + kappa)
    return int(np.clip(int(np.floor(n**expo)), 2, n))


def estimate_p_hat(
    data: Dataset,
    design: StageDesign,
    beta2: np.ndarray,
    cov2: np.ndarray,
    level: float = 0.95,
) -> float:
    """Fraction of subjects whose plug-in CI for S_i' beta2 covers zero."""
    mats = build_design_matrices(data, design)
    sb = mats.s @ beta2
    var = np.einsum("ij,jk,ik->i", mats.s, cov2, mats.s)
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(np.clip(var, 0.0, None))
    return float(np.mean(np.abs(sb) <= half))


@dataclass(frozen=True)
class BootstrapResult:
    point: np.ndarray
    draws: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_failed: int


def bootstrap_ci(
    estimator: Callable[[Dataset, int], np.ndarray],
    data: Dataset,
    spec: BootstrapSpec,
    seed: int = 0,
    m: Optional[int] = None,
) -> BootstrapResult:
    """Resample-with-replacement CIs for a vector-valued estimator.

    n_of_n: percentile intervals from the bootstrap draws.  m_of_n: intervals
    built from quantiles of sqrt(m) (beta* - beta-hat), mapped back through
    sqrt(n).  Estimator failures are dropped and counted; more than 5% of
    failed resamples aborts with diagnostics.  Deterministic given the seed.
    """
    n = data.n
    size = n if spec.variant == "n_of_n" else int(m if m is not None else n)
    point = np.asarray(estimator(data, child_seed(seed, 0)), dtype=np.float64)
    draws = np.empty((spec.n_boot, point.shape[0]))
    failed = 0
    kept = 0
    first_error: Optional[str] = None
    for b in range(spec.n_boot):
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 101, b]))
        idx = rng.integers(0, n, size=size)
        try:
            draws[kept] = estimator(data.take(idx), child_seed(seed, 1, b))
            kept += 1
        except RqlearnError as exc:
            failed += 1
            if first_error is None:
                first_error = str(exc)
    if failed > 0.05 * spec.n_boot:
        raise RqlearnError(
            f"{failed}/{spec.n_boot} bootstrap resamples failed; first error: {first_error}"
        )
    draws = draws[:kept]
    alpha = 1.0 - spec.ci_level
    if spec.variant == "n_of_n":
        lo = np.quantile(draws, alpha / 2.0, axis=0)
        hi = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
    else:
        u = np.sqrt(size) * (draws - point)
        lo = point - np.quantile(u, 1.0 - alpha / 2.0, axis=0) / np.sqrt(n)
        hi = point - np.quantile(u, alpha / 2.0, axis=0) / np.sqrt(n)
    return BootstrapResult(point=point, draws=draws, ci_lo=lo, ci_hi=hi, n_failed=failed)


@dataclass(frozen=True)
class ComparatorInference:
    """Point estimates and per-stage CIs for a comparator pipeline."""

    beta2: np.ndarray
    beta1: np.ndarray
    ci2: Tuple[np.ndarray, np.ndarray]
    ci1: Tuple[np.ndarray, np.ndarray]
    p_hat: Optional[float] = None
    m: Optional[int] = None
    n_failed: int = 0


def comparator_inference(
    method: str,
    data: Dataset,
    design: StageDesign,
    spec: BootstrapSpec,
    seed: int = 0,
) -> ComparatorInference:
    """Bootstrap a comparator end to end (propensities refit per resample).

    Second-stage CIs always come from the n-of-n percentile bootstrap; the
    m-of-n variant replaces only the first-stage intervals, with m driven by
    the estimated probability of a zero second-stage blip.
    """
    fitters = {"standard_q": fit_standard_q, "dwols": fit_dwols}
    if method not in fitters:
        raise RqlearnError(f"unknown comparator {method!r}")
    fit = fitters[method]
    d2 = design.d2

    def estimator(ds: Dataset, _seed: int) -> np.ndarray:
        res = fit(ds, design)
        return np.concatenate([res.beta2, res.beta1])

    base = bootstrap_ci(estimator, data, BootstrapSpec(
        variant="n_of_n", kappa=spec.kappa, n_boot=spec.n_boot, ci_level=spec.ci_level,
    ), seed=seed)
    beta2, beta1 = base.point[:d2], base.point[d2:]
    ci2 = (base.ci_lo[:d2], base.ci_hi[:d2])
    if spec.variant == "n_of_n":
        return ComparatorInference(
            beta2=beta2, beta1=beta1, ci2=ci2,
            ci1=(base.ci_lo[d2:], base.ci_hi[d2:]), n_failed=base.n_failed,
        )

    cov2 = np.cov(base.draws[:, :d2], rowvar=False)
    p_hat = estimate_p_hat(data, design, beta2, np.atleast_2d(cov2), spec.ci_level)
    m = resample_size_m(data.n, spec.kappa, p_hat)
    second = bootstrap_ci(estimator, data, spec, seed=child_seed(seed, 2), m=m)
    return ComparatorInference(
        beta2=beta2, beta1=beta1, ci2=ci2,
        ci1=(second.ci_lo[d2:], second.ci_hi[d2:]),
        p_hat=p_hat, m=m, n_failed=base.n_failed + second.n_failed,
    )
