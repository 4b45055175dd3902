"""Two-stage robust Q-learning: residualized blip fits with sandwich inference.

Backward induction in two least-squares passes.  The second stage regresses
the outcome, centered by a cross-fitted conditional mean, on the blip design
scaled by the centered treatment.  A pseudo-outcome then credits every
subject with the estimated value of the optimal second-stage action, and the
first stage repeats the residualized regression against it.  Centering by
conditional means removes the main-effect nuisance functions entirely, so
neither stage ever models them; robustness to their misspecification is the
point of the construction.  Per-stage covariances follow the usual
M-estimator sandwich, with the first-stage score corrected for the
propagation of the second-stage estimate through the pseudo-outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import norm

from .crossfit import (
    DEFAULT_CLIP_EPS,
    DEFAULT_FOLDS,
    NuisanceLearners,
    crossfit_nuisances,
    crossfit_pseudo_mean,
    make_folds,
)
from .data_model import (
    Dataset,
    NuisanceEstimates,
    StageDesign,
    StageFit,
    build_design_matrices,
)
from .exceptions import PositiveDefiniteError, RqlearnError, SingularDesignError
from .learners import fit_least_squares, solve_spd

PSEUDO_MODES = ("observed", "model")


@dataclass(frozen=True)
class Regime:
    """A pair of linear decision rules; actions depend only on score signs."""

    beta1: np.ndarray
    beta2: np.ndarray

    def decide1(self, w: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(w) @ self.beta1 > 0.0).astype(np.int8)

    def decide2(self, s: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(s) @ self.beta2 > 0.0).astype(np.int8)


@dataclass(frozen=True)
class RobustQResult:
    stage2: StageFit
    stage1: StageFit
    pseudo_outcome: np.ndarray
    nuisances: NuisanceEstimates
    design: StageDesign

    @property
    def regime(self) -> Regime:
        return Regime(beta1=self.stage1.beta, beta2=self.stage2.beta)


def sandwich_cov(vhat: np.ndarray, qhat: np.ndarray, n: int) -> np.ndarray:
    """vhat^-1 qhat vhat^-1 / n, symmetrized; errors if vhat is singular."""
    if n < 1:
        raise ValueError("n must be positive")
    a = solve_spd(vhat, qhat)          # V^-1 Q
    c = solve_spd(vhat, a.T).T         # V^-1 Q V^-1 (Q symmetric)
    c = c / n
    return 0.5 * (c + c.T)


def wald_ci(beta: np.ndarray, se: np.ndarray, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component normal intervals beta +/- z_(1-alpha/2) * se."""
    beta = np.asarray(beta, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    if np.any(se < 0):
        raise ValueError("standard errors must be nonnegative")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    z = norm.ppf(0.5 + level / 2.0)
    return beta - z * se, beta + z * se


def decide(regime: Regime, w: np.ndarray, s: np.ndarray) -> Tuple[int, int]:
    """Actions for one subject; ties (score exactly 0) resolve to 0."""
    w = np.asarray(w, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if w.shape != regime.beta1.shape or s.shape != regime.beta2.shape:
        raise ValueError("feature/coefficient dimension mismatch")
    return int(w @ regime.beta1 > 0.0), int(s @ regime.beta2 > 0.0)


def _assemble_stage(z, target, mask, n, label):
    """Shared residualized WLS core: solve, then plug-in V-hat and Q-hat."""
    try:
        beta = fit_least_squares(z[mask], target[mask])
    except SingularDesignError as exc:
        raise PositiveDefiniteError(
            f"{label} treatment-residual design is singular", cond=exc.cond
        ) from exc
    zm = z[mask]
    vhat = zm.T @ zm / n
    vhat = 0.5 * (vhat + vhat.T)
    resid = target[mask] - zm @ beta
    scores = zm * resid[:, None]
    qhat = scores.T @ scores / n
    qhat = 0.5 * (qhat + qhat.T)
    return beta, vhat, qhat, scores


def fit_stage2(data: Dataset, design: StageDesign, nuisances: NuisanceEstimates) -> StageFit:
    """Second-stage blip fit on centered outcome and centered treatment.

    Minimizes sum_i [Y_i - mu2y_i - (A2_i - mu2a_i) S_i' b]^2.  Rows with an
    undefined A2 have all-zero S rows and are excluded from the Gram matrix;
    averages still divide by the full sample size, matching the population
    moments the sandwich limit is stated in.
    """
    mats = build_design_matrices(data, design)
    mask = data.a2_observed
    n = data.n
    z = np.where(mask, data.a2_filled - nuisances.mu2a, 0.0)[:, None] * mats.s
    target = data.y - nuisances.mu2y
    beta, vhat, qhat, _ = _assemble_stage(z, target, mask, n, "stage 2")
    cov = sandwich_cov(vhat, qhat, n)
    return StageFit(
        beta=beta, vhat=vhat, qhat=qhat, cov=cov,
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        n_used=int(mask.sum()),
    )


def pseudo_outcome(
    data: Dataset,
    design: StageDesign,
    beta2: np.ndarray,
    nuisances: NuisanceEstimates,
    mode: str = "observed",
) -> np.ndarray:
    """First-stage target crediting the optimal second-stage action.

    observed (default): Y_i + S_i'b2 * [I(S_i'b2 > 0) - A2_i]
    model:              mu2y_i + S_i'b2 * [I(S_i'b2 > 0) - mu2a_i]

    I(0 > 0) = 0, and rows with undefined A2 have zero S rows, so their
    correction is exactly zero.
    """
    beta2 = np.asarray(beta2, dtype=np.float64)
    if not np.isfinite(beta2).all():
        raise ValueError("beta2 must be finite")
    if mode not in PSEUDO_MODES:
        raise ValueError(f"mode must be one of {PSEUDO_MODES}")
    mats = build_design_matrices(data, design)
    sb = mats.s @ beta2
    opt = (sb > 0.0).astype(np.float64)
    if mode == "observed":
        return data.y + sb * (opt - data.a2_filled)
    return nuisances.mu2y + sb * (opt - nuisances.mu2a)


def fit_stage1(
    data: Dataset,
    design: StageDesign,
    pseudo: np.ndarray,
    nuisances: NuisanceEstimates,
    stage2: StageFit,
) -> StageFit:
    """First-stage blip fit against the pseudo-outcome.

    Minimizes sum_i [pseudo_i - mu1y_i - (A1_i - mu1a_i) W_i' b]^2 and stores
    the cross-stage coupling K-hat so the stage-1 score can absorb the
    sampling variability of the second-stage coefficient estimate.
    """
    if nuisances.mu1y is None:
        raise RqlearnError("mu1y has not been cross-fit against the pseudo-outcome")
    pseudo = np.asarray(pseudo, dtype=np.float64)
    mats = build_design_matrices(data, design)
    n = data.n
    everywhere = np.ones(n, dtype=bool)

    z1 = (data.a1 - nuisances.mu1a)[:, None] * mats.w
    target1 = pseudo - nuisances.mu1y
    beta1, vhat1, _, _ = _assemble_stage(z1, target1, everywhere, n, "stage 1")

    sb = mats.s @ stage2.beta
    opt_minus_a2 = (sb > 0.0).astype(np.float64) - data.a2_filled
    # Zero-S rows force zero contributions from subjects without an A2.
    khat = (mats.w * ((data.a1 - nuisances.mu1a) * opt_minus_a2)[:, None]).T @ mats.s / n

    mask2 = data.a2_observed
    z2 = np.where(mask2, data.a2_filled - nuisances.mu2a, 0.0)[:, None] * mats.s
    e2 = np.where(mask2, (data.y - nuisances.mu2y) - z2 @ stage2.beta, 0.0)
    j2 = z2 * e2[:, None]

    e1 = target1 - z1 @ beta1
    j1 = z1 * e1[:, None]
    coupling = solve_spd(stage2.vhat, khat.T).T      # K V2^-1
    psi = j1 + j2 @ coupling.T
    qhat1 = psi.T @ psi / n
    qhat1 = 0.5 * (qhat1 + qhat1.T)
    cov = sandwich_cov(vhat1, qhat1, n)
    return StageFit(
        beta=beta1, vhat=vhat1, qhat=qhat1, cov=cov,
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        n_used=n, khat=khat,
    )


def fit_robust_q(
    data: Dataset,
    design: StageDesign,
    specs: NuisanceLearners,
    k_folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    clip_eps: float = DEFAULT_CLIP_EPS,
    pseudo_mode: str = "observed",
) -> RobustQResult:
    """Full backward-induction pipeline.

    Folds -> cross-fit (mu2y, mu2a, mu1a) -> stage-2 fit -> pseudo-outcome ->
    cross-fit mu1y against it on the same fold plan -> stage-1 fit.  A pure
    function of (data, design, specs, k_folds, seed, clip_eps): repeated calls
    are bit-identical, and independent replications can run fully in parallel.
    """
    plan = make_folds(data.n, k_folds, seed)
    nuis = crossfit_nuisances(data, design, specs, plan, clip_eps)
    stage2 = fit_stage2(data, design, nuis)
    pseudo = pseudo_outcome(data, design, stage2.beta, nuis, mode=pseudo_mode)
    nuis = nuis.with_mu1y(crossfit_pseudo_mean(data, design, specs.mu1y, plan, pseudo))
    stage1 = fit_stage1(data, design, pseudo, nuis, stage2)
    return RobustQResult(
        stage2=stage2, stage1=stage1, pseudo_outcome=pseudo,
        nuisances=nuis, design=design,
    )
