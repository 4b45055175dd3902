"""Fold management and cross-fitted nuisance prediction.

Nuisances are fit on each fold's complement and predicted on the held-out
fold, then pooled into a single estimating equation downstream.  With two
folds this reduces to plain sample splitting.  Fold isolation is the
load-bearing contract: predictions on fold k may not depend on fold k's
labels in any way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data_model import Dataset, NuisanceEstimates, StageDesign, build_design_matrices
from .exceptions import DegenerateLabelsError, FoldClassError, RqlearnError
from .learners import LearnerSpec, child_seed, fit_learner

DEFAULT_CLIP_EPS = 0.01
DEFAULT_FOLDS = 2

# Stable tags feeding per-(fold, nuisance) seed derivation.
_NUIS_TAG = {"mu2a": 1, "mu2y": 2, "mu1a": 3, "mu1y": 4}


@dataclass(frozen=True)
class FoldPlan:
    """A balanced partition of row indices into k folds."""

    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        counts = np.bincount(self.assignment, minlength=self.k)
        if len(counts) != self.k or counts.min() < 1:
            raise ValueError("assignment must use every fold")
        if counts.max() - counts.min() > 1:
            raise ValueError("fold sizes must differ by at most one")

    @property
    def n(self) -> int:
        return self.assignment.shape[0]


def make_folds(n: int, k: int, seed: int = 0) -> FoldPlan:
    """Random balanced partition of {0..n-1}; deterministic given (n, k, seed)."""
    if k < 2 or k > n:
        raise RqlearnError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, n, k]))
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(k=k, assignment=assignment, seed=int(seed))


@dataclass(frozen=True)
class NuisanceLearners:
    """Learner choice per nuisance; treatment entries must be probability-task."""

    mu2y: LearnerSpec
    mu2a: LearnerSpec
    mu1y: LearnerSpec
    mu1a: LearnerSpec

    def __post_init__(self):
        for name in ("mu2a", "mu1a"):
            if getattr(self, name).task != "probability":
                raise ValueError(f"{name} learner must have task='probability'")
        for name in ("mu2y", "mu1y"):
            if getattr(self, name).task != "regression":
                raise ValueError(f"{name} learner must have task='regression'")


def _crossfit_one(
    spec: LearnerSpec,
    features: np.ndarray,
    target: np.ndarray,
    plan: FoldPlan,
    train_ok: np.ndarray,
    tag: str,
) -> np.ndarray:
    out = np.empty(plan.n)
    for k in range(plan.k):
        hold = plan.assignment == k
        train = ~hold & train_ok
        try:
            model = fit_learner(
                spec, features[train], target[train],
                seed=child_seed(plan.seed, _NUIS_TAG[tag], k),
            )
        except FoldClassError:
            raise
        except DegenerateLabelsError:
            raise FoldClassError(fold=k, nuisance=tag)
        out[hold] = model.predict(features[hold])
    return out


def crossfit_nuisances(
    data: Dataset,
    design: StageDesign,
    specs: NuisanceLearners,
    plan: FoldPlan,
    clip_eps: float = DEFAULT_CLIP_EPS,
    pseudo_outcome: Optional[np.ndarray] = None,
) -> NuisanceEstimates:
    """Cross-fit the nuisance regressions over a fold plan.

    Second-stage nuisances (mu2a against A2, mu2y against Y) train only on
    rows with an observed A2; first-stage mu1a trains against A1 everywhere.
    mu1y targets the caller-supplied pseudo-outcome and is therefore only fit
    when ``pseudo_outcome`` is given (the second pass of the backward
    induction); otherwise it is left unset.  Treatment predictions are
    clipped to [clip_eps, 1 - clip_eps].
    """
    if plan.n != data.n:
        raise RqlearnError(f"fold plan covers {plan.n} rows, dataset has {data.n}")
    mats = build_design_matrices(data, design)
    obs = data.a2_observed
    everywhere = np.ones(data.n, dtype=bool)

    mu2a = _crossfit_one(specs.mu2a, mats.s0, data.a2_filled, plan, obs, "mu2a")
    mu2y = _crossfit_one(specs.mu2y, mats.s0, data.y, plan, obs, "mu2y")
    mu1a = _crossfit_one(specs.mu1a, mats.w0, data.a1.astype(np.float64), plan, everywhere, "mu1a")

    lo, hi = clip_eps, 1.0 - clip_eps
    est = NuisanceEstimates(
        mu1a=np.clip(mu1a, lo, hi),
        mu2a=np.clip(mu2a, lo, hi),
        mu2y=mu2y,
        fold_of=plan.assignment.copy(),
        clip_eps=clip_eps,
    )
    if pseudo_outcome is not None:
        mu1y = crossfit_pseudo_mean(data, design, specs.mu1y, plan, pseudo_outcome)
        est = est.with_mu1y(mu1y)
    return est


def crossfit_pseudo_mean(
    data: Dataset,
    design: StageDesign,
    spec: LearnerSpec,
    plan: FoldPlan,
    pseudo_outcome: np.ndarray,
) -> np.ndarray:
    """Cross-fit the first-stage outcome nuisance against a pseudo-outcome."""
    pseudo = np.asarray(pseudo_outcome, dtype=np.float64)
    if pseudo.shape != (data.n,):
        raise RqlearnError("pseudo outcome must be an n-vector")
    mats = build_design_matrices(data, design)
    return _crossfit_one(spec, mats.w0, pseudo, plan, np.ones(data.n, dtype=bool), "mu1y")
