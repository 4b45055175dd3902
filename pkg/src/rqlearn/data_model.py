"""Core domain types: two-stage trajectories and blip-design feature maps.

A trajectory records one subject's path through a two-stage study:
baseline covariates ``x1``, binary first treatment ``a1``, intermediate
covariates ``x2``, binary second treatment ``a2`` (possibly undefined when
the subject is not eligible for a second-stage decision), and a terminal
outcome ``y`` where larger is better.  Datasets store N trajectories
column-wise in read-only numpy arrays; every downstream operation treats
them as immutable, so they are safe to share across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import DataFormatError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Trajectory:
    """One subject's record. ``a2`` and ``r`` are None when undefined."""

    x1: np.ndarray
    a1: int
    x2: np.ndarray
    a2: Optional[int]
    y: float
    r: Optional[int] = None


@dataclass(frozen=True)
class Dataset:
    """Column-oriented, immutable collection of N trajectories.

    ``a2`` is stored as float with NaN marking subjects for whom the
    second-stage treatment is undefined.  ``r`` is an optional binary
    eligibility/response indicator column.
    """

    x1: np.ndarray
    a1: np.ndarray
    x2: np.ndarray
    a2: np.ndarray
    y: np.ndarray
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        x1 = _readonly(np.asarray(self.x1, dtype=np.float64))
        x2 = _readonly(np.asarray(self.x2, dtype=np.float64))
        a1 = _readonly(np.asarray(self.a1, dtype=np.int8))
        a2 = _readonly(np.asarray(self.a2, dtype=np.float64))
        y = _readonly(np.asarray(self.y, dtype=np.float64))
        r = None if self.r is None else _readonly(np.asarray(self.r, dtype=np.int8))
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "a2", a2)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", r)

        n = x1.shape[0]
        if n < 1:
            raise DataFormatError("dataset must contain at least one trajectory")
        if x1.ndim != 2 or x2.ndim != 2 or x2.shape[0] != n:
            raise DataFormatError("x1 and x2 must be 2-d with matching row counts")
        for name, col in (("a1", a1), ("a2", a2), ("y", y)):
            if col.shape != (n,):
                raise DataFormatError(f"{name} must have shape ({n},)")
        if not np.isfinite(x1).all() or not np.isfinite(x2).all():
            raise DataFormatError("covariates must be finite")
        if not np.isfinite(y).all():
            raise DataFormatError("outcomes must be finite")
        if not np.isin(a1, (0, 1)).all():
            raise DataFormatError("a1 must be binary")
        obs = ~np.isnan(a2)
        if not np.isin(a2[obs], (0.0, 1.0)).all():
            raise DataFormatError("a2 must be binary where present")
        if r is not None and not np.isin(r, (0, 1)).all():
            raise DataFormatError("r must be binary where present")

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def p1(self) -> int:
        return self.x1.shape[1]

    @property
    def p2(self) -> int:
        return self.x2.shape[1]

    @property
    def a2_observed(self) -> np.ndarray:
        """Boolean mask of rows with a defined second-stage treatment."""
        return ~np.isnan(self.a2)

    @property
    def a2_filled(self) -> np.ndarray:
        """a2 with undefined entries replaced by 0; pair with ``a2_observed``."""
        return np.where(self.a2_observed, self.a2, 0.0)

    def row(self, i: int) -> Trajectory:
        a2 = None if np.isnan(self.a2[i]) else int(self.a2[i])
        r = None if self.r is None else int(self.r[i])
        return Trajectory(self.x1[i], int(self.a1[i]), self.x2[i], a2, float(self.y[i]), r)

    def rows(self):
        return (self.row(i) for i in range(self.n))

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row-subset (used for bootstrap resampling); copies, stays immutable."""
        idx = np.asarray(indices)
        return Dataset(
            x1=self.x1[idx],
            a1=self.a1[idx],
            x2=self.x2[idx],
            a2=self.a2[idx],
            y=self.y[idx],
            r=None if self.r is None else self.r[idx],
        )

    @staticmethod
    def from_trajectories(rows: Sequence[Trajectory]) -> "Dataset":
        a2 = np.array([np.nan if t.a2 is None else float(t.a2) for t in rows])
        has_r = all(t.r is not None for t in rows)
        if not has_r and any(t.r is not None for t in rows):
            raise DataFormatError("r must be present for all rows or none")
        return Dataset(
            x1=np.stack([t.x1 for t in rows]),
            a1=np.array([t.a1 for t in rows]),
            x2=np.stack([t.x2 for t in rows]),
            a2=a2,
            y=np.array([t.y for t in rows]),
            r=np.array([t.r for t in rows]) if has_r else None,
        )


# Feature-map signatures.  Maps must be pure and deterministic; they receive
# whole columns and return one design row per input row.
SMap = Callable[[np.ndarray, np.ndarray, np.ndarray, Optional[np.ndarray]], np.ndarray]
WMap = Callable[[np.ndarray], np.ndarray]
HistMap = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _default_s0(x1: np.ndarray, a1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    return np.column_stack([x1, a1.astype(np.float64), x2])


def _default_w0(x1: np.ndarray) -> np.ndarray:
    return x1


@dataclass(frozen=True)
class StageDesign:
    """Feature maps building blip regressors from raw histories.

    ``s_map`` produces the second-stage blip design S (first column a
    constant, possibly scaled by an eligibility indicator), ``w_map`` the
    first-stage design W (first column the constant 1).  ``s0_map`` and
    ``w0_map`` select the conditioning features handed to nuisance learners;
    they default to the full raw histories.
    """

    s_map: SMap
    w_map: WMap
    s_names: tuple
    w_names: tuple
    s0_map: HistMap = _default_s0
    w0_map: WMap = _default_w0

    @property
    def d2(self) -> int:
        return len(self.s_names)

    @property
    def d1(self) -> int:
        return len(self.w_names)


class DesignMatrices(NamedTuple):
    s: np.ndarray
    w: np.ndarray
    s0: np.ndarray
    w0: np.ndarray


def build_design_matrices(data: Dataset, design: StageDesign) -> DesignMatrices:
    """Evaluate the design's feature maps over a dataset.

    Row i of ``s`` equals ``s_map`` applied to row i's history, and likewise
    for ``w``.  Rows with an undefined second-stage treatment must map to
    all-zero S rows so they cannot contribute to second-stage estimation.

    Raises
    ------
    DataFormatError
        If any produced feature is non-finite (reported with its row index),
        the W intercept convention is violated, or an ineligible row has a
        nonzero S row.
    """

    s = np.asarray(design.s_map(data.x1, data.a1, data.x2, data.r), dtype=np.float64)
    w = np.asarray(design.w_map(data.x1), dtype=np.float64)
    s0 = np.asarray(design.s0_map(data.x1, data.a1, data.x2), dtype=np.float64)
    w0 = np.asarray(design.w0_map(data.x1), dtype=np.float64)

    for name, mat, cols in (("S", s, design.d2), ("W", w, design.d1)):
        if mat.shape != (data.n, cols):
            raise DataFormatError(f"{name} has shape {mat.shape}, expected ({data.n}, {cols})")
        if not np.isfinite(mat).all():
            bad = int(np.where(~np.isfinite(mat).all(axis=1))[0][0])
            raise DataFormatError(f"non-finite {name} feature at row {bad}")
    if not np.isfinite(s0).all() or not np.isfinite(w0).all():
        raise DataFormatError("non-finite nuisance-conditioning feature")
    if not np.all(w[:, 0] == 1.0):
        raise DataFormatError("first W column must be the constant 1")
    missing = ~data.a2_observed
    if missing.any() and np.any(s[missing] != 0.0):
        bad = int(np.where(missing & np.any(s != 0.0, axis=1))[0][0])
        raise DataFormatError(f"row {bad} has undefined a2 but a nonzero S row")
    return DesignMatrices(_readonly(s), _readonly(w), _readonly(s0), _readonly(w0))


def trial_design() -> StageDesign:
    """Blip design used throughout the simulation studies.

    S = R * (1, X21, X22, X23) and W = (1, X11, X12).  The eligibility
    indicator R multiplies the whole second-stage row, so ineligible
    subjects contribute exactly zero regressors.
    """

    def s_map(x1, a1, x2, r):
        rr = np.ones(x1.shape[0]) if r is None else r.astype(np.float64)
        return rr[:, None] * np.column_stack(
            [np.ones(x1.shape[0]), x2[:, 0], x2[:, 1], x2[:, 2]]
        )

    def w_map(x1):
        return np.column_stack([np.ones(x1.shape[0]), x1[:, 0], x1[:, 1]])

    return StageDesign(
        s_map=s_map,
        w_map=w_map,
        s_names=("s_const", "s_x21", "s_x22", "s_x23"),
        w_names=("w_const", "w_x11", "w_x12"),
    )


def interaction_design() -> StageDesign:
    """Blip design with the first treatment as a second-stage effect modifier.

    S = R * (1, A1, X21, X22) and W = (1, X11, X12).
    """

    def s_map(x1, a1, x2, r):
        rr = np.ones(x1.shape[0]) if r is None else r.astype(np.float64)
        return rr[:, None] * np.column_stack(
            [np.ones(x1.shape[0]), a1.astype(np.float64), x2[:, 0], x2[:, 1]]
        )

    def w_map(x1):
        return np.column_stack([np.ones(x1.shape[0]), x1[:, 0], x1[:, 1]])

    return StageDesign(
        s_map=s_map,
        w_map=w_map,
        s_names=("s_const", "s_a1", "s_x21", "s_x22"),
        w_names=("w_const", "w_x11", "w_x12"),
    )


def column_design(
    s_x1_cols: Sequence[int],
    s_x2_cols: Sequence[int],
    w_x1_cols: Sequence[int],
    s_include_a1: bool = False,
    s_eligibility_scaled: bool = False,
    s_names: Optional[Sequence[str]] = None,
    w_names: Optional[Sequence[str]] = None,
) -> StageDesign:
    """Generic linear blip design over selected raw columns.

    S stacks a constant, optionally A1, then the selected x1 and x2 columns;
    W stacks a constant and the selected x1 columns.  With
    ``s_eligibility_scaled`` the whole S row is multiplied by the dataset's
    ``r`` column (which must then be present).
    """

    s_x1_cols = tuple(s_x1_cols)
    s_x2_cols = tuple(s_x2_cols)
    w_x1_cols = tuple(w_x1_cols)

    def s_map(x1, a1, x2, r):
        parts = [np.ones(x1.shape[0])]
        if s_include_a1:
            parts.append(a1.astype(np.float64))
        parts.extend(x1[:, j] for j in s_x1_cols)
        parts.extend(x2[:, j] for j in s_x2_cols)
        s = np.column_stack(parts)
        if s_eligibility_scaled:
            if r is None:
                raise DataFormatError("eligibility-scaled design requires an r column")
            s = r.astype(np.float64)[:, None] * s
        return s

    def w_map(x1):
        return np.column_stack([np.ones(x1.shape[0])] + [x1[:, j] for j in w_x1_cols])

    if s_names is None:
        s_names = (
            ["s_const"]
            + (["s_a1"] if s_include_a1 else [])
            + [f"s_x1_{j}" for j in s_x1_cols]
            + [f"s_x2_{j}" for j in s_x2_cols]
        )
    if w_names is None:
        w_names = ["w_const"] + [f"w_x1_{j}" for j in w_x1_cols]
    return StageDesign(
        s_map=s_map, w_map=w_map, s_names=tuple(s_names), w_names=tuple(w_names)
    )


@dataclass(frozen=True)
class NuisanceEstimates:
    """Per-row cross-fitted nuisance predictions with fold provenance.

    Treatment predictions are clipped to [clip_eps, 1 - clip_eps].  The
    cross-fitting contract: row i's predictions come from models trained
    without row i.  ``mu1y`` may be None until the second pass (it targets
    the pseudo-outcome, which requires the second-stage fit).
    """

    mu1a: np.ndarray
    mu2a: np.ndarray
    mu2y: np.ndarray
    fold_of: np.ndarray
    clip_eps: float
    mu1y: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5)")
        n = self.mu1a.shape[0]
        for name in ("mu2a", "mu2y", "fold_of"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if self.mu1y is not None and self.mu1y.shape != (n,):
            raise ValueError(f"mu1y must have shape ({n},)")
        lo, hi = self.clip_eps, 1.0 - self.clip_eps
        for name in ("mu1a", "mu2a"):
            v = getattr(self, name)
            if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
                raise ValueError(f"{name} outside [{lo}, {hi}]")
        if not np.isfinite(self.mu2y).all():
            raise ValueError("mu2y must be finite")
        if self.mu1y is not None and not np.isfinite(self.mu1y).all():
            raise ValueError("mu1y must be finite")

    def with_mu1y(self, mu1y: np.ndarray) -> "NuisanceEstimates":
        return NuisanceEstimates(
            mu1a=self.mu1a,
            mu2a=self.mu2a,
            mu2y=self.mu2y,
            fold_of=self.fold_of,
            clip_eps=self.clip_eps,
            mu1y=np.asarray(mu1y, dtype=np.float64),
        )


@dataclass(frozen=True)
class StageFit:
    """One stage's blip-coefficient estimate with sandwich inference pieces.

    ``vhat`` is the treatment-residual Gram matrix, ``qhat`` the empirical
    second moment of the per-row scores, ``cov = vhat^-1 qhat vhat^-1 / n``,
    and ``khat`` (first stage only) the cross-stage coupling matrix feeding
    the stage-1 score correction.
    """

    beta: np.ndarray
    vhat: np.ndarray
    qhat: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    n_used: int
    khat: Optional[np.ndarray] = None

    def __post_init__(self):
        d = self.beta.shape[0]
        for name in ("vhat", "qhat", "cov"):
            m = getattr(self, name)
            if m.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")
            if not np.allclose(m, m.T, atol=1e-8):
                raise ValueError(f"{name} must be symmetric")
        if np.any(np.diag(self.cov) < -1e-10):
            raise ValueError("cov must have nonnegative diagonal")
        if not np.allclose(self.se, np.sqrt(np.clip(np.diag(self.cov), 0.0, None))):
            raise ValueError("se must equal sqrt(diag(cov))")
