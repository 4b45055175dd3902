"""Benchmark data generators and Monte Carlo truth oracles.

Two regular outcome families (exactly linear blip, and a nonlinear one with
heavy-tailed main effects) crossed with four treatment-assignment models of
increasing complexity, plus non-regular families in which the second-stage
blip is zero on a positive-probability set.  Everything is a pure function of
(scenario, seed); the oracles recover the population weighted projections the
estimators target, and counterfactual regime values, by plain Monte Carlo.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .data_model import Dataset, NuisanceEstimates, StageDesign, interaction_design, trial_design
from .learners import solve_spd

PROPENSITIES = ("randomized", "linear", "quadratic", "interquad")
OUTCOMES = (
    "linear_r",
    "fgs_r",
    "linear_nr",
    "nonlinear_nr",
    "linear_nr_interact",
    "nonlinear_nr_interact",
)
REGULAR = frozenset({"linear_r", "fgs_r"})
BERNOULLI_NR = frozenset({"linear_nr", "nonlinear_nr"})
INTERACT_NR = frozenset({"linear_nr_interact", "nonlinear_nr_interact"})

ALPHA = np.array([1.0, 0.1, 0.1, 0.1, 0.1])
THETA2_REGULAR = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
NOISE_SD = 0.5


@dataclass(frozen=True)
class Scenario:
    """One simulation cell: assignment family x outcome family x size."""

    propensity: str
    outcome: str
    n: int
    seed: int = 0
    varpi: int = 0

    def __post_init__(self):
        if self.propensity not in PROPENSITIES:
            raise ValueError(f"unknown propensity {self.propensity!r}")
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.varpi not in (0, 1):
            raise ValueError("varpi must be 0 or 1")
        if self.n < 10:
            raise ValueError("n must be at least 10")

    @property
    def regular(self) -> bool:
        return self.outcome in REGULAR

    @property
    def interact(self) -> bool:
        return self.outcome in INTERACT_NR

    @property
    def response_median(self) -> float:
        # x24 = 0.35*x15 + U with U on [-0.5, 0.5] (median 0) or on [0, 1]
        # for the interaction families (median 0.5).
        return 0.5 if self.interact else 0.0


def _lam(propensity: str, x: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5 = (x[:, j] for j in range(5))
    if propensity == "randomized":
        return np.zeros(x.shape[0])
    if propensity == "linear":
        return 2 * x1 + 2 * x2 + x3 + 0.1 * x4 + 0.1 * x5
    quad = (
        (x1 - 0.5) ** 2
        + (x2 - 0.5) ** 2
        + 0.6 * (x3 - 0.5) ** 2
        + 0.5 * (x4 - 0.5) ** 2
        + 0.5 * (x5 - 0.5) ** 2
        + x1
        + x2
        + 0.6 * x3
        + 0.5 * x4
        + 0.5 * x5
        - 2.0
    )
    if propensity == "interquad":
        quad = quad + x1 * x2
    return 1.4 * quad


def propensity(scenario: Scenario, stage: int, covariates: np.ndarray) -> np.ndarray:
    """True treatment probability at a stage given its covariate block."""
    if stage not in (1, 2):
        raise ValueError("stage must be 1 or 2")
    return expit(_lam(scenario.propensity, np.atleast_2d(covariates)))


def f_main(x: np.ndarray) -> np.ndarray:
    """Nonlinear main-effect function; singular only on the null set x2=x3=0."""
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    return (
        -1.5
        + np.sin(np.pi * x1 * x2)
        + 2.0 * (x3 - 0.5) ** 2
        + x4
        + 1.5 * x1 / (np.abs(x2) + np.abs(x3))
        + 2.0 * x1 * (x2 + x3)
    )


def g_blip(x: np.ndarray) -> np.ndarray:
    """Nonlinear second-stage effect surface."""
    return 2.0 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 2.0 * (x[:, 1] - 0.5) ** 2


def gen_covariates(scenario: Scenario, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Baseline covariates plus the uniform block consumed by stage-2 assembly.

    x1 ~ U[-0.5, 0.5]^5 with rows redrawn on the measure-zero event
    |x12| + |x13| = 0 (the nonlinear main effect divides by it); the second
    element is a (n, 7) block of U[0, 1] draws.
    """
    n = scenario.n
    x1 = rng.uniform(-0.5, 0.5, size=(n, 5))
    bad = np.abs(x1[:, 1]) + np.abs(x1[:, 2]) == 0.0
    while bad.any():
        x1[bad] = rng.uniform(-0.5, 0.5, size=(int(bad.sum()), 5))
        bad = np.abs(x1[:, 1]) + np.abs(x1[:, 2]) == 0.0
    return x1, rng.uniform(0.0, 1.0, size=(n, 7))


def gen_x2(
    scenario: Scenario,
    x1: np.ndarray,
    a1: np.ndarray,
    u01: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Intermediate covariates for any family (5 columns)."""
    n = x1.shape[0]
    if scenario.regular:
        u = u01[:, :5] - 0.5
        x2 = np.column_stack(
            [x1[:, 0] + u[:, 0], x1[:, 1] + u[:, 1], x1[:, 2] + u[:, 2],
             0.35 * x1[:, 4] + u[:, 3], u[:, 4]]
        )
        bad = np.abs(x2[:, 1]) + np.abs(x2[:, 2]) == 0.0
        while bad.any():
            fresh = rng.uniform(-0.5, 0.5, size=(int(bad.sum()), 2))
            x2[bad, 1] = x1[bad, 1] + fresh[:, 0]
            x2[bad, 2] = x1[bad, 2] + fresh[:, 1]
            bad = np.abs(x2[:, 1]) + np.abs(x2[:, 2]) == 0.0
        return x2
    if scenario.outcome in BERNOULLI_NR:
        x21 = (u01[:, 5] < expit(2 * x1[:, 0] + 2 * x1[:, 1] - 1.0)).astype(np.float64)
        x22 = (u01[:, 6] < expit(2 * x1[:, 1] + x21 - 1.0)).astype(np.float64)
        return np.column_stack(
            [x21, x22, u01[:, 0] - 0.5, 0.35 * x1[:, 4] + (u01[:, 1] - 0.5), u01[:, 2] - 0.5]
        )
    # Interaction families: the first intermediate covariate responds to a1
    # and the remaining uniforms live on [0, 1].
    x21 = (u01[:, 5] < expit(2 * x1[:, 0] - 2 * a1 - 1.0)).astype(np.float64)
    return np.column_stack(
        [x21, u01[:, 0], u01[:, 1], 0.35 * x1[:, 4] + u01[:, 2], u01[:, 3]]
    )


def gen_response(x24: np.ndarray, median: float = 0.0) -> np.ndarray:
    """Eligibility indicator: 1 when x24 falls strictly below its median."""
    return (np.asarray(x24) < median).astype(np.int8)


def eta2(scenario: Scenario, x1: np.ndarray, a1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    out = scenario.outcome
    if out == "linear_r":
        return x1 @ ALPHA + x2 @ ALPHA
    if out == "fgs_r":
        return f_main(x1) + f_main(x2)
    if out == "linear_nr":
        return x1 @ ALPHA + x2 @ ALPHA
    if out == "nonlinear_nr":
        return f_main(x1)
    if out == "linear_nr_interact":
        return x1 @ ALPHA + x2[:, :4] @ np.array([1.0, 0.1, 0.1, 0.1])
    return f_main(x1) + 1.5  # nonlinear_nr_interact drops the constant


def delta2(scenario: Scenario, a1: np.ndarray, x2: np.ndarray, r: np.ndarray) -> np.ndarray:
    """True second-stage blip."""
    rr = r.astype(np.float64)
    out = scenario.outcome
    if out == "linear_r":
        return rr * (x2 @ THETA2_REGULAR)
    if out == "fgs_r":
        return rr * g_blip(x2)
    if out in BERNOULLI_NR:
        return 2.0 * scenario.varpi * rr * x2[:, 0]
    return rr * (2.0 * scenario.varpi * a1 + 2.0 * scenario.varpi * x2[:, 0])


def delta1(scenario: Scenario, x1: np.ndarray) -> np.ndarray:
    """True first-stage blip under optimal second-stage play (closed form).

    Zero for every family in which a1 neither enters the outcome nor shifts
    the intermediate covariates.  For the interaction families a1 moves the
    Bernoulli covariate and appears in the blip, giving
    delta1 = shift * (p1 - p0) + E[R] * (blip(a1=1) - blip(a1=0)).
    """
    n = x1.shape[0]
    if not scenario.interact:
        return np.zeros(n)
    p1 = expit(2 * x1[:, 0] - 3.0)
    p0 = expit(2 * x1[:, 0] - 1.0)
    rbar = np.clip(0.5 - 0.35 * x1[:, 4], 0.0, 1.0)
    shift = (p1 - p0) if scenario.outcome == "linear_nr_interact" else np.zeros(n)
    if scenario.varpi == 0:
        blip_diff = np.zeros(n)
    else:
        blip_diff = (2.0 + 2.0 * p1) - 2.0 * p0
    return shift + rbar * blip_diff


def gen_outcome(
    scenario: Scenario,
    x1: np.ndarray,
    a1: np.ndarray,
    x2: np.ndarray,
    a2: np.ndarray,
    r: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Outcome draw; undefined a2 entries contribute nothing to the blip term."""
    a2c = np.nan_to_num(np.asarray(a2, dtype=np.float64), nan=0.0)
    mean = eta2(scenario, x1, a1, x2) + a2c * delta2(scenario, a1, x2, r)
    return mean + rng.normal(0.0, NOISE_SD, size=x1.shape[0])


def design_for(scenario: Scenario) -> StageDesign:
    return interaction_design() if scenario.interact else trial_design()


@dataclass(frozen=True)
class SimTruth:
    """Targets of estimation for one scenario; None marks 'needs Monte Carlo'."""

    beta2_star: Optional[np.ndarray]
    beta1_star: Optional[np.ndarray]
    optimal_value: Optional[float] = None


def simulate_dataset(scenario: Scenario) -> Tuple[Dataset, SimTruth]:
    """Draw one dataset; byte-identical for a fixed scenario.

    In the regular families only eligible subjects (r = 1) carry a
    second-stage treatment; in the non-regular families a2 is drawn for
    everyone because the blip itself carries the eligibility factor.
    """
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed & 0xFFFFFFFF, scenario.n]))
    x1, u01 = gen_covariates(scenario, rng)
    a1 = (rng.uniform(size=scenario.n) < propensity(scenario, 1, x1)).astype(np.int8)
    x2 = gen_x2(scenario, x1, a1, u01, rng)
    r = gen_response(x2[:, 3], scenario.response_median)
    a2_draw = (rng.uniform(size=scenario.n) < propensity(scenario, 2, x2)).astype(np.float64)
    if scenario.regular:
        a2 = np.where(r == 1, a2_draw, np.nan)
    else:
        a2 = a2_draw
    y = gen_outcome(scenario, x1, a1, x2, a2, r, rng)
    data = Dataset(x1=x1, a1=a1, x2=x2, a2=a2, y=y, r=r)
    return data, scenario_truth(scenario)


def _analytic_beta2(scenario: Scenario) -> Optional[np.ndarray]:
    if scenario.outcome == "linear_r":
        return np.array([0.0, 1.0, 1.0, 0.0])
    if scenario.outcome in BERNOULLI_NR:
        return np.array([0.0, 2.0 * scenario.varpi, 0.0, 0.0])
    if scenario.interact:
        return np.array([0.0, 2.0 * scenario.varpi, 2.0 * scenario.varpi, 0.0])
    return None  # fgs_r: determined numerically


def scenario_truth(scenario: Scenario, n_mc: int = 0, seed: int = 0) -> SimTruth:
    """Estimation targets; pass n_mc > 0 to fill Monte Carlo entries."""
    beta2 = _analytic_beta2(scenario)
    beta1 = None if scenario.interact else np.zeros(3)
    if n_mc > 0:
        key = replace(scenario, n=10, seed=0)
        if beta2 is None:
            beta2 = _cached_beta2(key, n_mc, seed)
        if beta1 is None:
            beta1 = _cached_beta1(key, n_mc, seed)
    return SimTruth(beta2_star=beta2, beta1_star=beta1)


@functools.lru_cache(maxsize=64)
def _cached_beta2(key: Scenario, n_mc: int, seed: int) -> np.ndarray:
    return project_true_beta2(key, n_mc=n_mc, seed=seed)


@functools.lru_cache(maxsize=64)
def _cached_beta1(key: Scenario, n_mc: int, seed: int) -> np.ndarray:
    return project_true_beta1(key, n_mc=n_mc, seed=seed)


_CHUNK = 200_000


def _mc_scenario(scenario: Scenario, size: int, seed: int, tag: int):
    return replace(scenario, n=size, seed=child_entropy(seed, tag))


def child_entropy(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, tag]).generate_state(1)[0])


def project_true_beta2(scenario: Scenario, n_mc: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """Population weighted projection of the true blip onto the S design.

    Weights are var(A2 | history); ineligible rows carry all-zero S rows and
    drop out automatically.  Monte Carlo over covariate draws, chunked.
    """
    design = design_for(scenario)
    gram = np.zeros((design.d2, design.d2))
    rhs = np.zeros(design.d2)
    done = 0
    block = 0
    while done < n_mc:
        m = min(_CHUNK, n_mc - done)
        sub = _mc_scenario(scenario, m, seed, 1000 + block)
        rng = np.random.default_rng(np.random.SeedSequence([sub.seed & 0xFFFFFFFF, m]))
        x1, u01 = gen_covariates(sub, rng)
        a1 = (rng.uniform(size=m) < propensity(sub, 1, x1)).astype(np.int8)
        x2 = gen_x2(sub, x1, a1, u01, rng)
        r = gen_response(x2[:, 3], sub.response_median)
        mu2a = propensity(sub, 2, x2)
        wts = mu2a * (1.0 - mu2a)
        s = design.s_map(x1, a1, x2, r)
        d2 = delta2(sub, a1.astype(np.float64), x2, r)
        sw = s * wts[:, None]
        gram += sw.T @ s
        rhs += sw.T @ d2
        done += m
        block += 1
    return solve_spd(gram / n_mc, rhs / n_mc)


def project_true_beta1(scenario: Scenario, n_mc: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """Population weighted projection of the true first-stage blip onto W."""
    design = design_for(scenario)
    gram = np.zeros((design.d1, design.d1))
    rhs = np.zeros(design.d1)
    done = 0
    block = 0
    while done < n_mc:
        m = min(_CHUNK, n_mc - done)
        sub = _mc_scenario(scenario, m, seed, 2000 + block)
        rng = np.random.default_rng(np.random.SeedSequence([sub.seed & 0xFFFFFFFF, m]))
        x1, _ = gen_covariates(sub, rng)
        mu1a = propensity(sub, 1, x1)
        wts = mu1a * (1.0 - mu1a)
        w = design.w_map(x1)
        d1 = delta1(sub, x1)
        ww = w * wts[:, None]
        gram += ww.T @ w
        rhs += ww.T @ d1
        done += m
        block += 1
    return solve_spd(gram / n_mc, rhs / n_mc)


@dataclass(frozen=True)
class ValueResult:
    value: float
    optimal_value: float
    regret: float


def regime_value(scenario: Scenario, regime, n_mc: int = 200_000, seed: int = 0) -> ValueResult:
    """Monte Carlo value of a regime and of the true optimal regime.

    Counterfactual actions replace the assignment mechanism; intermediate
    covariates are regenerated under the regime's first action where the
    generative model lets a1 reach them.  Fresh outcome noise each draw.
    """
    total = 0.0
    total_opt = 0.0
    done = 0
    block = 0
    while done < n_mc:
        m = min(_CHUNK, n_mc - done)
        sub = _mc_scenario(scenario, m, seed, 3000 + block)
        rng = np.random.default_rng(np.random.SeedSequence([sub.seed & 0xFFFFFFFF, m]))
        design = design_for(sub)
        x1, u01 = gen_covariates(sub, rng)

        w = design.w_map(x1)
        a1 = regime.decide1(w).astype(np.int8)
        x2 = gen_x2(sub, x1, a1, u01, rng)
        r = gen_response(x2[:, 3], sub.response_median)
        s = design.s_map(x1, a1, x2, r)
        a2 = regime.decide2(s).astype(np.float64)
        y = gen_outcome(sub, x1, a1, x2, a2, r, rng)
        total += float(y.sum())

        a1o = (delta1(sub, x1) > 0.0).astype(np.int8)
        x2o = gen_x2(sub, x1, a1o, u01, rng)
        ro = gen_response(x2o[:, 3], sub.response_median)
        d2o = delta2(sub, a1o.astype(np.float64), x2o, ro)
        a2o = (d2o > 0.0).astype(np.float64)
        yo = gen_outcome(sub, x1, a1o, x2o, a2o, ro, rng)
        total_opt += float(yo.sum())

        done += m
        block += 1
    value = total / n_mc
    opt = total_opt / n_mc
    return ValueResult(value=value, optimal_value=opt, regret=opt - value)


def true_nuisances(scenario: Scenario, data: Dataset, clip_eps: float = 1e-3) -> NuisanceEstimates:
    """Oracle nuisance values for injection in place of cross-fitted ones.

    mu2a and mu1a are the generative propensities, mu2y the exact conditional
    outcome mean.  mu1y has a closed form only for the exactly-linear outcome
    family under randomized assignment; elsewhere it is left unset.
    """
    mu2a = np.clip(propensity(scenario, 2, data.x2), clip_eps, 1.0 - clip_eps)
    mu1a = np.clip(propensity(scenario, 1, data.x1), clip_eps, 1.0 - clip_eps)
    r = data.r if data.r is not None else np.ones(data.n, dtype=np.int8)
    mu2y = eta2(scenario, data.x1, data.a1.astype(np.float64), data.x2) + mu2a * delta2(
        scenario, data.a1.astype(np.float64), data.x2, r
    )
    est = NuisanceEstimates(
        mu1a=mu1a, mu2a=mu2a, mu2y=mu2y,
        fold_of=np.zeros(data.n, dtype=np.int64), clip_eps=clip_eps,
    )
    if scenario.outcome == "linear_r" and scenario.propensity == "randomized":
        est = est.with_mu1y(_mu1y_linear_randomized(data.x1))
    return est


def _abs_mean_triangular(c: np.ndarray) -> np.ndarray:
    # E|c + V| for V the sum of two independent U[-0.5, 0.5] draws.
    a = np.abs(c)
    inside = a <= 1.0
    out = np.where(inside, c**2 - a**3 / 3.0 + 1.0 / 3.0, a)
    return out


def _mu1y_linear_randomized(x1: np.ndarray) -> np.ndarray:
    # E[pseudo-outcome | x1] for the exactly-linear family under coin-flip
    # assignment: linear part plus the eligibility-weighted positive-part
    # correction E[R * t * (I(t>0) - 1/2)] = P(R=1) * E|t| / 2.
    lin = x1 @ ALPHA + (x1[:, 0] + 0.1 * x1[:, 1] + 0.1 * x1[:, 2] + 0.035 * x1[:, 4])
    p_r = 0.5 - 0.35 * x1[:, 4]
    c = x1[:, 0] + x1[:, 1]
    return lin + p_r * _abs_mean_triangular(c) / 2.0
