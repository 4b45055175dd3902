"""Experiment orchestration: scenario grids, replication, and aggregation.

Every replication's seed is derived by counter from the master seed, so a
run is fully determined by (config, seed) no matter how many worker
processes execute it; results are reduced in task order.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import BootstrapSpec, comparator_inference, fit_dwols, fit_standard_q
from .crossfit import NuisanceLearners
from .exceptions import ConfigError, RqlearnError
from .learners import child_seed
from .robust_q import Regime, fit_robust_q, wald_ci
from .simgen import (
    REGULAR,
    Scenario,
    design_for,
    regime_value,
    scenario_truth,
    simulate_dataset,
)

METHODS = ("proposed", "standard_q", "dwols")
INFERENCES = ("sandwich", "n_of_n", "m_of_n", "none")
WORKERS_ENV = "RQL_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    """A scenario grid, the methods to run on it, and estimation settings."""

    propensities: Tuple[str, ...]
    outcomes: Tuple[str, ...]
    sample_sizes: Tuple[int, ...]
    replications: int
    learners: NuisanceLearners
    varpis: Tuple[int, ...] = (0,)
    methods: Tuple[str, ...] = ("proposed",)
    inference: Tuple[Tuple[str, str], ...] = (("proposed", "sandwich"),)
    k_folds: int = 2
    clip_eps: float = 0.01
    seed: int = 20260401
    ci_level: float = 0.95
    n_boot: int = 200
    kappa: float = 0.05
    truth_mc: int = 1_000_000
    value_mc: int = 100_000
    workers: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for m, inf in self.inference:
            if m not in METHODS or inf not in INFERENCES:
                raise ConfigError(f"invalid inference pair ({m}, {inf})")
            if inf == "sandwich" and m != "proposed":
                raise ConfigError("sandwich inference is only valid for the proposed method")
            if m == "proposed" and inf in ("n_of_n", "m_of_n"):
                raise ConfigError("the proposed method uses sandwich inference only")
        if not self.propensities or not self.outcomes or not self.sample_sizes:
            raise ConfigError("scenario grid must be nonempty")

    def inference_for(self, method: str) -> str:
        for m, inf in self.inference:
            if m == method:
                return inf
        return "sandwich" if method == "proposed" else "none"


def resolve_workers(requested: Optional[int], config_workers: int = 0) -> int:
    if requested is not None and requested > 0:
        return requested
    if config_workers > 0:
        return config_workers
    env = os.environ.get(WORKERS_ENV, "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}")
    return 1


def scenario_cells(config: ExperimentConfig) -> List[Scenario]:
    """The scenario grid; the non-regularity knob collapses for regular outcomes."""
    cells = []
    seen = set()
    for prop in config.propensities:
        for out in config.outcomes:
            for varpi in (config.varpis if out not in REGULAR else (0,)):
                for n in config.sample_sizes:
                    key = (prop, out, varpi, n)
                    if key in seen:
                        continue
                    seen.add(key)
                    cells.append(Scenario(propensity=prop, outcome=out, n=n, seed=0, varpi=varpi))
    return cells


def cell_id(scen: Scenario) -> str:
    base = f"{scen.propensity}:{scen.outcome}"
    if scen.outcome not in REGULAR:
        base += f":v{scen.varpi}"
    return f"{base}:n{scen.n}"


def parameter_names(design) -> List[str]:
    return [f"beta2_{j}" for j in range(design.d2)] + [f"beta1_{j}" for j in range(design.d1)]


def _replicate(config: ExperimentConfig, scen: Scenario) -> Dict[str, dict]:
    """One dataset, all requested methods on it."""
    data, _ = simulate_dataset(scen)
    design = design_for(scen)
    out: Dict[str, dict] = {}
    for method in config.methods:
        inf = config.inference_for(method)
        start = time.perf_counter()
        try:
            if method == "proposed":
                res = fit_robust_q(
                    data, design, config.learners,
                    k_folds=config.k_folds,
                    seed=child_seed(scen.seed, 17),
                    clip_eps=config.clip_eps,
                )
                est = np.concatenate([res.stage2.beta, res.stage1.beta])
                if inf == "sandwich":
                    lo2, hi2 = wald_ci(res.stage2.beta, res.stage2.se, config.ci_level)
                    lo1, hi1 = wald_ci(res.stage1.beta, res.stage1.se, config.ci_level)
                    lo, hi = np.concatenate([lo2, lo1]), np.concatenate([hi2, hi1])
                else:
                    lo = hi = None
            else:
                if inf == "none":
                    fit = fit_standard_q(data, design) if method == "standard_q" else fit_dwols(data, design)
                    est = np.concatenate([fit.beta2, fit.beta1])
                    lo = hi = None
                else:
                    spec = BootstrapSpec(
                        variant=inf, kappa=config.kappa,
                        n_boot=config.n_boot, ci_level=config.ci_level,
                    )
                    ci = comparator_inference(method, data, design, spec, seed=child_seed(scen.seed, 23))
                    est = np.concatenate([ci.beta2, ci.beta1])
                    lo = np.concatenate([ci.ci2[0], ci.ci1[0]])
                    hi = np.concatenate([ci.ci2[1], ci.ci1[1]])
            out[method] = {
                "est": est, "lo": lo, "hi": hi,
                "seconds": time.perf_counter() - start,
            }
        except RqlearnError as exc:
            out[method] = {"error": str(exc), "seconds": time.perf_counter() - start}
    return out


def _replicate_task(args):
    return _replicate(*args)


@dataclass
class RawCell:
    """Per-replication estimates for one (scenario, method) cell."""

    scenario: Scenario
    method: str
    estimates: np.ndarray          # (reps, p); failed reps are NaN rows
    ci_lo: Optional[np.ndarray]
    ci_hi: Optional[np.ndarray]
    failures: int
    errors: List[str]
    walltime: float


def collect_cells(
    config: ExperimentConfig, workers: Optional[int] = None
) -> Dict[Tuple[str, str], RawCell]:
    """Run the full grid and return raw per-replication estimates."""
    nworkers = resolve_workers(workers, config.workers)
    cells = scenario_cells(config)
    tasks = []
    for ci_idx, scen in enumerate(cells):
        for rep in range(config.replications):
            rep_scen = replace(scen, seed=child_seed(config.seed, ci_idx, rep))
            tasks.append((config, rep_scen))

    if nworkers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=1))
    else:
        results = [_replicate_task(t) for t in tasks]

    out: Dict[Tuple[str, str], RawCell] = {}
    pos = 0
    for ci_idx, scen in enumerate(cells):
        design = design_for(scen)
        p = design.d2 + design.d1
        per_method = {
            m: {
                "est": np.full((config.replications, p), np.nan),
                "lo": np.full((config.replications, p), np.nan),
                "hi": np.full((config.replications, p), np.nan),
                "has_ci": False,
                "failures": 0,
                "errors": [],
                "seconds": 0.0,
            }
            for m in config.methods
        }
        for rep in range(config.replications):
            rep_result = results[pos]
            pos += 1
            for m in config.methods:
                slot = per_method[m]
                r = rep_result[m]
                slot["seconds"] += r.get("seconds", 0.0)
                if "error" in r:
                    slot["failures"] += 1
                    slot["errors"].append(r["error"])
                    continue
                slot["est"][rep] = r["est"]
                if r["lo"] is not None:
                    slot["lo"][rep] = r["lo"]
                    slot["hi"][rep] = r["hi"]
                    slot["has_ci"] = True
        for m in config.methods:
            slot = per_method[m]
            out[(cell_id(scen), m)] = RawCell(
                scenario=scen,
                method=m,
                estimates=slot["est"],
                ci_lo=slot["lo"] if slot["has_ci"] else None,
                ci_hi=slot["hi"] if slot["has_ci"] else None,
                failures=slot["failures"],
                errors=slot["errors"][:5],
                walltime=slot["seconds"],
            )
    return out


@dataclass
class ResultRow:
    """One aggregated (scenario, method, parameter) line of a results table."""

    scenario: str
    method: str
    parameter: str
    truth: Optional[float]
    mean_est: Optional[float]
    bias: Optional[float]
    sd: Optional[float]
    ci_len: Optional[float]
    coverage: Optional[float]
    reps: int
    walltime: float = 0.0
    invalid: bool = False


def cell_truth(config: ExperimentConfig, scen: Scenario) -> np.ndarray:
    truth = scenario_truth(scen, n_mc=config.truth_mc, seed=child_seed(config.seed, 911))
    return np.concatenate([truth.beta2_star, truth.beta1_star])


def aggregate_cell(cell: RawCell, truth: np.ndarray, names: Sequence[str]) -> List[ResultRow]:
    reps_ok = int(np.sum(~np.isnan(cell.estimates[:, 0])))
    invalid = cell.failures > 0.1 * cell.estimates.shape[0]
    rows: List[ResultRow] = []
    for j, name in enumerate(names):
        tj = float(truth[j])
        if invalid or reps_ok == 0:
            rows.append(ResultRow(
                scenario=cell_id(cell.scenario), method=cell.method, parameter=name,
                truth=tj, mean_est=None, bias=None, sd=None, ci_len=None,
                coverage=None, reps=reps_ok, walltime=cell.walltime, invalid=True,
            ))
            continue
        est = cell.estimates[:, j]
        ok = ~np.isnan(est)
        mean_est = float(np.mean(est[ok]))
        bias = mean_est - tj
        sd = float(np.std(est[ok], ddof=1)) if reps_ok > 1 else None
        ci_len = coverage = None
        if cell.ci_lo is not None:
            lo, hi = cell.ci_lo[ok, j], cell.ci_hi[ok, j]
            ci_len = float(np.mean(hi - lo))
            coverage = float(np.mean((lo <= tj) & (tj <= hi)))
        rows.append(ResultRow(
            scenario=cell_id(cell.scenario), method=cell.method, parameter=name,
            truth=tj, mean_est=mean_est, bias=bias, sd=sd, ci_len=ci_len,
            coverage=coverage, reps=reps_ok, walltime=cell.walltime,
        ))
    return rows


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> List[ResultRow]:
    """Simulate, fit, and aggregate the whole grid into result rows.

    Deterministic for a fixed (config, seed) regardless of worker count.
    """
    cells = collect_cells(config, workers=workers)
    rows: List[ResultRow] = []
    for scen in scenario_cells(config):
        truth = cell_truth(config, scen)
        names = parameter_names(design_for(scen))
        for m in config.methods:
            rows.extend(aggregate_cell(cells[(cell_id(scen), m)], truth, names))
    return rows


@dataclass
class ValueRow:
    """Aggregated counterfactual value of estimated regimes in one cell."""

    scenario: str
    method: str
    mean_value: float
    sd_value: Optional[float]
    mean_regret: float
    optimal_value: float
    reps: int


def _value_replicate(config: ExperimentConfig, scen: Scenario, eval_seed: int) -> Dict[str, tuple]:
    data, _ = simulate_dataset(scen)
    design = design_for(scen)
    out = {}
    for method in config.methods:
        try:
            if method == "proposed":
                res = fit_robust_q(
                    data, design, config.learners,
                    k_folds=config.k_folds, seed=child_seed(scen.seed, 17),
                    clip_eps=config.clip_eps,
                )
                regime = res.regime
            elif method == "standard_q":
                regime = fit_standard_q(data, design).regime
            else:
                regime = fit_dwols(data, design).regime
            val = regime_value(scen, regime, n_mc=config.value_mc, seed=eval_seed)
            out[method] = (val.value, val.optimal_value, val.regret)
        except RqlearnError:
            out[method] = None
    return out


def _value_task(args):
    return _value_replicate(*args)


def run_value_study(config: ExperimentConfig, workers: Optional[int] = None) -> List[ValueRow]:
    """Counterfactual mean outcome of each method's estimated regime.

    The value oracle reuses one evaluation seed per cell so methods are
    compared on identical counterfactual draws.
    """
    nworkers = resolve_workers(workers, config.workers)
    cells = scenario_cells(config)
    tasks = []
    for ci_idx, scen in enumerate(cells):
        eval_seed = child_seed(config.seed, 733, ci_idx)
        for rep in range(config.replications):
            rep_scen = replace(scen, seed=child_seed(config.seed, ci_idx, rep))
            tasks.append((config, rep_scen, eval_seed))
    if nworkers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(_value_task, tasks, chunksize=1))
    else:
        results = [_value_task(t) for t in tasks]

    rows: List[ValueRow] = []
    pos = 0
    for scen in cells:
        chunk = results[pos : pos + config.replications]
        pos += config.replications
        for m in config.methods:
            vals = [c[m] for c in chunk if c[m] is not None]
            if not vals:
                continue
            values = np.array([v[0] for v in vals])
            regrets = np.array([v[2] for v in vals])
            rows.append(ValueRow(
                scenario=cell_id(scen), method=m,
                mean_value=float(values.mean()),
                sd_value=float(values.std(ddof=1)) if len(vals) > 1 else None,
                mean_regret=float(regrets.mean()),
                optimal_value=float(vals[0][1]),
                reps=len(vals),
            ))
    return rows
