"""Result tables (CSV and markdown) and single-dataset analysis reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binomtest

from .baselines import BootstrapSpec, comparator_inference
from .crossfit import NuisanceLearners
from .data_model import Dataset, StageDesign
from .exceptions import ConfigError
from .harness import ResultRow, ValueRow
from .robust_q import fit_robust_q, wald_ci

CSV_HEADER = "scenario,method,parameter,truth,mean_est,bias,sd,ci_len,coverage,reps"


def _fmt(value: Optional[float], digits: int = 6) -> str:
    if value is None:
        return ""
    return format(float(value), f".{digits}g")


def write_results_csv(rows: Sequence[ResultRow], path: str) -> str:
    """Delimited results; header is fixed and the file round-trips exactly."""
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        writer = csv.writer(fh)
        for r in rows:
            writer.writerow([
                r.scenario, r.method, r.parameter,
                _fmt(r.truth), _fmt(r.mean_est), _fmt(r.bias), _fmt(r.sd),
                _fmt(r.ci_len), _fmt(r.coverage), str(r.reps),
            ])
    return path


def read_results_csv(path: str) -> List[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != CSV_HEADER:
            raise ConfigError(f"unexpected results header in {path!r}")
        rows = []
        for rec in reader:
            vals = [None if v == "" else float(v) for v in rec[3:9]]
            rows.append(ResultRow(
                scenario=rec[0], method=rec[1], parameter=rec[2],
                truth=vals[0], mean_est=vals[1], bias=vals[2], sd=vals[3],
                ci_len=vals[4], coverage=vals[5], reps=int(rec[9]),
            ))
    return rows


def coverage_flag(coverage: Optional[float], reps: int, level: float = 0.95) -> str:
    """Dagger when empirical coverage differs significantly from nominal."""
    if coverage is None or reps < 1:
        return ""
    hits = int(round(coverage * reps))
    p = binomtest(hits, reps, level).pvalue
    return "+" if p < 0.05 else ""


def write_results_markdown(rows: Sequence[ResultRow], path: str, level: float = 0.95) -> str:
    """Markdown report grouped by treatment-assignment model, in row order."""
    groups: List[str] = []
    for r in rows:
        g = r.scenario.split(":", 1)[0]
        if g not in groups:
            groups.append(g)
    lines = ["# Simulation results", ""]
    for g in groups:
        lines.append(f"## {g} treatment assignment")
        lines.append("")
        lines.append(
            "| scenario | method | parameter | truth | mean | abs_bias | sd | ci_len | coverage | reps | wall_s |"
        )
        lines.append("|---|---|---|---|---|---|---|---|---|---|---|")
        for r in rows:
            if r.scenario.split(":", 1)[0] != g:
                continue
            if r.invalid:
                lines.append(
                    f"| {r.scenario} | {r.method} | {r.parameter} | {_fmt(r.truth, 4)} "
                    f"| invalid | | | | | {r.reps} | {_fmt(r.walltime, 4)} |"
                )
                continue
            cov = ""
            if r.coverage is not None:
                cov = _fmt(r.coverage, 4) + coverage_flag(r.coverage, r.reps, level)
            abs_bias = None if r.bias is None else abs(r.bias)
            lines.append(
                f"| {r.scenario} | {r.method} | {r.parameter} | {_fmt(r.truth, 4)} "
                f"| {_fmt(r.mean_est, 4)} | {_fmt(abs_bias, 4)} | {_fmt(r.sd, 4)} "
                f"| {_fmt(r.ci_len, 4)} | {cov} | {r.reps} | {_fmt(r.walltime, 4)} |"
            )
        lines.append("")
    lines.append(f"`+` flags empirical coverage significantly off the nominal {level:.0%}")
    lines.append("level by a binomial test at the 5% level.")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def emit_table(rows: Sequence[ResultRow], fmt: str, path: str, level: float = 0.95) -> str:
    """Write aggregated rows as 'csv' or 'markdown'; empty input still gets a header."""
    if fmt == "csv":
        return write_results_csv(rows, path)
    if fmt == "markdown":
        return write_results_markdown(rows, path, level)
    raise ConfigError(f"unknown output format {fmt!r}")


VALUE_HEADER = "scenario,method,mean_value,sd_value,mean_regret,optimal_value,reps"


def write_value_csv(rows: Sequence[ValueRow], path: str) -> str:
    with open(path, "w", newline="") as fh:
        fh.write(VALUE_HEADER + "\n")
        writer = csv.writer(fh)
        for r in rows:
            writer.writerow([
                r.scenario, r.method, _fmt(r.mean_value), _fmt(r.sd_value),
                _fmt(r.mean_regret), _fmt(r.optimal_value), str(r.reps),
            ])
    return path


@dataclass
class AnalysisRow:
    """One blip coefficient of a fitted analysis with its interval."""

    stage: str
    term: str
    estimate: float
    ci_lo: float
    ci_hi: float
    significant: bool


def analyze(
    data: Dataset,
    design: StageDesign,
    method: str,
    inference: str,
    learners: Optional[NuisanceLearners] = None,
    k_folds: int = 2,
    clip_eps: float = 0.01,
    seed: int = 0,
    ci_level: float = 0.95,
    n_boot: int = 200,
    kappa: float = 0.05,
) -> List[AnalysisRow]:
    """Fit one method on one dataset and report per-coefficient intervals.

    Output has one row per blip coefficient, second stage first; a
    coefficient is flagged significant when its interval excludes zero.
    """
    if method == "proposed":
        if inference != "sandwich":
            raise ConfigError("the proposed method uses sandwich inference")
        if learners is None:
            raise ConfigError("analyze(proposed) needs nuisance learners")
        res = fit_robust_q(data, design, learners, k_folds=k_folds, seed=seed, clip_eps=clip_eps)
        est2, est1 = res.stage2.beta, res.stage1.beta
        lo2, hi2 = wald_ci(est2, res.stage2.se, ci_level)
        lo1, hi1 = wald_ci(est1, res.stage1.se, ci_level)
    elif method in ("standard_q", "dwols"):
        if inference not in ("n_of_n", "m_of_n"):
            raise ConfigError("comparator methods use bootstrap inference (n_of_n or m_of_n)")
        spec = BootstrapSpec(variant=inference, kappa=kappa, n_boot=n_boot, ci_level=ci_level)
        ci = comparator_inference(method, data, design, spec, seed=seed)
        est2, est1 = ci.beta2, ci.beta1
        (lo2, hi2), (lo1, hi1) = ci.ci2, ci.ci1
    else:
        raise ConfigError(f"unknown method {method!r}")

    rows: List[AnalysisRow] = []
    for names, est, lo, hi, stage in (
        (design.s_names, est2, lo2, hi2, "stage2"),
        (design.w_names, est1, lo1, hi1, "stage1"),
    ):
        for j, name in enumerate(names):
            rows.append(AnalysisRow(
                stage=stage, term=name, estimate=float(est[j]),
                ci_lo=float(lo[j]), ci_hi=float(hi[j]),
                significant=bool(lo[j] > 0.0 or hi[j] < 0.0),
            ))
    return rows


ANALYSIS_HEADER = "stage,term,estimate,ci_lo,ci_hi,significant"


def write_analysis_csv(rows: Sequence[AnalysisRow], path: str) -> str:
    with open(path, "w", newline="") as fh:
        fh.write(ANALYSIS_HEADER + "\n")
        writer = csv.writer(fh)
        for r in rows:
            writer.writerow([
                r.stage, r.term, _fmt(r.estimate), _fmt(r.ci_lo), _fmt(r.ci_hi),
                "1" if r.significant else "0",
            ])
    return path


def write_analysis_markdown(rows: Sequence[AnalysisRow], path: str, level: float = 0.95) -> str:
    lines = ["# Blip coefficient estimates", ""]
    for stage, title in (("stage2", "Stage 2"), ("stage1", "Stage 1")):
        lines.append(f"## {title}")
        lines.append("")
        lines.append(f"| term | estimate | {level:.0%} CI | significant |")
        lines.append("|---|---|---|---|")
        for r in rows:
            if r.stage != stage:
                continue
            mark = "yes" if r.significant else ""
            lines.append(
                f"| {r.term} | {_fmt(r.estimate, 4)} "
                f"| ({_fmt(r.ci_lo, 4)}, {_fmt(r.ci_hi, 4)}) | {mark} |"
            )
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
