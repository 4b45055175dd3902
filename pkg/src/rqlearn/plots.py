"""Figure rendering for simulation, value-study, and analysis reports.

Figures are written next to the delimited output with a non-interactive
backend; nothing here affects the numbers.
"""

from __future__ import annotations

from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import ResultRow, ValueRow
from .report import AnalysisRow

_METHOD_STYLE = {
    "proposed": dict(color="#1f77b4", marker="o"),
    "standard_q": dict(color="#d62728", marker="s"),
    "dwols": dict(color="#2ca02c", marker="^"),
}


def _style(method: str) -> dict:
    return _METHOD_STYLE.get(method, dict(color="#7f7f7f", marker="x"))


def save_bias_sd_figure(rows: Sequence[ResultRow], path: str) -> str:
    """Absolute bias and Monte Carlo SD per parameter, one panel pair."""
    rows = [r for r in rows if not r.invalid and r.mean_est is not None]
    if not rows:
        rows = []
    labels: List[str] = []
    for r in rows:
        lab = f"{r.scenario}\n{r.parameter}"
        if lab not in labels:
            labels.append(lab)
    methods: List[str] = []
    for r in rows:
        if r.method not in methods:
            methods.append(r.method)

    fig, axes = plt.subplots(2, 1, figsize=(max(6.0, 0.55 * len(labels) + 2), 6.4), sharex=True)
    x = np.arange(len(labels))
    for mi, method in enumerate(methods):
        off = (mi - (len(methods) - 1) / 2) * 0.18
        bias = np.full(len(labels), np.nan)
        sd = np.full(len(labels), np.nan)
        for r in rows:
            if r.method != method:
                continue
            i = labels.index(f"{r.scenario}\n{r.parameter}")
            bias[i] = abs(r.bias) if r.bias is not None else np.nan
            sd[i] = r.sd if r.sd is not None else np.nan
        axes[0].plot(x + off, bias, linestyle="none", label=method, **_style(method))
        axes[1].plot(x + off, sd, linestyle="none", label=method, **_style(method))
    axes[0].set_ylabel("|bias|")
    axes[1].set_ylabel("Monte Carlo SD")
    axes[1].set_xticks(x)
    axes[1].set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    if methods:
        axes[0].legend(frameon=False, fontsize=8)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_coverage_figure(rows: Sequence[ResultRow], path: str, level: float = 0.95) -> str:
    """Empirical CI coverage per parameter with the nominal line."""
    rows = [r for r in rows if r.coverage is not None and not r.invalid]
    labels: List[str] = []
    for r in rows:
        lab = f"{r.scenario}\n{r.parameter}"
        if lab not in labels:
            labels.append(lab)
    methods = sorted({r.method for r in rows})
    fig, ax = plt.subplots(figsize=(max(6.0, 0.55 * len(labels) + 2), 3.6))
    x = np.arange(len(labels))
    for mi, method in enumerate(methods):
        off = (mi - (len(methods) - 1) / 2) * 0.18
        cov = np.full(len(labels), np.nan)
        for r in rows:
            if r.method != method:
                continue
            cov[labels.index(f"{r.scenario}\n{r.parameter}")] = r.coverage
        ax.plot(x + off, cov, linestyle="none", label=method, **_style(method))
    ax.axhline(level, color="k", linewidth=0.8, linestyle="--")
    ax.set_ylabel("coverage")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    if methods:
        ax.legend(frameon=False, fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_value_figure(rows: Sequence[ValueRow], path: str) -> str:
    """Mean counterfactual value by sample size, one line per method."""
    methods: List[str] = []
    for r in rows:
        if r.method not in methods:
            methods.append(r.method)

    def size_of(scenario: str) -> int:
        return int(scenario.rsplit(":n", 1)[1])

    def family_of(scenario: str) -> str:
        return scenario.rsplit(":n", 1)[0]

    families: List[str] = []
    for r in rows:
        f = family_of(r.scenario)
        if f not in families:
            families.append(f)

    fig, axes = plt.subplots(1, max(1, len(families)),
                             figsize=(4.2 * max(1, len(families)), 3.4), squeeze=False)
    for fi, fam in enumerate(families):
        ax = axes[0][fi]
        fam_rows = [r for r in rows if family_of(r.scenario) == fam]
        opt = fam_rows[0].optimal_value
        ax.axhline(opt, color="k", linestyle="--", linewidth=0.8, label="optimal")
        for method in methods:
            pts = sorted(
                ((size_of(r.scenario), r.mean_value) for r in fam_rows if r.method == method)
            )
            if pts:
                ns, vals = zip(*pts)
                ax.plot(ns, vals, label=method, **_style(method))
        ax.set_xscale("log")
        ax.set_xlabel("sample size")
        ax.set_ylabel("mean value")
        ax.set_title(fam, fontsize=9)
        ax.grid(True, alpha=0.3)
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_coefficient_figure(rows: Sequence[AnalysisRow], path: str) -> str:
    """Forest plot of blip coefficients with their intervals."""
    fig, ax = plt.subplots(figsize=(6.0, 0.4 * max(4, len(rows)) + 1))
    ypos = np.arange(len(rows))[::-1]
    for y, r in zip(ypos, rows):
        color = "#1f77b4" if r.stage == "stage2" else "#2ca02c"
        ax.plot([r.ci_lo, r.ci_hi], [y, y], color=color, linewidth=1.6)
        ax.plot([r.estimate], [y], marker="o", color=color)
    ax.axvline(0.0, color="k", linewidth=0.8)
    ax.set_yticks(ypos)
    ax.set_yticklabels([f"{r.stage}:{r.term}" for r in rows], fontsize=8)
    ax.set_xlabel("coefficient")
    ax.grid(True, axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
