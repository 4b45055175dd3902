"""INI experiment configuration and the named-learner registry.

Config files are flat INI sections with key=value lines (diff-friendly, no
schema engine).  Learners are referenced by short names; treatment nuisances
get the probability-task variant automatically.
"""

from __future__ import annotations

import configparser
from typing import Dict, Tuple

from .crossfit import NuisanceLearners
from .exceptions import ConfigError
from .harness import INFERENCES, METHODS, ExperimentConfig
from .learners import LearnerSpec
from .simgen import OUTCOMES, PROPENSITIES

LEARNER_NAMES = ("linear", "linear_quad", "logistic", "logistic_quad",
                 "spline", "kernel", "forest", "super_learner")

_INFERENCE_ALIASES = {
    "sandwich": "sandwich",
    "n_of_n": "n_of_n", "nofn": "n_of_n",
    "m_of_n": "m_of_n", "mofn": "m_of_n",
    "none": "none",
}


def normalize_inference(token: str) -> str:
    key = token.strip().lower()
    if key not in _INFERENCE_ALIASES:
        raise ConfigError(f"unknown inference {token!r} (expected one of {sorted(set(_INFERENCE_ALIASES))})")
    return _INFERENCE_ALIASES[key]


def make_learner(name: str, task: str, tuning: Dict[str, Dict[str, str]]) -> LearnerSpec:
    """Resolve a short learner name to a LearnerSpec for the given task.

    ``tuning`` carries optional [forest]/[spline]/[kernel] override sections.
    """
    name = name.strip().lower()
    forest = tuning.get("forest", {})
    spline = tuning.get("spline", {})
    kernel = tuning.get("kernel", {})
    if name == "linear":
        if task == "probability":
            return LearnerSpec(kind="logistic", task=task)
        return LearnerSpec(kind="linear", task=task)
    if name == "linear_quad":
        if task == "probability":
            return LearnerSpec(kind="logistic", task=task, degree=2)
        return LearnerSpec(kind="linear", task=task, degree=2)
    if name == "logistic":
        return LearnerSpec(kind="logistic", task="probability")
    if name == "logistic_quad":
        return LearnerSpec(kind="logistic", task="probability", degree=2)
    if name == "spline":
        return LearnerSpec(kind="additive_spline", task=task, knots=int(spline.get("knots", 5)))
    if name == "kernel":
        return LearnerSpec(kind="kernel", task=task,
                           bandwidth_scale=float(kernel.get("bandwidth_scale", 1.0)))
    if name == "forest":
        return LearnerSpec(
            kind="random_forest", task=task,
            trees=int(forest.get("trees", 100)),
            min_leaf=int(forest.get("min_leaf", 5)),
            max_depth=int(forest.get("max_depth", 32)),
        )
    raise ConfigError(f"unknown learner name {name!r}")


def _stack(names: Tuple[str, ...], task: str, tuning, v_folds: int) -> LearnerSpec:
    base = tuple(make_learner(nm, task, tuning) for nm in names)
    return LearnerSpec(kind="super_learner", task=task, base=base, v_folds=v_folds)


def _split(raw: str) -> Tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def learners_from_config(cp: configparser.ConfigParser) -> NuisanceLearners:
    tuning = {sec: dict(cp[sec]) for sec in ("forest", "spline", "kernel") if sec in cp}
    sl = cp["super_learner"] if "super_learner" in cp else {}
    v_folds = int(sl.get("v_folds", 5))
    treatment_base = _split(sl.get("treatment_base", "logistic, logistic_quad"))
    outcome_base = _split(sl.get("outcome_base", "linear, linear_quad, spline"))

    section = cp["learners"] if "learners" in cp else {}

    def resolve(role: str, task: str, default: str) -> LearnerSpec:
        name = section.get(role, default).strip().lower()
        if name == "super_learner":
            names = treatment_base if task == "probability" else outcome_base
            if not names:
                raise ConfigError(f"super_learner for {role} has an empty base list")
            return _stack(names, task, tuning, v_folds)
        return make_learner(name, task, tuning)

    return NuisanceLearners(
        mu2y=resolve("mu2y", "regression", "super_learner"),
        mu2a=resolve("mu2a", "probability", "super_learner"),
        mu1y=resolve("mu1y", "regression", "super_learner"),
        mu1a=resolve("mu1a", "probability", "super_learner"),
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    """Parse an INI experiment file into an ExperimentConfig."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    if "experiment" not in cp or "scenarios" not in cp:
        raise ConfigError("config needs [experiment] and [scenarios] sections")
    exp = cp["experiment"]
    scen = cp["scenarios"]

    try:
        propensities = _split(scen.get("propensity", ""))
        outcomes = _split(scen.get("outcome", ""))
        varpis = tuple(int(v) for v in _split(scen.get("varpi", "0")))
        sample_sizes = tuple(int(v) for v in _split(exp.get("sample_sizes", exp.get("n", ""))))
        replications = int(exp.get("replications", "1"))
        methods = _split(exp.get("methods", "proposed")) or ("proposed",)
    except ValueError as exc:
        raise ConfigError(f"bad numeric value in config: {exc}")

    for p in propensities:
        if p not in PROPENSITIES:
            raise ConfigError(f"unknown propensity {p!r}")
    for o in outcomes:
        if o not in OUTCOMES:
            raise ConfigError(f"unknown outcome {o!r}")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")

    inference = []
    if "inference" in cp:
        for m, tok in cp["inference"].items():
            if m not in METHODS:
                raise ConfigError(f"inference entry for unknown method {m!r}")
            inference.append((m, normalize_inference(tok)))
    else:
        inference = [(m, "sandwich" if m == "proposed" else "none") for m in methods]

    try:
        return ExperimentConfig(
            propensities=propensities,
            outcomes=outcomes,
            sample_sizes=sample_sizes,
            replications=replications,
            learners=learners_from_config(cp),
            varpis=varpis,
            methods=methods,
            inference=tuple(inference),
            k_folds=int(exp.get("k_folds", "2")),
            clip_eps=float(exp.get("clip_eps", "0.01")),
            seed=int(exp.get("seed", "20260401")),
            ci_level=float(exp.get("ci_level", "0.95")),
            n_boot=int(exp.get("n_boot", "200")),
            kappa=float(exp.get("kappa", "0.05")),
            truth_mc=int(exp.get("truth_mc", "1000000")),
            value_mc=int(exp.get("value_mc", "100000")),
            workers=int(exp.get("workers", "0")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad value in [experiment]: {exc}")
