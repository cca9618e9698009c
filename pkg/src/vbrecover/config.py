"""Experiment configuration files.

A config is a YAML mapping. Every key is optional except ``experiment``;
unknown keys anywhere are rejected. Example::

    experiment: evolution        # recover | threshold | evolution | stopmap | concentration
    alg: sbb                     # lm | sbb
    seed: 7                      # master seed, every other seed derives from it
    trials: 20
    workers: 1
    output_dir: out/fig1
    max_iter: null               # null -> 10 d_v log2(n) + 100
    graph:
      n: 100000
      d_v: 5
      d_c: 6
      weight_mode: all_ones      # all_ones | continuous_uniform
      weight_range: [0.5, 2.0]
      forbid_four_cycles: false
    signal:
      alpha: 0.38
      value_mode: integer        # gaussian | integer
      int_range: 281474976710656
    policy:
      mode: auto                 # auto | exact | tolerance
      abs_tol: null
      rel_tol: 1.0e-13
    stopping:
      success_eps: 1.0e-7
      stall_eps: 1.0e-8
      window: 3
    sweep: [0.38, 0.40]          # alpha0 values for evolution / stopmap
    threshold:
      seeds: 3
      resolution: 0.001
    concentration:
      n_list: [1000, 10000, 100000]
      ell: 2

The graph and signal ``seed`` fields are not set in the file; they are
derived from the master seed.
"""

from __future__ import annotations

import copy
import logging
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .analysis import StoppingCriteria
from .decoder import AlgorithmKind, ComparisonPolicy
from .ensembles import (
    ConfigurationError,
    GraphConfig,
    SignalConfig,
    ValueMode,
    WeightMode,
    admissible_n,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentKind",
    "ThresholdOptions",
    "ConcentrationOptions",
    "ExperimentConfig",
    "derive_seed",
    "load_config",
    "config_from_dict",
    "apply_profile",
    "PROFILES",
]


class ExperimentKind(str, Enum):
    RECOVER = "recover"
    THRESHOLD = "threshold"
    EVOLUTION = "evolution"
    STOPMAP = "stopmap"
    CONCENTRATION = "concentration"


def derive_seed(master: int, purpose: str, *keys: int) -> int:
    """A 63-bit seed for ``purpose`` that depends only on the master seed and keys."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(purpose.encode()), *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class ThresholdOptions:
    seeds: int = 3
    resolution: float = 1e-3


@dataclass(frozen=True)
class ConcentrationOptions:
    n_list: tuple[int, ...] = (1000, 10000, 100000)
    ell: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentKind
    graph: GraphConfig
    signal: SignalConfig
    alg: AlgorithmKind = AlgorithmKind.SBB
    policy: ComparisonPolicy | None = None  # None: pick from the measurements
    stopping: StoppingCriteria = field(default_factory=StoppingCriteria)
    trials: int = 1000
    seed: int = 0
    output_dir: Path = Path("out")
    workers: int = 1
    max_iter: int | None = None
    sweep: tuple[float, ...] = ()
    threshold: ThresholdOptions = field(default_factory=ThresholdOptions)
    concentration: ConcentrationOptions = field(default_factory=ConcentrationOptions)

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not 0 <= self.seed < 2**63:
            raise ConfigurationError("seed must be a non-negative 63-bit integer")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        self.graph.validate()
        self.signal.validate()
        if self.signal.n != self.graph.n:
            raise ConfigurationError("signal and graph sizes differ")
        for a in self.sweep:
            if not 0.0 <= a <= 1.0:
                raise ConfigurationError(f"sweep value {a} outside [0, 1]")
        if self.threshold.seeds < 1 or self.threshold.resolution <= 0:
            raise ConfigurationError("threshold needs seeds >= 1 and resolution > 0")
        if self.experiment is ExperimentKind.CONCENTRATION:
            if self.trials < 30:
                raise ConfigurationError("concentration needs at least 30 trials")
            if not self.concentration.n_list or self.concentration.ell < 0:
                raise ConfigurationError("concentration needs n_list and ell >= 0")
            for n in self.concentration.n_list:
                replace(self.graph, n=n).validate()

    @property
    def alphas(self) -> tuple[float, ...]:
        return self.sweep or (self.signal.alpha,)

    def graph_config(self) -> GraphConfig:
        return replace(self.graph, seed=derive_seed(self.seed, "graph"))

    def signal_config(self, trial: int, alpha: float | None = None) -> SignalConfig:
        # the same trial uses the same seed at every alpha, so supports nest
        alpha = self.signal.alpha if alpha is None else alpha
        return replace(self.signal, alpha=alpha, seed=derive_seed(self.seed, "signal", trial))

    def to_dict(self) -> dict[str, Any]:
        pol: dict[str, Any]
        if self.policy is None:
            pol = {"mode": "auto"}
        elif self.policy.exact:
            pol = {"mode": "exact"}
        else:
            pol = {"mode": "tolerance", "abs_tol": self.policy.abs_tol, "rel_tol": self.policy.rel_tol}
        return {
            "experiment": self.experiment.value,
            "alg": self.alg.value,
            "seed": self.seed,
            "trials": self.trials,
            "workers": self.workers,
            "output_dir": str(self.output_dir),
            "max_iter": self.max_iter,
            "graph": {
                "n": self.graph.n,
                "d_v": self.graph.d_v,
                "d_c": self.graph.d_c,
                "weight_mode": self.graph.weight_mode.value,
                "weight_range": list(self.graph.weight_range),
                "forbid_four_cycles": self.graph.forbid_four_cycles,
            },
            "signal": {
                "alpha": self.signal.alpha,
                "value_mode": self.signal.value_mode.value,
                "int_range": self.signal.int_range,
            },
            "policy": pol,
            "stopping": {
                "success_eps": self.stopping.success_eps,
                "stall_eps": self.stopping.stall_eps,
                "window": self.stopping.window,
            },
            "sweep": list(self.sweep),
            "threshold": {"seeds": self.threshold.seeds, "resolution": self.threshold.resolution},
            "concentration": {
                "n_list": list(self.concentration.n_list),
                "ell": self.concentration.ell,
            },
        }


_TOP = {
    "experiment", "alg", "seed", "trials", "workers", "output_dir", "max_iter", "graph",
    "signal", "policy", "stopping", "sweep", "threshold", "concentration",
}
_GRAPH = {"n", "d_v", "d_c", "weight_mode", "weight_range", "forbid_four_cycles"}
_SIGNAL = {"alpha", "value_mode", "int_range"}
_POLICY = {"mode", "abs_tol", "rel_tol"}
_STOPPING = {"success_eps", "stall_eps", "window"}
_THRESHOLD = {"seeds", "resolution"}
_CONCENTRATION = {"n_list", "ell"}


def _section(d: dict, key: str, allowed: set[str]) -> dict:
    sub = d.get(key) or {}
    if not isinstance(sub, dict):
        raise ConfigurationError(f"{key!r} must be a mapping")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {key!r}: {sorted(unknown)}")
    return sub


def _enum(cls, value, what: str):
    try:
        return cls(str(value).lower())
    except ValueError:
        choices = [e.value for e in cls]
        raise ConfigurationError(f"{what} must be one of {choices}, got {value!r}") from None


def _policy(p: dict) -> ComparisonPolicy | None:
    mode = str(p.get("mode", "auto")).lower()
    if mode == "auto":
        if set(p) - {"mode"}:
            raise ConfigurationError("policy mode 'auto' takes no tolerances")
        return None
    if mode == "exact":
        if set(p) - {"mode"}:
            raise ConfigurationError("policy mode 'exact' takes no tolerances")
        return ComparisonPolicy.exact_mode()
    if mode == "tolerance":
        abs_tol = p.get("abs_tol")
        rel_tol = float(p.get("rel_tol", 1e-13))
        if (abs_tol is not None and float(abs_tol) < 0) or rel_tol < 0:
            raise ConfigurationError("tolerances must be non-negative")
        return ComparisonPolicy.tolerance(None if abs_tol is None else float(abs_tol), rel_tol)
    raise ConfigurationError(f"policy mode must be auto, exact or tolerance, got {mode!r}")


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a mapping")
    unknown = set(d) - _TOP
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in d:
        raise ConfigurationError("config needs an 'experiment' key")
    g = _section(d, "graph", _GRAPH)
    s = _section(d, "signal", _SIGNAL)
    st = _section(d, "stopping", _STOPPING)
    th = _section(d, "threshold", _THRESHOLD)
    co = _section(d, "concentration", _CONCENTRATION)
    try:
        n_req, d_v, d_c = int(g.get("n", 10000)), int(g.get("d_v", 3)), int(g.get("d_c", 6))
        n = admissible_n(n_req, d_v, d_c) if min(n_req, d_v, d_c) > 0 else n_req
        if n != n_req:
            logger.warning("graph.n rounded down from %d to %d so that n*d_v is divisible by d_c", n_req, n)
        graph = GraphConfig(
            n=n,
            d_v=d_v,
            d_c=d_c,
            weight_mode=_enum(WeightMode, g.get("weight_mode", "all_ones"), "weight_mode"),
            weight_range=tuple(float(x) for x in g.get("weight_range", (0.5, 2.0))),
            forbid_four_cycles=bool(g.get("forbid_four_cycles", False)),
        )
        signal = SignalConfig(
            n=graph.n,
            alpha=float(s.get("alpha", 0.1)),
            value_mode=_enum(ValueMode, s.get("value_mode", "integer"), "value_mode"),
            int_range=int(s.get("int_range", 2**48)),
        )
        cfg = ExperimentConfig(
            experiment=_enum(ExperimentKind, d["experiment"], "experiment"),
            graph=graph,
            signal=signal,
            alg=AlgorithmKind.parse(d.get("alg", "sbb")),
            policy=_policy(_section(d, "policy", _POLICY)),
            stopping=StoppingCriteria(**{k: type(getattr(StoppingCriteria(), k))(v) for k, v in st.items()}),
            trials=int(d.get("trials", 1000)),
            seed=int(d.get("seed", 0)),
            output_dir=Path(d.get("output_dir", "out")),
            workers=int(d.get("workers", 1)),
            max_iter=None if d.get("max_iter") is None else int(d["max_iter"]),
            sweep=tuple(float(a) for a in d.get("sweep") or ()),
            threshold=ThresholdOptions(int(th.get("seeds", 3)), float(th.get("resolution", 1e-3))),
            concentration=ConcentrationOptions(
                tuple(int(n) for n in co.get("n_list", (1000, 10000, 100000))), int(co.get("ell", 2))
            ),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(copy.deepcopy(data))


# CI keeps runs short: 100 trials on n ~ 10^4. "paper" uses 1000 trials per point.
PROFILES = {
    "ci": {"trials": 100, "n": 10_000},
    "paper": {"trials": 1000},
}


def apply_profile(cfg: ExperimentConfig, profile: str | None) -> ExperimentConfig:
    if profile is None:
        return cfg
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    p = PROFILES[profile]
    out = replace(cfg, trials=p["trials"])
    if "n" in p:
        n = admissible_n(p["n"], cfg.graph.d_v, cfg.graph.d_c)
        out = replace(out, graph=replace(cfg.graph, n=n), signal=replace(cfg.signal, n=n))
    out.validate()
    return out
