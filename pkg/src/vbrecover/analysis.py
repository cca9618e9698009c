"""State parameters, Monte-Carlo density evolution and threshold search.

Node classification is genie-aided: it reads the true signal to split the
unverified variables into non-zero (K) and zero (Delta). The decoder itself
only ever sees the graph and the measurements.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .decoder import (
    AlgorithmKind,
    ComparisonPolicy,
    DecoderState,
    default_max_iter,
    init_state,
    run_iteration,
)
from .ensembles import (
    ConfigurationError,
    GraphConfig,
    SensingGraph,
    Signal,
    SignalConfig,
    ValueMode,
    encode,
    sample_graph,
    sample_signal,
)

logger = logging.getLogger(__name__)

__all__ = [
    "NodeClasses",
    "StateSnapshot",
    "StoppingCriteria",
    "Evolution",
    "ThresholdResult",
    "ConcentrationRecord",
    "ResourceCapExceeded",
    "NonMonotoneVerdicts",
    "node_classes",
    "classify_nodes",
    "theorem2_predicted_set",
    "average_snapshots",
    "run_evolution",
    "mc_density_evolution",
    "threshold_search",
    "oversampling_ratio",
    "concentration_experiment",
    "concentration_trial",
    "concentration_record",
    "write_snapshots_csv",
    "DE_INT_RANGE",
]

# exact-arithmetic value range used by the Monte-Carlo analysis
DE_INT_RANGE = 2**48
MAX_EDGES = 200_000_000


class ResourceCapExceeded(RuntimeError):
    pass


class NonMonotoneVerdicts(RuntimeError):
    """Seed verdicts contradict the bracket far from it; n_mc is too small."""


@dataclass
class NodeClasses:
    in_k: np.ndarray  # unverified non-zero
    in_delta: np.ndarray  # unverified zero
    in_r: np.ndarray  # verified
    chk_k: np.ndarray  # per check: neighbours in K
    chk_delta: np.ndarray  # per check: neighbours in Delta
    n1_count: np.ndarray  # per variable: neighbouring checks in N_1
    k1_hat: np.ndarray  # K_1 variables adjacent to N_{1,0}


def node_classes(
    state: DecoderState, g: SensingGraph, v: Signal | np.ndarray, validate: bool = True
) -> NodeClasses:
    values = v.values if isinstance(v, Signal) else np.asarray(v)
    if values.shape != (g.n,) or state.verified.shape != (g.n,):
        raise ConfigurationError("state, graph and signal sizes disagree")
    nz = values != 0
    in_r = state.verified
    in_k = ~in_r & nz
    in_delta = ~in_r & ~nz
    k_idx = np.flatnonzero(in_k)
    chk_k = np.bincount(g.var_chk[k_idx].ravel(), minlength=g.m)
    if validate:
        chk_delta = np.bincount(g.var_chk[in_delta].ravel(), minlength=g.m)
        if not np.array_equal(chk_k + chk_delta, state.chk_unverified_deg):
            raise ConfigurationError("state degrees disagree with its verified set")
    else:
        chk_delta = state.chk_unverified_deg - chk_k
    n1 = chk_k == 1
    n10 = n1 & (chk_delta == 0)
    # only K variables need their N_1 / N_{1,0} neighbour counts
    n1_count = np.zeros(g.n, dtype=np.int64)
    n1_count[k_idx] = np.count_nonzero(n1[g.var_chk[k_idx]], axis=1)
    k1_hat = np.zeros(g.n, dtype=bool)
    k1_hat[k_idx] = (n1_count[k_idx] == 1) & np.any(n10[g.var_chk[k_idx]], axis=1)
    return NodeClasses(in_k, in_delta, in_r, chk_k, chk_delta, n1_count, k1_hat)


@dataclass
class StateSnapshot:
    ell: int
    alpha: float
    delta: float
    r: float
    n_ij: np.ndarray
    k_i: np.ndarray
    k1_hat: float

    @classmethod
    def from_classes(cls, nc: NodeClasses, g: SensingGraph, ell: int) -> StateSnapshot:
        n, m, dv, dc = g.n, g.m, g.d_v, g.d_c
        n_ij = np.bincount(nc.chk_k * (dc + 1) + nc.chk_delta, minlength=(dc + 1) ** 2)
        k_i = np.bincount(nc.n1_count[nc.in_k], minlength=dv + 1)
        return cls(
            ell=ell,
            alpha=np.count_nonzero(nc.in_k) / n,
            delta=np.count_nonzero(nc.in_delta) / n,
            r=np.count_nonzero(nc.in_r) / n,
            n_ij=n_ij.reshape(dc + 1, dc + 1) / m,
            k_i=k_i / n,
            k1_hat=np.count_nonzero(nc.k1_hat) / n,
        )

    def identity_errors(self) -> dict[str, float]:
        """Deviation of each partition identity; all ~0 for a valid snapshot."""
        dc = self.n_ij.shape[0] - 1
        i, j = np.indices(self.n_ij.shape)
        return {
            "partition": abs(self.alpha + self.delta + self.r - 1.0),
            "n_ij_sum": abs(self.n_ij.sum() - 1.0),
            "n_ij_support": float(np.abs(self.n_ij[i + j > dc]).sum()),
            "k_i_sum": abs(self.k_i.sum() - self.alpha),
            "k1_hat": max(0.0, self.k1_hat - self.k_i[1]),
        }

    def row(self) -> list:
        return [self.ell, self.alpha, self.delta, self.r, *self.n_ij.ravel(), *self.k_i, self.k1_hat]

    @staticmethod
    def header(d_v: int, d_c: int) -> list[str]:
        nij = [f"n_{i}_{j}" for i in range(d_c + 1) for j in range(d_c + 1)]
        ki = [f"k_{i}" for i in range(d_v + 1)]
        return ["ell", "alpha", "delta", "r", *nij, *ki, "k1_hat"]


def classify_nodes(
    state: DecoderState,
    g: SensingGraph,
    v: Signal | np.ndarray,
    ell: int | None = None,
    validate: bool = True,
) -> StateSnapshot:
    ell = state.iteration if ell is None else ell
    return StateSnapshot.from_classes(node_classes(state, g, v, validate), g, ell)


def theorem2_predicted_set(nc: NodeClasses) -> np.ndarray:
    """K variables that SBB verifies in the next round 1: K_{>=2} plus K-hat_1."""
    return np.flatnonzero(nc.in_k & ((nc.n1_count >= 2) | nc.k1_hat))


def average_snapshots(runs: Sequence[Sequence[StateSnapshot]]) -> list[StateSnapshot]:
    """Iteration-wise mean; finished runs are held at their last snapshot."""
    length = max(len(r) for r in runs)
    out = []
    for ell in range(length):
        snaps = [r[min(ell, len(r) - 1)] for r in runs]
        out.append(
            StateSnapshot(
                ell=ell,
                alpha=float(np.mean([s.alpha for s in snaps])),
                delta=float(np.mean([s.delta for s in snaps])),
                r=float(np.mean([s.r for s in snaps])),
                n_ij=np.mean([s.n_ij for s in snaps], axis=0),
                k_i=np.mean([s.k_i for s in snaps], axis=0),
                k1_hat=float(np.mean([s.k1_hat for s in snaps])),
            )
        )
    return out


@dataclass(frozen=True)
class StoppingCriteria:
    success_eps: float = 1e-7
    stall_eps: float = 1e-8
    window: int = 3

    def __post_init__(self):
        if not self.success_eps > self.stall_eps > 0:
            raise ConfigurationError("need success_eps > stall_eps > 0")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1")

    def verdict(self, alphas: Sequence[float], n: int) -> str | None:
        """'success', 'failure', or None to keep iterating."""
        a = alphas[-1]
        if a <= self.success_eps:
            return "success"
        if len(alphas) > self.window:
            # a fraction cannot resolve changes below 1/n
            if alphas[-1 - self.window] - a < max(self.stall_eps, 2.0 / n):
                return "failure"
        return None


@dataclass
class Evolution:
    snapshots: list[StateSnapshot]
    verdict: str
    seed_verdicts: list[str]
    seed_traces: list[list[float]]
    alpha_stop: float

    @property
    def alphas(self) -> list[float]:
        return [s.alpha for s in self.snapshots]


def run_evolution(
    g: SensingGraph,
    v: Signal,
    alg: AlgorithmKind | str,
    stopping: StoppingCriteria | None = None,
    policy: ComparisonPolicy | None = None,
    max_iter: int | None = None,
    validate: bool = False,
) -> tuple[list[StateSnapshot], str]:
    """Decode one instance, snapshotting the state before every iteration."""
    stopping = stopping or StoppingCriteria()
    max_iter = default_max_iter(g) if max_iter is None else max_iter
    state = init_state(g, encode(g, v))
    policy = ComparisonPolicy.auto(state.measurements) if policy is None else policy.bind(state.measurements)
    snaps = [classify_nodes(state, g, v, validate=validate)]
    alphas = [snaps[0].alpha]
    verdict = stopping.verdict(alphas, g.n)
    while verdict is None:
        rep = run_iteration(state, g, alg, policy)
        snaps.append(classify_nodes(state, g, v, validate=validate))
        alphas.append(snaps[-1].alpha)
        verdict = stopping.verdict(alphas, g.n)
        if verdict is None and (not rep.progressed or state.iteration >= max_iter):
            verdict = "failure"
    return snaps, verdict


def _check_size(n: int, d_v: int) -> None:
    if n * d_v > MAX_EDGES:
        raise ResourceCapExceeded(f"{n * d_v} edges exceeds the cap of {MAX_EDGES}")


def _de_signal(n, alpha0, seed, value_mode, int_range) -> Signal:
    return sample_signal(SignalConfig(n, alpha0, value_mode, seed=seed, int_range=int_range))


def _majority(verdicts: Sequence[str]) -> str:
    wins = sum(v == "success" for v in verdicts)
    return "success" if 2 * wins > len(verdicts) else "failure"


def mc_density_evolution(
    d_v: int,
    d_c: int,
    alpha0: float,
    alg: AlgorithmKind | str,
    n_mc: int,
    seeds: Sequence[int] = (0, 1, 2),
    stopping: StoppingCriteria | None = None,
    value_mode: ValueMode = ValueMode.INTEGER,
    int_range: int = DE_INT_RANGE,
    graphs: Sequence[SensingGraph] | None = None,
) -> Evolution:
    """Estimate the state-parameter trajectory from large finite instances.

    One graph and one signal per seed; snapshots are averaged over seeds and
    the verdict is the majority over per-seed verdicts.
    """
    _check_size(n_mc, d_v)
    if not 0.0 <= alpha0 <= 1.0:
        raise ConfigurationError(f"alpha0 must lie in [0, 1], got {alpha0}")
    runs, verdicts = [], []
    for k, seed in enumerate(seeds):
        g = graphs[k] if graphs is not None else sample_graph(GraphConfig(n_mc, d_v, d_c, seed=seed))
        v = _de_signal(n_mc, alpha0, seed, value_mode, int_range)
        snaps, verdict = run_evolution(g, v, alg, stopping)
        runs.append(snaps)
        verdicts.append(verdict)
    snaps = average_snapshots(runs)
    return Evolution(
        snapshots=snaps,
        verdict=_majority(verdicts),
        seed_verdicts=verdicts,
        seed_traces=[[s.alpha for s in r] for r in runs],
        alpha_stop=float(np.mean([r[-1].alpha for r in runs])),
    )


@dataclass
class ThresholdResult:
    d_v: int
    d_c: int
    alg: str
    n_mc: int
    lo: float
    hi: float
    search_resolution: float
    probes: list[dict] = field(default_factory=list)

    @property
    def estimate(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= value <= self.hi + tol

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def threshold_search(
    d_v: int,
    d_c: int,
    alg: AlgorithmKind | str,
    n_mc: int,
    seeds: Sequence[int] = (0, 1, 2),
    resolution: float = 1e-3,
    stopping: StoppingCriteria | None = None,
    value_mode: ValueMode = ValueMode.INTEGER,
    int_range: int = DE_INT_RANGE,
    monotone_margin: float = 0.01,
) -> ThresholdResult:
    """Bisect alpha0 on [0, d_v/d_c] using majority-vote DE verdicts.

    Graphs are drawn once per seed and reused by every probe; signals for a
    seed are nested in alpha0, so each seed's verdicts are coupled.
    """
    if resolution <= 0:
        raise ConfigurationError("resolution must be positive")
    alg = AlgorithmKind.parse(alg)
    _check_size(n_mc, d_v)
    graphs = [sample_graph(GraphConfig(n_mc, d_v, d_c, seed=s)) for s in seeds]
    result = ThresholdResult(d_v, d_c, alg.value, n_mc, 0.0, d_v / d_c, resolution)

    def probe(alpha0: float) -> str:
        ev = mc_density_evolution(
            d_v, d_c, alpha0, alg, n_mc, seeds, stopping, value_mode, int_range, graphs
        )
        result.probes.append(
            {
                "alpha0": alpha0,
                "verdict": ev.verdict,
                "seed_verdicts": ev.seed_verdicts,
                "trace": ev.alphas,
            }
        )
        logger.info("%s (%d,%d) alpha0=%.5f -> %s %s", alg.value, d_v, d_c, alpha0, ev.verdict, ev.seed_verdicts)
        return ev.verdict

    if probe(result.hi) == "success":
        raise NonMonotoneVerdicts(f"decoder succeeds at the top of the range {result.hi}")
    while result.hi - result.lo > resolution:
        mid = 0.5 * (result.lo + result.hi)
        if probe(mid) == "success":
            result.lo = mid
        else:
            result.hi = mid

    for p in result.probes:
        a = p["alpha0"]
        wins = [v == "success" for v in p["seed_verdicts"]]
        if (a > result.hi + monotone_margin and any(wins)) or (
            a < result.lo - monotone_margin and not all(wins)
        ):
            raise NonMonotoneVerdicts(
                f"seed verdicts {p['seed_verdicts']} at alpha0={a} contradict bracket "
                f"[{result.lo}, {result.hi}]"
            )
    return result


def oversampling_ratio(d_v: int, d_c: int, alpha: float) -> float:
    """m/k for a (d_v, d_c) graph at density alpha, i.e. d_v / (alpha d_c)."""
    if alpha <= 0:
        raise ConfigurationError("oversampling ratio needs alpha > 0")
    return d_v / (alpha * d_c)


@dataclass
class ConcentrationRecord:
    n: int
    ell: int
    beta_samples: list[float]
    mean: float
    stddev: float


def _beta(state: DecoderState, g: SensingGraph) -> float:
    """Fraction of variable-to-check messages still carrying status 0."""
    status = state.verified[g.edge_var]
    beta_edges = 1.0 - np.count_nonzero(status) / status.size
    beta_nodes = state.n_unverified / g.n
    if abs(beta_edges - beta_nodes) > 1e-12:
        raise AssertionError(f"edge and node unverified fractions differ: {beta_edges} vs {beta_nodes}")
    return beta_edges


def concentration_trial(
    d_v: int,
    d_c: int,
    alpha0: float,
    alg: AlgorithmKind | str,
    n: int,
    ell: int,
    seed: int,
    value_mode: ValueMode = ValueMode.INTEGER,
    int_range: int = DE_INT_RANGE,
) -> float:
    """beta^(ell) for one fresh (graph, signal) pair drawn from ``seed``."""
    _check_size(n, d_v)
    g = sample_graph(GraphConfig(n, d_v, d_c, seed=seed))
    v = _de_signal(n, alpha0, seed, value_mode, int_range)
    state = init_state(g, encode(g, v))
    policy = ComparisonPolicy.auto(state.measurements)
    for _ in range(ell):
        run_iteration(state, g, alg, policy)
    return _beta(state, g)


def concentration_record(n: int, ell: int, samples: Sequence[float]) -> ConcentrationRecord:
    arr = np.asarray(samples, dtype=float)
    return ConcentrationRecord(n, ell, [float(x) for x in arr], float(arr.mean()), float(arr.std(ddof=1)))


def concentration_experiment(
    d_v: int,
    d_c: int,
    alpha0: float,
    alg: AlgorithmKind | str,
    n_list: Sequence[int],
    trials: int,
    ell: int,
    seed: int = 0,
    value_mode: ValueMode = ValueMode.INTEGER,
    int_range: int = DE_INT_RANGE,
) -> list[ConcentrationRecord]:
    """Spread of beta^(ell) over independent (graph, signal) draws, per n."""
    if trials < 30:
        raise ConfigurationError("concentration needs at least 30 trials")
    records = []
    for n in n_list:
        samples = []
        for t in range(trials):
            s = int(np.random.SeedSequence([seed, n, t]).generate_state(1, np.uint64)[0])
            samples.append(concentration_trial(d_v, d_c, alpha0, alg, n, ell, s, value_mode, int_range))
        records.append(concentration_record(n, ell, samples))
    return records


def write_snapshots_csv(snaps: Sequence[StateSnapshot], d_v: int, d_c: int, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(StateSnapshot.header(d_v, d_c))
        for s in snaps:
            w.writerow([repr(float(x)) if not isinstance(x, int) else x for x in s.row()])
