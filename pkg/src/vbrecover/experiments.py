"""Running configured experiments and writing their artifacts.

Every trial has a pre-assigned result slot indexed by its trial id and all
shared inputs (config, graph) are immutable, so a worker pool produces the
same files as a sequential run.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .analysis import (
    ThresholdResult,
    average_snapshots,
    concentration_record,
    concentration_trial,
    run_evolution,
    threshold_search,
    write_snapshots_csv,
)
from .config import ExperimentConfig, ExperimentKind, derive_seed
from .decoder import AlgorithmKind, ComparisonPolicy, recover
from .ensembles import SensingGraph, ValueMode, encode, sample_graph, sample_signal

logger = logging.getLogger(__name__)

__all__ = [
    "run_experiment",
    "run_trials",
    "table1_reproduction",
    "TABLE1_PAIRS",
    "MANIFEST",
]

MANIFEST = "manifest.json"
TABLE1_PAIRS = ((3, 6), (4, 8), (5, 10), (6, 12), (7, 14))

# worker-side copies of the shared inputs, set once per process
_shared: dict = {}


def _init_worker(cfg: ExperimentConfig, g: SensingGraph | None) -> None:
    _shared["cfg"] = cfg
    _shared["g"] = g


def _call(fn: Callable, task):
    return fn(_shared["cfg"], _shared["g"], task)


def run_trials(
    fn: Callable, cfg: ExperimentConfig, g: SensingGraph | None, tasks: Sequence, workers: int = 1
) -> list:
    """``[fn(cfg, g, task) for task in tasks]``, optionally across processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(cfg, g, t) for t in tasks]
    slots: list = [None] * len(tasks)
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg, g)) as ex:
        for i, res in enumerate(ex.map(partial(_call, fn), tasks, chunksize=chunk)):
            slots[i] = res
    return slots


def _recover_trial(cfg: ExperimentConfig, g: SensingGraph, trial: int) -> dict:
    scfg = cfg.signal_config(trial)
    v = sample_signal(scfg)
    c = encode(g, v)
    res = recover(g, c, cfg.alg, cfg.policy, cfg.max_iter)
    # judge recovered values with the same comparison the decoder used
    pol = ComparisonPolicy.auto(c.values) if cfg.policy is None else cfg.policy.bind(c.values)
    wrong = res.verified & ~pol.equal(res.values, v.values)
    return {
        "trial": trial,
        "signal_seed": scfg.seed,
        "nonzeros": int(v.support.size),
        "success": res.success,
        "iterations": res.iterations,
        "verified": int(res.verified.sum()),
        "false_verifications": int(wrong.sum()),
        "reconstructed": bool(res.success and not wrong.any()),
    }


def _evolution_trial(cfg: ExperimentConfig, g: SensingGraph, task: tuple[float, int]):
    alpha0, trial = task
    v = sample_signal(cfg.signal_config(trial, alpha0))
    snaps, verdict = run_evolution(g, v, cfg.alg, cfg.stopping, cfg.policy, cfg.max_iter)
    return snaps, verdict


def _concentration_task(cfg: ExperimentConfig, _g, task: tuple[int, int]) -> float:
    n, trial = task
    seed = derive_seed(cfg.seed, "concentration", n, trial)
    return concentration_trial(
        cfg.graph.d_v,
        cfg.graph.d_c,
        cfg.signal.alpha,
        cfg.alg,
        n,
        cfg.concentration.ell,
        seed,
        cfg.signal.value_mode,
        cfg.signal.int_range,
    )


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _alpha_tag(a: float) -> str:
    return f"{a:.6f}".rstrip("0").rstrip(".")


def _run_recover(cfg, out: Path) -> dict:
    g = sample_graph(cfg.graph_config())
    results = run_trials(_recover_trial, cfg, g, list(range(cfg.trials)), cfg.workers)
    with (out / "trials.jsonl").open("w") as fh:
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    summary = {
        "trials": cfg.trials,
        "success_rate": sum(r["success"] for r in results) / cfg.trials,
        "false_verifications": sum(r["false_verifications"] for r in results),
        "mean_iterations": float(np.mean([r["iterations"] for r in results])),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _run_threshold(cfg, out: Path) -> dict:
    seeds = [derive_seed(cfg.seed, "threshold", k) for k in range(cfg.threshold.seeds)]
    res = threshold_search(
        cfg.graph.d_v,
        cfg.graph.d_c,
        cfg.alg,
        cfg.graph.n,
        seeds,
        cfg.threshold.resolution,
        cfg.stopping,
        cfg.signal.value_mode,
        cfg.signal.int_range,
    )
    (out / "threshold.json").write_text(res.to_json() + "\n")
    return {"lo": res.lo, "hi": res.hi}


def _evolutions(cfg) -> dict[float, list]:
    g = sample_graph(cfg.graph_config())
    tasks = [(a, t) for a in cfg.alphas for t in range(cfg.trials)]
    results = run_trials(_evolution_trial, cfg, g, tasks, cfg.workers)
    by_alpha: dict[float, list] = {a: [] for a in cfg.alphas}
    for (a, _t), r in zip(tasks, results):
        by_alpha[a].append(r)
    return by_alpha


def _run_evolution(cfg, out: Path) -> dict:
    summary = {}
    for a, runs in _evolutions(cfg).items():
        snaps = average_snapshots([s for s, _ in runs])
        write_snapshots_csv(snaps, cfg.graph.d_v, cfg.graph.d_c, out / f"evolution_alpha0_{_alpha_tag(a)}.csv")
        summary[_alpha_tag(a)] = {
            "successes": sum(v == "success" for _, v in runs),
            "trials": len(runs),
            "final_alpha": snaps[-1].alpha,
            "iterations": len(snaps) - 1,
        }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _run_stopmap(cfg, out: Path) -> dict:
    # alpha0 is the nominal density; alpha0_sample is what the signals realised,
    # and only the latter bounds alpha_stop exactly
    rows = []
    for a, runs in _evolutions(cfg).items():
        start = float(np.mean([s[0].alpha for s, _ in runs]))
        stop = float(np.mean([s[-1].alpha for s, _ in runs]))
        wins = sum(v == "success" for _, v in runs)
        rows.append((a, start, stop, wins / len(runs), len(runs)))
    _write_csv(
        out / "stopmap.csv",
        ["alpha0", "alpha0_sample", "alpha_stop", "success_fraction", "trials"],
        [[_fmt(a), _fmt(s0), _fmt(s), _fmt(f), k] for a, s0, s, f, k in rows],
    )
    return {_alpha_tag(a): s for a, _, s, _, _ in rows}


def _run_concentration(cfg, out: Path) -> dict:
    ns = cfg.concentration.n_list
    tasks = [(n, t) for n in ns for t in range(cfg.trials)]
    betas = run_trials(_concentration_task, cfg, None, tasks, cfg.workers)
    records = []
    for k, n in enumerate(ns):
        samples = betas[k * cfg.trials : (k + 1) * cfg.trials]
        records.append(concentration_record(n, cfg.concentration.ell, samples))
    _write_csv(
        out / "concentration.csv",
        ["n", "ell", "trials", "mean", "stddev"],
        [[r.n, r.ell, len(r.beta_samples), _fmt(r.mean), _fmt(r.stddev)] for r in records],
    )
    _write_csv(
        out / "concentration_samples.csv",
        ["n", "trial", "beta"],
        [[r.n, t, _fmt(b)] for r in records for t, b in enumerate(r.beta_samples)],
    )
    return {str(r.n): r.stddev for r in records}


_RUNNERS = {
    ExperimentKind.RECOVER: _run_recover,
    ExperimentKind.THRESHOLD: _run_threshold,
    ExperimentKind.EVOLUTION: _run_evolution,
    ExperimentKind.STOPMAP: _run_stopmap,
    ExperimentKind.CONCENTRATION: _run_concentration,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, config: dict, files: Sequence[Path]) -> None:
    """The only non-deterministic output is the ``created`` line."""
    created = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    body = {
        "created": created,
        "version": __version__,
        "config": config,
        "files": {p.name: _sha256(p) for p in sorted(files)},
    }
    (out / MANIFEST).write_text(json.dumps(body, indent=2) + "\n")


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run ``cfg`` and write its artifacts to ``cfg.output_dir``; returns a summary."""
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = _RUNNERS[cfg.experiment](cfg, out)
    files = [p for p in out.iterdir() if p.is_file() and p.name != MANIFEST]
    # where and how wide the run was does not change its results
    record = {k: v for k, v in cfg.to_dict().items() if k not in ("output_dir", "workers")}
    write_manifest(out, record, files)
    return summary


def table1_reproduction(
    out_dir: str | Path | None = None,
    n_mc: int = 10**6,
    seeds: Sequence[int] = (0, 1, 2),
    resolution: float = 1e-3,
    pairs: Sequence[tuple[int, int]] = TABLE1_PAIRS,
    algs: Sequence[AlgorithmKind | str] = (AlgorithmKind.SBB, AlgorithmKind.LM),
    value_mode: ValueMode = ValueMode.INTEGER,
) -> list[ThresholdResult]:
    """Threshold brackets for every (alg, d_v, d_c); optionally written as CSV."""
    results = []
    for alg in algs:
        for d_v, d_c in pairs:
            res = threshold_search(d_v, d_c, alg, n_mc, seeds, resolution, value_mode=value_mode)
            logger.info("%s (%d,%d): [%.5f, %.5f]", res.alg, d_v, d_c, res.lo, res.hi)
            results.append(res)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "table1.csv",
            ["d_v", "d_c", "alg", "threshold_lo", "threshold_hi"],
            [[r.d_v, r.d_c, r.alg, _fmt(r.lo), _fmt(r.hi)] for r in results],
        )
        (out / "table1_probes.json").write_text(json.dumps([asdict(r) for r in results], indent=1) + "\n")
    return results
