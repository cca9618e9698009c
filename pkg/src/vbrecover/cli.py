"""``vbrecover`` command line.

Exit status: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import NonMonotoneVerdicts, threshold_search
from .config import apply_profile, load_config
from .decoder import AlgorithmKind, FalseVerificationConflict
from .ensembles import ConfigurationError, admissible_n
from .experiments import TABLE1_PAIRS, run_experiment, table1_reproduction

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("vbrecover")


def _pair(text: str) -> tuple[int, int]:
    try:
        dv, dc = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected d_v,d_c, got {text!r}") from None
    return dv, dc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vbrecover", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a YAML config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--trials", type=int, help="override the number of trials")
    run.add_argument("--out", type=Path, help="override the output directory")
    run.add_argument("--profile", choices=["ci", "paper"])
    run.add_argument("--workers", type=int, help="worker processes")

    t1 = sub.add_parser("table1", help="threshold brackets for the regular ensembles at rate 1/2")
    t1.add_argument("--n", type=int, default=10**6, help="Monte-Carlo graph size")
    t1.add_argument("--seeds", type=int, default=3)
    t1.add_argument("--resolution", type=float, default=1e-3)
    t1.add_argument("--alg", choices=["lm", "sbb", "both"], default="both")
    t1.add_argument("--pairs", type=_pair, nargs="+", default=list(TABLE1_PAIRS), metavar="DV,DC")
    t1.add_argument("--out", type=Path, default=Path("out/table1"))

    th = sub.add_parser("threshold", help="threshold bracket for one ensemble and algorithm")
    th.add_argument("--dv", type=int, required=True)
    th.add_argument("--dc", type=int, required=True)
    th.add_argument("--alg", choices=["lm", "sbb"], required=True)
    th.add_argument("--n", type=int, default=10**6)
    th.add_argument("--seeds", type=int, default=3)
    th.add_argument("--resolution", type=float, default=1e-3)
    th.add_argument("--out", type=Path, help="write the result JSON here")
    return ap


def _cmd_run(args) -> None:
    cfg = apply_profile(load_config(args.config), args.profile)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    cfg = replace(cfg, **changes)
    cfg.validate()
    summary = run_experiment(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))


def _cmd_table1(args) -> None:
    algs = ["sbb", "lm"] if args.alg == "both" else [args.alg]
    results = table1_reproduction(
        args.out, args.n, tuple(range(args.seeds)), args.resolution, args.pairs, algs
    )
    print("alg  d_v d_c  threshold_lo threshold_hi")
    for r in results:
        print(f"{r.alg:4s} {r.d_v:3d} {r.d_c:3d}  {r.lo:.5f}      {r.hi:.5f}")


def _cmd_threshold(args) -> None:
    n = admissible_n(args.n, args.dv, args.dc)
    if n != args.n:
        log.warning("n rounded down to %d so that n*d_v is divisible by d_c", n)
    res = threshold_search(
        args.dv, args.dc, AlgorithmKind.parse(args.alg), n, tuple(range(args.seeds)), args.resolution
    )
    text = res.to_json()
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
    print(json.dumps({"alg": res.alg, "d_v": res.d_v, "d_c": res.d_c, "n": n, "lo": res.lo, "hi": res.hi}))


_COMMANDS = {"run": _cmd_run, "table1": _cmd_table1, "threshold": _cmd_threshold}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FalseVerificationConflict, NonMonotoneVerdicts, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
