"""Command-line runner: ``run`` an experiment, sweep the failure ``bound``,
or print the ``commcost`` table for an architecture."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analytics import ARCH_PRESETS, comm_cost, failure_upper_bound
from .config import ConfigError, config_to_flat_dict, parse_config
from .protocols import RoundRecord, run_experiment

OUT_DIR_ENV = "FEDRANK_OUT_DIR"

CSV_HEADER = "round,mean_acc,std_acc,min_acc,max_acc,upload_MiB,download_MiB"

# Fixed rows of the cost table: (label, algorithm, fraction argument).
COST_TABLE_ROWS = [
    ("fedavg", "fedavg", None),
    ("fsl", "fsl", None),
    ("sfsl50", "sparse_fsl", 0.5),
    ("sfsl10", "sparse_fsl", 0.1),
    ("signsgd", "signsgd", None),
    ("topk50", "topk", 0.5),
    ("topk10", "topk", 0.1),
]


def _f(x: float) -> str:
    return f"{x:.6f}"


def _json_safe(x: float) -> float | None:
    v = float(_f(x))
    return v if math.isfinite(v) else None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def records_to_csv(records: list[RoundRecord]) -> str:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([
            str(r.round), _f(r.mean_acc), _f(r.std_acc), _f(r.min_acc),
            _f(r.max_acc), _f(r.upload_bits / (8 * 2**20)),
            _f(r.download_bits / (8 * 2**20)),
        ]))
    return "\n".join(lines) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        cfg.seed = args.seed_override
        try:
            cfg.validate()
        except ValueError as exc:
            print(f"error: seed: {exc}", file=sys.stderr)
            return 2

    out_dir = Path(args.out or os.environ.get(OUT_DIR_ENV) or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    records_path = out_dir / "records.jsonl"
    summary_path = out_dir / "summary.csv"

    manifest = {
        "config": config_to_flat_dict(cfg),
        "version": __version__,
        "workers": args.workers,
        "started": _now(),
        "finished": None,
        "outputs": {"records": records_path.name, "summary": summary_path.name},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    records = run_experiment(cfg, workers=args.workers)

    with open(records_path, "w") as f:
        for r in records:
            f.write(json.dumps({
                "round": r.round,
                "selected": r.selected,
                "mean_acc": _json_safe(r.mean_acc),
                "std_acc": _json_safe(r.std_acc),
                "min_acc": _json_safe(r.min_acc),
                "max_acc": _json_safe(r.max_acc),
                "upload_bits": r.upload_bits,
                "download_bits": r.download_bits,
                "attack_active": r.attack_active,
            }) + "\n")
    summary_path.write_text(records_to_csv(records))

    manifest["finished"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {summary_path} ({len(records)} eval points)")
    return 0


def bound_csv(n: int, p_min: float, p_max: float, p_steps: int,
              alphas: list[float]) -> str:
    lines = ["alpha,p,bound"]
    for alpha in alphas:
        for i in range(p_steps):
            p = p_min if p_steps == 1 else p_min + (p_max - p_min) * i / (p_steps - 1)
            lines.append(f"{_f(alpha)},{_f(p)},{_f(failure_upper_bound(n, p, alpha))}")
    return "\n".join(lines) + "\n"


def cmd_bound(args: argparse.Namespace) -> int:
    try:
        alphas = [float(a) for a in args.alpha.split(",") if a.strip() != ""]
    except ValueError as exc:
        print(f"error: alpha: {exc}", file=sys.stderr)
        return 2
    if not alphas:
        print("error: alpha list is empty", file=sys.stderr)
        return 2
    if args.p_steps < 1 or not (0 < args.p_min <= args.p_max < 1):
        print("error: p grid must satisfy 0 < p_min <= p_max < 1 and p_steps >= 1",
              file=sys.stderr)
        return 2
    try:
        text = bound_csv(args.n, args.p_min, args.p_max, args.p_steps, alphas)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def commcost_csv(arch_name: str, counts: list[int]) -> str:
    lines = ["arch,algorithm,upload_MiB,download_MiB"]
    for label, algorithm, frac in COST_TABLE_ROWS:
        report = comm_cost(counts, algorithm, frac)
        lines.append(f"{arch_name},{label},{_f(report.upload_mib)},{_f(report.download_mib)}")
    return "\n".join(lines) + "\n"


def cmd_commcost(args: argparse.Namespace) -> int:
    if args.preset:
        if args.preset not in ARCH_PRESETS:
            print(f"error: unknown preset {args.preset!r}; choices: "
                  f"{', '.join(sorted(ARCH_PRESETS))}", file=sys.stderr)
            return 2
        name, counts = args.preset, ARCH_PRESETS[args.preset]
    elif args.counts:
        try:
            counts = [int(v) for v in args.counts.split(",")]
        except ValueError as exc:
            print(f"error: counts: {exc}", file=sys.stderr)
            return 2
        name = "custom"
    else:
        print("error: provide --preset or --counts", file=sys.stderr)
        return 2
    try:
        text = commcost_csv(name, counts)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrank",
                                     description="Federated rank-vote learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="path to the key=value config")
    run.add_argument("--out", default=None,
                     help=f"output directory (default: ${OUT_DIR_ENV} or .)")
    run.add_argument("--workers", type=int, default=1,
                     help="parallel client workers within a round")
    run.add_argument("--seed-override", type=int, default=None)
    run.set_defaults(func=cmd_run)

    bound = sub.add_parser("bound", help="sweep the vote failure-probability bound")
    bound.add_argument("--n", type=int, required=True, help="clients per round")
    bound.add_argument("--p-min", type=float, required=True)
    bound.add_argument("--p-max", type=float, required=True)
    bound.add_argument("--p-steps", type=int, required=True)
    bound.add_argument("--alpha", required=True,
                       help="comma-separated malicious fractions")
    bound.add_argument("--out", default=None, help="CSV file (default stdout)")
    bound.set_defaults(func=cmd_bound)

    cost = sub.add_parser("commcost", help="per-round communication cost table")
    cost.add_argument("--preset", default=None,
                      help=f"reference architecture: {', '.join(sorted(ARCH_PRESETS))}")
    cost.add_argument("--counts", default=None,
                      help="comma-separated layer parameter counts")
    cost.add_argument("--out", default=None, help="CSV file (default stdout)")
    cost.set_defaults(func=cmd_commcost)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
