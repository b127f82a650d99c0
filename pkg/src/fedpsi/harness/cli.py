"""``fedpsi`` command line.

Exit codes: 0 success (infeasible cells included), 1 configuration error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from ..errors import FedPsiError
from . import commands
from .config import ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedpsi", description="Label-skew federated learning experiment harness.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per cell/job")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="experiment JSON config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")

    common(sub.add_parser("partition", help="write partition files and a feasibility manifest"))
    common(sub.add_parser("sweep", help="WPSI/HD/JSD/EMD per grid cell into sweep.csv"))
    common(sub.add_parser("train", help="train every method on every cell; write summary.csv"))
    cmp = sub.add_parser("compare", help="aggregate summary.csv files into comparison.json")
    common(cmp, config_required=False)
    cmp.add_argument("summaries", nargs="*", help="summary.csv files (default: <output_dir>/summary.csv)")
    return parser


def _config(args):
    cfg = load_config(args.config)
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    return dataclasses.replace(cfg, **changes) if changes else cfg


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "compare":
            paths = list(args.summaries)
            out = args.out
            if args.config is not None:
                cfg = _config(args)
                paths = paths or [str(Path(cfg.output_dir) / "summary.csv")]
                out = out or cfg.output_dir
            report = commands.cmd_compare(paths, out or ".")
            print(f"{len(report['cells'])} shared cell(s) compared")
            return EXIT_OK
        cfg = _config(args)
        if args.command == "partition":
            manifest = commands.cmd_partition(cfg)
            bad = sum(c["status"] != "ok" for c in manifest["cells"])
            print(f"{len(manifest['cells'])} cell(s), {bad} infeasible")
        elif args.command == "sweep":
            rows = commands.cmd_sweep(cfg)
            print(f"{len(rows)} sweep row(s) written")
        else:
            manifest = commands.cmd_train(cfg, jobs=args.jobs)
            statuses = [r["status"] for r in manifest["runs"]]
            print(f"{len(statuses)} run(s): " + ", ".join(f"{s}={statuses.count(s)}" for s in sorted(set(statuses))))
    except ConfigError as exc:
        print(f"fedpsi: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        where = exc.filename if exc.filename is not None else ""
        print(f"fedpsi: I/O error: {where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FedPsiError, ValueError) as exc:
        print(f"fedpsi: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
