"""Command line entry point: ``feederopt sweep --config cfg.yaml --out results/``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import yaml

from .config import StudyConfig
from .experiments import CLEAN_STATUSES, compare_placements, run_sweep, write_comparison_csv

log = logging.getLogger("feederopt")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feederopt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="run a scenario sweep and write results.csv")
    sw.add_argument("--config", type=Path, help="YAML study config (defaults apply when omitted)")
    sw.add_argument("--out", type=Path, required=True, help="output directory")
    sw.add_argument("--smax", type=float, nargs="+", help="inverter sizing grid")
    sw.add_argument("--penetration", type=float, nargs="+", help="PV penetration grid")
    sw.add_argument("--placement", nargs="+", choices=["front", "rear"])
    sw.add_argument("--controller", nargs="+", choices=["global", "local", "no_control", "passive"])
    sw.add_argument("--seed", type=int)
    sw.add_argument("--workers", type=int)
    sw.add_argument("--detail", action="store_true", help="write per-scenario state/schedule CSVs")

    sub.add_parser("default-config", help="print the default config as YAML")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "default-config":
        yaml.safe_dump(StudyConfig().to_dict(), sys.stdout, sort_keys=False)
        return 0

    config = StudyConfig.load(args.config) if args.config else StudyConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = run_sweep(
        config,
        args.smax,
        args.penetration,
        args.placement,
        args.controller,
        workers=args.workers,
        out_csv=out / "results.csv",
        detail_dir=out / "detail" if args.detail else None,
    )
    log.info("%d scenarios in %.1f s", len(results), time.perf_counter() - t0)
    placements = {r.spec.placement for r in results}
    if len(placements) == 2:
        write_comparison_csv(compare_placements(results), out / "comparison.csv")
    bad = [r for r in results if r.status not in CLEAN_STATUSES]
    for r in bad:
        print(f"unsolved: {r.row()}", file=sys.stderr)
    return 0 if not bad else 1


if __name__ == "__main__":
    sys.exit(main())
