"""Command line entry point: ``lunarsim run | compare | plot``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_scenario


def _seeds(text: str) -> list:
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lunarsim", description="Lunar rover autonomy simulation")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one seeded mission and write its artifacts")
    r.add_argument("--config", type=Path, default=None, help="scenario YAML")
    r.add_argument("--task", type=int, choices=(1, 2), default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", choices=("wio", "vo", "viwo"), default=None)
    r.add_argument("--duration", type=float, default=None, help="override mission duration [s]")
    r.add_argument("--out", type=Path, default=Path("runs"))

    c = sub.add_parser("compare", help="final-error table across seeds and estimator modes")
    c.add_argument("--config", type=Path, default=None)
    c.add_argument("--seeds", default="1-10", help="e.g. 1-10 or 3,5,8")
    c.add_argument("--modes", default="wio,vo,viwo")
    c.add_argument("--duration", type=float, default=None)
    c.add_argument("--out", type=Path, default=Path("runs"))

    pl = sub.add_parser("plot", help="trajectory and error plots for a run directory")
    pl.add_argument("--run", type=Path, required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            from .runner import simulate
            scn = load_scenario(args.config)
            res = simulate(scn, task=args.task, seed=args.seed, mode=args.mode, duration=args.duration,
                           out_dir=args.out)
            msg = f"wrote {res.out_dir}"
            if args.task == 1:
                msg += f"  sensed={res.sensed} scored={res.scored} final_err={res.final_error():.2f} m"
            print(msg)
        elif args.command == "compare":
            from .experiments import compare_estimators, write_table
            scn = load_scenario(args.config)
            modes = tuple(m for m in args.modes.split(",") if m)
            header, rows = compare_estimators(scn, _seeds(args.seeds), modes, duration=args.duration,
                                              out_dir=args.out)
            args.out.mkdir(parents=True, exist_ok=True)
            write_table(args.out / "compare.csv", header, rows)
            print(",".join(header))
            for row in rows:
                print(",".join(row))
        elif args.command == "plot":
            from .experiments import emit_plots
            for p in emit_plots(args.run):
                print(f"wrote {p}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
