"""Command line: ``tripchar {characterize,learn,optimize,shmoo,compare}``.

Exit codes: 0 success, 2 config/usage error, 3 run-level failure
(nothing converged, validation error above target, budget too small).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .dut_sim import ModelError
from .learner import WeightFileError, load_weights
from .optimizer import BudgetTooSmallError
from .pipeline import (
    Output,
    RunFailure,
    UsageError,
    characterize,
    compare,
    dumps,
    learn,
    load_tests,
    model_for,
    optimize_run,
)
from .shmoo import Axis, ShmooError, build_shmoo, render_shmoo
from .trip_search import STRATEGIES

EXIT_OK, EXIT_USAGE, EXIT_RUN = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="run-config JSON file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="root seed (overrides root_seed)")
    p.add_argument("--jobs", type=int, default=1, help="worker cap; 1 guarantees reproducible output")
    p.add_argument("--out", help="output directory (default: paths.reports from the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override, repeatable")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="tripchar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize", parents=[common], help="multiple-trip-point campaign over random tests")
    p.add_argument("--n-tests", type=int, default=100)
    p.add_argument("--strategy", choices=STRATEGIES)

    p = sub.add_parser("learn", parents=[common], help="train the NN voting ensemble and write the weight file")
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--weights", help="weight file path (default: <out>/paths.weights)")

    p = sub.add_parser("optimize", parents=[common], help="GA worst-case search, NN-seeded when --weights is given")
    p.add_argument("--weights", help="weight file from `learn`")
    p.add_argument("--budget", type=int, default=2000, help="number of trip-point searches")

    p = sub.add_parser("shmoo", parents=[common], help="overlay many tests in one shmoo plot")
    p.add_argument("--tests", required=True, help="archive:PATH | campaign:PATH | random:N")
    p.add_argument("--top", type=int, help="use only the first N tests of the source")
    p.add_argument("--x", help="swept parameter axis name:lo:hi:step")
    p.add_argument("--y", help="condition axis name:lo:hi:step")
    p.add_argument("--svg", action="store_true", help="also write an SVG heat map")
    p.add_argument("--per-test", action="store_true", help="also write one CSV grid per test")

    p = sub.add_parser("compare", parents=[common], help="deterministic vs random vs NNGA at equal budget")
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive root seeds; medians are reported")
    return parser


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _emit(out_dir: Path, stem: str, out: Output, extra_names: dict[str, str] | None = None) -> None:
    _write(out_dir, f"{stem}.json", dumps(out.payload))
    for name, text in out.files.items():
        target = (extra_names or {}).get(name, name)
        if Path(target).is_absolute():
            Path(target).parent.mkdir(parents=True, exist_ok=True)
            Path(target).write_text(text)
        else:
            _write(out_dir, target, text)
    print(out.summary)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed)
        out_dir = Path(args.out or cfg.reports_dir)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")

        if args.command == "characterize":
            _emit(out_dir, "characterize", characterize(cfg, args.n_tests, args.jobs, args.strategy))

        elif args.command == "learn":
            weights = args.weights or cfg.weights_path
            try:
                out = learn(cfg, args.n_train, args.jobs)
            except RunFailure as exc:
                _emit(out_dir, "learn", exc.output, {"weights": str(Path(weights).resolve()) if args.weights else weights})
                print(f"warning: {exc}; weight file written but flagged", file=sys.stderr)
                return EXIT_RUN
            _emit(out_dir, "learn", out, {"weights": str(Path(weights).resolve()) if args.weights else weights})

        elif args.command == "optimize":
            ens = load_weights(args.weights) if args.weights else None
            _emit(out_dir, "archive", optimize_run(cfg, ens, args.budget))

        elif args.command == "shmoo":
            x = Axis.parse(args.x or cfg.shmoo_x)
            y = Axis.parse(args.y or cfg.shmoo_y)
            tests = load_tests(args.tests, cfg, args.top)
            model = model_for(cfg)
            grid = build_shmoo(model, tests, x, y)
            _write(out_dir, "shmoo.csv", render_shmoo(grid, "csv"))
            text = render_shmoo(grid, "ascii")
            _write(out_dir, "shmoo.txt", text)
            if args.svg:
                _write(out_dir, "shmoo.svg", render_shmoo(grid, "svg"))
            if args.per_test:
                for t in tests:
                    _write(out_dir / "per_test", f"{t.id}.csv", render_shmoo(build_shmoo(model, [t], x, y), "csv"))
            print(text, end="")

        elif args.command == "compare":
            _emit(out_dir, "compare", compare(cfg, args.budget, args.seeds, args.jobs))

    except (ConfigError, UsageError, ShmooError, WeightFileError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunFailure, BudgetTooSmallError) as exc:
        if isinstance(exc, RunFailure) and exc.output is not None:
            _emit(out_dir, args.command, exc.output)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
