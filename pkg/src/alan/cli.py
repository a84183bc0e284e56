"""Command line entry point: ``alan <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .config import METHODS, RunConfig, default, load
from .simworld import TASK_SCENES, ConfigError

log = logging.getLogger("alan")


def _config(args) -> RunConfig:
    return load(args.config) if args.config else default()


def cmd_explore(args) -> int:
    from .explorer import run, run_concurrent

    cfg = _config(args).for_run(args.method, args.task, args.seed)
    out = Path(args.out or f"runs/{cfg.explorer.task}_{cfg.explorer.method}_{cfg.explorer.seed}")
    res = (run_concurrent if args.concurrent else run)(cfg, out)
    s = res.summary
    print(f"{out}: {s['successes']} successes in {s['budget_episodes']} episodes")
    return 0


def cmd_achieve(args) -> int:
    from .achiever import write_results
    from .harness import achieve_run

    res = achieve_run(args.run, args.task, args.seed or 0)
    out = Path(args.out) if args.out else Path(args.run) / "achieve.csv"
    write_results(out, res.rows)
    print(f"{res.task_id}: success rate {res.success_rate:.2f} ({out})")
    return 0


def cmd_benchmark(args) -> int:
    from .harness import run_benchmark

    cfg = _config(args)
    over = {}
    if args.method:
        over["methods"] = [args.method]
    if args.task:
        over["tasks"] = [args.task]
    if args.seed is not None:
        over["seeds"] = [args.seed]
    if over:
        cfg = cfg.with_overrides(benchmark=over)
    report = run_benchmark(cfg, args.out or "benchmark")
    for (task, method), med in sorted(report.medians().items()):
        print(f"{task:8s} {method:8s} median successes {med:g}")
    for key, err in sorted(report.errors.items()):
        print(f"FAILED {key}: {err}", file=sys.stderr)
    return 1 if report.errors else 0


def cmd_inspect(args) -> int:
    p = Path(args.path)
    if p.is_dir():
        for name in ("summary.json", "config.json"):
            if (p / name).exists():
                print((p / name).read_text().rstrip())
                return 0
        raise FileNotFoundError(f"{p} is not a run directory")
    if p.suffix == ".ckpt":
        print(json.dumps(checkpoint.read_header(p), indent=1, sort_keys=True))
        return 0
    if p.suffix == ".bin":
        from .explorer import ReplayBuffer

        rb = ReplayBuffer.load(p)
        for tr in rb:
            print(f"{tr.episode_index:4d} seed={tr.seed} method={tr.method} total_change={tr.total_change:.4f} success={int(tr.success)}")
        return 0
    raise ValueError(f"do not know how to inspect {p}")


def cmd_plot(args) -> int:
    from .harness import plot_run

    print(plot_run(args.run, args.out))
    return 0


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alan", description="Change-driven exploration in a 2D kitchen simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory or file")
        if run_flags:
            p.add_argument("--method", choices=METHODS)
            p.add_argument("--task", help=f"object id to manipulate (built-in: {', '.join(sorted(TASK_SCENES))})")

    p = sub.add_parser("explore", help="run one exploration experiment")
    common(p)
    p.add_argument("--concurrent", action="store_true",
                   help="train in a background thread while sampling (not reproducible)")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("achieve", help="goal reaching from a run's exploration data")
    p.add_argument("run", help="run directory")
    common(p)
    p.set_defaults(func=cmd_achieve)

    p = sub.add_parser("benchmark", help="run the configured method x task x seed grid")
    common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("inspect", help="describe a run directory, checkpoint or replay journal")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("plot", help="cumulative-success curve of one run")
    p.add_argument("run", help="run directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
