"""Multi-run experiments: run grid, cumulative-success curves and
success-rate tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import achiever
from .config import RunConfig, from_json
from .explorer import ReplayBuffer, read_metrics, run
from .simworld import Env
from .worldmodel import WorldModel

log = logging.getLogger(__name__)

# Goal-reaching success rates reported for the real-robot setup (tasks mapped
# onto the simulated analogues). Context only; never compared against.
HARDWARE_REFERENCE = {
    "lexa": {"door": 0.20, "knife": 0.00, "fridge": 0.00, "shelf": 0.00},
    "ec": {"door": 0.70, "knife": 0.00, "fridge": 0.50, "shelf": 0.90},
    "awr": {"door": 0.50, "knife": 0.00},
    "alan": {"door": 1.00, "knife": 0.60, "fridge": 0.70, "shelf": 0.80},
}


def run_dir(root: Path, task: str, method: str, seed: int) -> Path:
    return Path(root) / "runs" / task / method / f"seed{seed}"


def load_run_config(directory: str | Path) -> RunConfig:
    return from_json((Path(directory) / "config.json").read_text())


def cumulative_curve(rows: list[dict]) -> np.ndarray:
    """Recomputed from the success flags, not from the stored cumulative column."""
    return np.cumsum([int(r["success_flag"]) for r in rows]).astype(int)


def run_complete(directory: Path, cfg: RunConfig) -> bool:
    summary = directory / "summary.json"
    if not summary.exists():
        return False
    try:
        return json.loads(summary.read_text()).get("config_digest") == cfg.digest()
    except json.JSONDecodeError:
        return False


# -- plotting -------------------------------------------------------------------------


def _svg(fig, path: Path, comment: str) -> None:
    import matplotlib

    with matplotlib.rc_context({"svg.hashsalt": "alan", "svg.fonttype": "path"}):
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    text = buf.getvalue()
    head, sep, rest = text.partition("?>")
    safe = comment.replace("--", "- -")
    text = f"{head}{sep}\n<!-- {safe} -->{rest}" if sep else f"<!-- {safe} -->\n{text}"
    path.write_text(text)


def plot_curves(curves: dict[str, list[np.ndarray]], path: Path, title: str, comment: str) -> None:
    """One line per method: median across seeds, thin lines per seed."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (method, runs) in enumerate(sorted(curves.items())):
        if not runs:
            continue
        c = colors[i % len(colors)]
        n = min(len(r) for r in runs)
        x = np.arange(1, n + 1)
        for r in runs:
            ax.plot(x, r[:n], color=c, alpha=0.25, linewidth=0.8)
        ax.plot(x, np.median([r[:n] for r in runs], axis=0), color=c, linewidth=2, label=method)
    ax.set_xlabel("exploration episodes")
    ax.set_ylabel("cumulative successes")
    ax.set_title(title)
    ax.legend(loc="upper left")
    fig.tight_layout()
    _svg(fig, path, comment)
    plt.close(fig)


def plot_run(directory: str | Path, out: str | Path | None = None) -> Path:
    directory = Path(directory)
    cfg = load_run_config(directory)
    rows = read_metrics(directory / "metrics.csv")
    target = Path(out) if out is not None else directory / "curve.svg"
    ex = cfg.explorer
    plot_curves(
        {ex.method: [cumulative_curve(rows)]},
        target,
        f"{ex.task}: {ex.method} seed {ex.seed}",
        f"config={cfg.digest()} seeds={ex.seed}",
    )
    return target


# -- goal reaching ----------------------------------------------------------------------


def latest_model(directory: Path) -> WorldModel | None:
    ckpts = directory / "checkpoints"
    if not ckpts.exists():
        return None
    candidates = sorted(p for p in ckpts.iterdir() if (p / "worldmodel.ckpt").exists())
    return WorldModel.load(candidates[-1] / "worldmodel.ckpt") if candidates else None


def achieve_run(directory: str | Path, task: str | None = None, seed: int = 0) -> achiever.AchieveResult:
    directory = Path(directory)
    cfg = load_run_config(directory)
    task = task or cfg.explorer.task
    scene = cfg.scene.build(task)
    env = Env(scene, task)
    replay = ReplayBuffer.load(directory / "replay.bin")
    acfg = achiever.AchieveConfig(**{**vars(cfg.achiever), "seed": seed})
    return achiever.achieve(env, replay, latest_model(directory), achiever.make_goal(scene, task), acfg)


# -- benchmark ---------------------------------------------------------------------------


@dataclass
class Report:
    root: Path
    runs: dict = field(default_factory=dict)  # (task, method, seed) -> summary
    errors: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)
    success_rates: dict = field(default_factory=dict)  # (method, task) -> rate

    def medians(self) -> dict:
        out: dict = {}
        for (task, method, _), s in sorted(self.runs.items()):
            out.setdefault((task, method), []).append(s["successes"])
        return {k: float(np.median(v)) for k, v in out.items()}


def _run_one(rcfg: RunConfig, d: Path, resume: bool) -> None:
    if not (resume and run_complete(d, rcfg)):
        log.info("running %s/%s/seed%d", rcfg.explorer.task, rcfg.explorer.method, rcfg.explorer.seed)
        run(rcfg, d)


def run_benchmark(cfg: RunConfig, out: str | Path, resume: bool = True) -> Report:
    """Every (task, method, seed) of ``cfg.benchmark``; completed runs with a
    matching config are reused, failures are recorded and skipped. With
    ``workers > 1`` runs execute in separate processes; aggregation happens
    afterwards from the run directories."""
    b = cfg.benchmark
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    report = Report(root)
    jobs = [(task, method, seed) for task in b.tasks for method in b.methods for seed in b.seeds]
    failures: dict = {}
    if b.workers > 1:
        with ProcessPoolExecutor(max_workers=b.workers) as pool:
            futures = {
                key: pool.submit(_run_one, cfg.for_run(key[1], key[0], key[2]), run_dir(root, *key), resume)
                for key in jobs
            }
            for key, fut in futures.items():
                if fut.exception() is not None:
                    failures[key] = fut.exception()
    for key in jobs:
        task, method, seed = key
        d = run_dir(root, task, method, seed)
        try:
            if key in failures:
                raise failures[key]
            _run_one(cfg.for_run(method, task, seed), d, resume)
            report.runs[key] = json.loads((d / "summary.json").read_text())
            if b.achieve:
                res = achieve_run(d, task)
                achiever.write_results(d / "achieve.csv", res.rows)
        except Exception as exc:  # keep going; partial results stay on disk
            log.error("run %s/%s/seed%d failed: %s", task, method, seed, exc)
            report.errors[key] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    write_report(report, cfg)
    return report


def write_report(report: Report, cfg: RunConfig) -> None:
    """Curves per task, the successes table and the goal-reaching table.
    Everything is recomputed from the run directories."""
    b = cfg.benchmark
    root = report.root
    lines = []
    for task in b.tasks:
        curves: dict = {}
        for method in b.methods:
            for seed in b.seeds:
                metrics = run_dir(root, task, method, seed) / "metrics.csv"
                if metrics.exists():
                    curve = cumulative_curve(read_metrics(metrics))
                    curves.setdefault(method, []).append(curve)
                    lines.append((task, method, seed, int(curve[-1]) if len(curve) else 0))
        if curves:
            path = root / f"curves_{task}.svg"
            seeds = ",".join(str(s) for s in b.seeds)
            plot_curves(curves, path, f"coincidental success: {task}", f"config={cfg.digest()} seeds={seeds}")
            report.plots.append(path)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "method", "seed", "successes"])
    w.writerows(lines)
    (root / "coincidental_successes.csv").write_text(buf.getvalue())

    rates: dict = {}
    for task in b.tasks:
        for method in b.methods:
            vals = []
            for seed in b.seeds:
                p = run_dir(root, task, method, seed) / "achieve.csv"
                if p.exists():
                    with p.open(newline="") as fh:
                        r = [int(x["success"]) for x in csv.DictReader(fh)]
                    vals.append(sum(r) / len(r) if r else 0.0)
            if vals:
                rates[(method, task)] = float(np.mean(vals))
    report.success_rates = rates
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *b.tasks])
    for method in b.methods:
        w.writerow([method, *(f"{rates[(method, t)]:.2f}" if (method, t) in rates else "" for t in b.tasks)])
    (root / "success_rates.csv").write_text(buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *b.tasks])
    for method in b.methods:
        ref = HARDWARE_REFERENCE.get(method, {})
        w.writerow([method, *(f"{ref[t]:.2f}" if t in ref else "" for t in b.tasks)])
    (root / "hardware_reference_success_rates.csv").write_text(buf.getvalue())
