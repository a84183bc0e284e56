"""Exploration loop: random bootstrap, then alternating blocks of sampling
(E episodes) and training (world model, ensemble, biasing policy).

Everything is driven by seeded generators and runs single-threaded, so a run
is a pure function of its config. ``run_concurrent`` is the exception: a
trainer thread publishes learner snapshots while the sampler keeps collecting,
so its results depend on thread timing.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import baselines
from .awrpolicy import PolicyValue, awr_update, build_dataset, propose_actions, select_top
from .config import RunConfig
from .ensemble import Ensemble, change_ensemble, transitions
from .planner import Objective, PlanResult, cem_plan
from .simworld import Env, Observation
from .trajectory import Trajectory, label_trajectory, model_obs
from .worldmodel import Filter, WorldModel, make_batch

log = logging.getLogger(__name__)

JOURNAL_VERSION = 1
METRIC_COLUMNS = ("episode", "total_change", "success_flag", "cumulative_successes", "ec_term", "dis_term")


class JournalError(IOError):
    pass


# -- replay ------------------------------------------------------------------------


def encode_record(traj: Trajectory) -> bytes:
    L, N = traj.composites.shape[:2]
    header = {
        "version": JOURNAL_VERSION,
        "episode_index": int(traj.episode_index),
        "seed": int(traj.seed),
        "region": traj.region_id,
        "method": traj.method,
        "success": bool(traj.success),
        "length": int(L),
        "raster": int(N),
        "grid": int(traj.changes.shape[-1]),
        "action_dim": int(traj.actions.shape[1]),
        "info": traj.info,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = b"".join(
        [
            struct.pack("<I", len(hb)),
            hb,
            np.ascontiguousarray(traj.composites, dtype=np.uint8).tobytes(),
            np.packbits(traj.agent_masks.astype(bool).ravel()).tobytes(),
            np.ascontiguousarray(traj.actions, dtype="<f8").tobytes(),
            np.ascontiguousarray(traj.changes, dtype=np.uint8).tobytes(),
        ]
    )
    return struct.pack("<Q", len(body)) + body + struct.pack("<I", zlib.crc32(body))


def decode_record(body: bytes) -> Trajectory:
    (hl,) = struct.unpack_from("<I", body, 0)
    header = json.loads(body[4 : 4 + hl])
    if header.get("version") != JOURNAL_VERSION:
        raise JournalError(f"unsupported journal record version {header.get('version')}")
    L, N, G, A = header["length"], header["raster"], header["grid"], header["action_dim"]
    off = 4 + hl
    comp = np.frombuffer(body, np.uint8, L * N * N, off).reshape(L, N, N).copy()
    off += L * N * N
    nbytes = (L * N * N + 7) // 8
    masks = np.unpackbits(np.frombuffer(body, np.uint8, nbytes, off))[: L * N * N].reshape(L, N, N).astype(bool)
    off += nbytes
    acts = np.frombuffer(body, "<f8", L * A, off).reshape(L, A).astype(np.float64)
    off += 8 * L * A
    chg = np.frombuffer(body, np.uint8, L * G * G, off).reshape(L, G, G).copy()
    return Trajectory(
        composites=comp,
        agent_masks=masks,
        actions=acts,
        changes=chg,
        seed=header["seed"],
        region_id=header["region"],
        method=header["method"],
        episode_index=header["episode_index"],
        success=header["success"],
        info=header["info"],
    )


def read_journal(path: str | Path) -> tuple[list[Trajectory], int]:
    """Complete records and the byte offset just past the last one. A torn or
    corrupt tail (an interrupted write) is ignored."""
    data = Path(path).read_bytes()
    out, off = [], 0
    while off + 8 <= len(data):
        (n,) = struct.unpack_from("<Q", data, off)
        end = off + 8 + n + 4
        if end > len(data):
            break
        body = data[off + 8 : off + 8 + n]
        (crc,) = struct.unpack_from("<I", data, off + 8 + n)
        if zlib.crc32(body) != crc:
            break
        out.append(decode_record(body))
        off = end
    if off != len(data):
        log.warning("ignoring %d trailing journal bytes in %s", len(data) - off, path)
    return out, off


class ReplayBuffer:
    """Append-only trajectory list mirrored to a binary journal."""

    def __init__(self, path: str | Path | None = None):
        self.path = None if path is None else Path(path)
        self._items: list[Trajectory] = []
        if self.path is not None:
            if self.path.exists():
                self._items, good = read_journal(self.path)
                with self.path.open("r+b") as fh:
                    fh.truncate(good)
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.touch()

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBuffer":
        if not Path(path).exists():
            raise FileNotFoundError(path)
        return cls(path)

    def append(self, traj: Trajectory) -> None:
        if self.path is not None:
            with self.path.open("ab") as fh:
                fh.write(encode_record(traj))
                fh.flush()
                os.fsync(fh.fileno())
        self._items.append(traj)

    def snapshot(self) -> list[Trajectory]:
        """Items appended so far; safe to call while the single writer appends."""
        return self._items[: len(self._items)]

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self._items)


# -- episodes ------------------------------------------------------------------------


def episode_seed(run_seed: int, episode_index: int) -> int:
    return int(run_seed) * 10_000 + int(episode_index)


@dataclass
class EpisodeRecord:
    observations: list
    actions: list
    success: bool = False
    ec: float = 0.0
    dis: float = 0.0


class Explorer:
    """Learners and counters of one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        ex = cfg.explorer
        self.method = ex.method
        self.scene = cfg.scene.build(ex.task)
        self.env = Env(self.scene, ex.task)
        self.rng = np.random.default_rng([ex.seed, 11])
        self.counters = {
            "ensembles_constructed": 0,
            "wm_train_steps": 0,
            "ensemble_train_steps": 0,
            "awr_train_steps": 0,
            "plans": 0,
            "env_steps": 0,
        }
        self.model: WorldModel | None = None
        self.ensemble: Ensemble | None = None
        self.policy: PolicyValue | None = None
        self.objective: Objective | None = None
        if self.method == "random":
            return
        self.model = WorldModel(replace(cfg.model, seed=ex.seed))
        if self.method in ("alan", "lexa"):
            self.counters["ensembles_constructed"] += 1
            if self.method == "alan":
                self.ensemble = change_ensemble(**{**vars_of(cfg.ensemble), "seed": ex.seed})
            else:
                e = cfg.ensemble
                self.ensemble = baselines.latent_ensemble(
                    self.model, members=e.members, hidden=e.hidden, seed=ex.seed, lr=e.lr,
                    batch_size=e.batch_size, dtype=e.dtype,
                )
        if self.method in ("alan", "ec", "awr", "icm"):
            self.policy = PolicyValue(self.model.cfg.feat_dim, self.model.cfg.action_dim, replace(cfg.awr, seed=ex.seed))
        w_ec, w_dis = {"alan": (1.0, 1.0), "ec": (1.0, 0.0), "lexa": (0.0, 1.0)}.get(self.method, (0.0, 0.0))
        self.objective = Objective(w_ec=w_ec, w_dis=w_dis)

    # -- sampling ------------------------------------------------------------------
    def _execute(self, rec: EpisodeRecord, action: np.ndarray) -> Observation:
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        obs = self.env.step(a)
        self.counters["env_steps"] += 1
        rec.actions.append(a)
        rec.success = rec.success or self.env.success(self.cfg.explorer.task)
        return obs

    def random_episode(self, seed: int, episode_index: int) -> EpisodeRecord:
        L = self.cfg.explorer.episode_length
        rng = np.random.default_rng([seed, episode_index, 1])
        obs = self.env.reset(seed)
        rec = EpisodeRecord([obs], [], self.env.success(self.cfg.explorer.task))
        for _ in range(L):
            obs = self._execute(rec, rng.uniform(-1.0, 1.0, size=4))
            rec.observations.append(obs)
        return rec

    def planned_episode(self, seed: int, episode_index: int) -> EpisodeRecord:
        """Plan H actions through the model, execute them, refilter, repeat."""
        ex, pc = self.cfg.explorer, self.cfg.planner
        L = ex.episode_length
        obs = self.env.reset(seed)
        rec = EpisodeRecord([obs], [], self.env.success(ex.task))
        filt = Filter(self.model)
        state = filt.update(model_obs(obs))
        terms = baselines.lexa_terms(self.ensemble) if self.method == "lexa" else None
        t = 0
        while t < L:
            init = None
            if self.policy is not None:
                init = propose_actions(self.policy, self.model, state, pc.horizon)
            plan_cfg = replace(pc, seed=int(np.random.SeedSequence([seed, episode_index, t]).generate_state(1)[0]))
            res: PlanResult = cem_plan(
                self.model,
                self.ensemble if self.method == "alan" else None,
                state,
                plan_cfg,
                self.objective,
                init,
                terms_fn=terms,
            )
            self.counters["plans"] += 1
            rec.ec += res.ec
            rec.dis += res.dis
            for a in res.actions[: min(pc.horizon, L - t)]:
                obs = self._execute(rec, a)
                filt.act(rec.actions[-1])
                rec.observations.append(obs)
                t += 1
                if t < L:
                    state = filt.update(model_obs(obs))
        return rec

    def policy_episode(self, seed: int, episode_index: int) -> EpisodeRecord:
        """Closed-loop execution of the biasing policy with Gaussian noise."""
        ex = self.cfg.explorer
        rng = np.random.default_rng([seed, episode_index, 2])
        obs = self.env.reset(seed)
        rec = EpisodeRecord([obs], [], self.env.success(ex.task))
        filt = Filter(self.model)
        for _ in range(ex.episode_length):
            state = filt.update(model_obs(obs))
            a = self.policy.act(state.features()) + ex.action_noise * rng.standard_normal(4)
            obs = self._execute(rec, a)
            filt.act(rec.actions[-1])
            rec.observations.append(obs)
        return rec

    def episode(self, episode_index: int, bootstrap: bool) -> Trajectory:
        seed = episode_seed(self.cfg.explorer.seed, episode_index)
        if bootstrap or self.method == "random":
            rec = self.random_episode(seed, episode_index)
        elif self.method in ("awr", "icm"):
            rec = self.policy_episode(seed, episode_index)
        else:
            rec = self.planned_episode(seed, episode_index)
        return self._to_trajectory(rec, seed, episode_index)

    def _to_trajectory(self, rec: EpisodeRecord, seed: int, episode_index: int) -> Trajectory:
        L = self.cfg.explorer.episode_length
        traj = Trajectory.from_observations(
            rec.observations[:L],
            np.asarray(rec.actions[:L]),
            seed=seed,
            region_id=self.cfg.explorer.task,
            method=self.method,
            episode_index=episode_index,
            success=rec.success,
            info={"ec_term": rec.ec, "dis_term": rec.dis},
        )
        return label_trajectory(traj, self.cfg.scene.noise, seed, self.cfg.change)

    # -- training ------------------------------------------------------------------
    def train(self, replay: ReplayBuffer) -> dict:
        if self.method == "random":
            return {}
        ex = self.cfg.explorer
        stats: dict = {}
        trajs = list(replay)
        for _ in range(ex.wm_steps):
            idx = self.rng.integers(0, len(trajs), size=ex.wm_batch)
            losses = self.model.train_batch(make_batch(trajs, idx), self.rng)
            self.counters["wm_train_steps"] += 1
            stats["wm_total"] = losses.total
        if self.method == "alan":
            for _ in range(ex.ensemble_steps):
                c, a, n = transitions(trajs, self.rng, self.ensemble.cfg.batch_size)
                stats["ensemble"] = float(self.ensemble.train_step(c, a, n).mean())
                self.counters["ensemble_train_steps"] += 1
        elif self.method == "lexa" and ex.ensemble_steps > 0:
            feats, acts = self._filter_all(trajs)
            for _ in range(ex.ensemble_steps):
                f, a, n = baselines.latent_transitions(feats, acts, self.rng, self.ensemble.cfg.batch_size)
                stats["ensemble"] = float(self.ensemble.train_step(f, a, n).mean())
                self.counters["ensemble_train_steps"] += 1
        if self.policy is not None and ex.awr_steps > 0:
            data = self._awr_data(trajs)
            for _ in range(ex.awr_steps):
                stats.update(awr_update(self.policy, data))
                self.counters["awr_train_steps"] += 1
        return stats

    def _filter_all(self, trajs: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
        obs = np.stack([t.model_observations() for t in trajs])
        acts = np.stack([t.actions for t in trajs])
        lat = self.model.observe(obs, acts)
        feats = np.stack([s.features() for s in lat], axis=1).astype(np.float64)
        return feats, acts

    def _awr_data(self, trajs: list[Trajectory]):
        n_top, disc = self.cfg.awr.n_top, self.cfg.awr.discount
        if self.method == "icm":
            def reward(tr, lat):
                return baselines.icm_rewards(self.model, lat, tr.actions)

            totals = []
            for tr in trajs:
                lat = self.model.observe(tr.model_observations(), tr.actions)
                totals.append(float(reward(tr, lat).sum()))
            order = sorted(range(len(trajs)), key=lambda i: (-totals[i], -i))[:n_top]
            return build_dataset(self.model, [trajs[i] for i in order], disc, reward)
        return build_dataset(self.model, select_top(trajs, n_top), disc)

    # -- persistence -----------------------------------------------------------------
    def save_checkpoints(self, directory: Path, cycle: int) -> None:
        if self.method == "random":
            return
        keep = self.cfg.explorer.keep_checkpoints
        target = directory / (f"cycle_{cycle:03d}" if keep else "latest")
        tmp = directory / ".writing"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        self.model.save(tmp / "worldmodel.ckpt")
        if self.ensemble is not None:
            self.ensemble.save(tmp / "ensemble.ckpt")
        if self.policy is not None:
            self.policy.save(tmp / "policy.ckpt")
        (tmp / "cycle.txt").write_text(f"{cycle}\n")
        if target.exists():
            shutil.rmtree(target)
        tmp.rename(target)


def vars_of(dc) -> dict:
    return {f: getattr(dc, f) for f in dc.__dataclass_fields__}


# -- metrics -----------------------------------------------------------------------


def metrics_row(episode: int, traj: Trajectory, cumulative: int) -> dict:
    return {
        "episode": episode,
        "total_change": f"{traj.total_change:.10g}",
        "success_flag": int(traj.success),
        "cumulative_successes": cumulative,
        "ec_term": f"{traj.info.get('ec_term', 0.0):.10g}",
        "dis_term": f"{traj.info.get('dis_term', 0.0):.10g}",
    }


def write_metrics(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(path)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class RunResult:
    directory: Path
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def bootstrap(explorer: Explorer, replay: ReplayBuffer, count: int) -> None:
    if count < 1:
        raise ValueError("bootstrap count must be >= 1")
    for i in range(count):
        replay.append(explorer.episode(len(replay), bootstrap=True))


def _start(cfg: RunConfig, out: str | Path) -> tuple[RunConfig, Path, Explorer, ReplayBuffer]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.scene.file:
        # absolute so the run directory can be re-read from anywhere
        cfg = cfg.with_overrides(scene={"file": str(Path(cfg.scene.file).resolve())})
    (out / "config.json").write_text(cfg.to_json() + "\n")
    journal = out / "replay.bin"
    if journal.exists():
        journal.unlink()
    explorer = Explorer(cfg)
    replay = ReplayBuffer(journal)
    bootstrap(explorer, replay, cfg.explorer.bootstrap)
    return cfg, out, explorer, replay


def _finish(cfg: RunConfig, out: Path, replay: ReplayBuffer, rows: list[dict], cycles: int,
            counters: dict, t0: float, **extra) -> RunResult:
    ex = cfg.explorer
    summary = {
        "method": ex.method,
        "task": ex.task,
        "seed": ex.seed,
        "episodes": len(replay),
        "budget_episodes": ex.budget,
        "successes": rows[-1]["cumulative_successes"] if rows else 0,
        "bootstrap_successes": sum(int(replay[i].success) for i in range(ex.bootstrap)),
        "cycles": cycles,
        "config_digest": cfg.digest(),
        "counters": counters,
        "wall_seconds": round(time.perf_counter() - t0, 3),
        **extra,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return RunResult(out, rows, summary)


def run(cfg: RunConfig, out: str | Path) -> RunResult:
    """Bootstrap, then sample/train cycles until the episode budget is spent.

    The run directory holds ``config.json``, ``replay.bin``, ``metrics.csv``,
    ``summary.json`` and ``checkpoints/``. Metric rows cover the budget
    episodes (bootstrap episodes are not counted).
    """
    t0 = time.perf_counter()
    cfg, out, explorer, replay = _start(cfg, out)
    ex = cfg.explorer

    rows: list[dict] = []
    cumulative = 0
    cycle = 0
    done = 0
    while done < ex.budget:
        if ex.method != "random":
            stats = explorer.train(replay)
            explorer.save_checkpoints(out / "checkpoints", cycle)
            log.info("cycle %d trained: %s", cycle, stats)
        for _ in range(min(ex.episodes_per_cycle, ex.budget - done)):
            traj = explorer.episode(len(replay), bootstrap=False)
            replay.append(traj)
            done += 1
            cumulative += int(traj.success)
            rows.append(metrics_row(done, traj, cumulative))
        write_metrics(out / "metrics.csv", rows)
        cycle += 1
    if ex.budget == 0:
        write_metrics(out / "metrics.csv", rows)
    return _finish(cfg, out, replay, rows, cycle, explorer.counters, t0)


def learner_state(explorer: Explorer) -> dict[str, list[np.ndarray]]:
    nets = {"model": explorer.model, "ensemble": explorer.ensemble, "policy": explorer.policy}
    return {k: net.snapshot() for k, net in nets.items() if net is not None}


def load_learner_state(explorer: Explorer, state: dict[str, list[np.ndarray]]) -> None:
    for k, values in state.items():
        getattr(explorer, k).restore(values)


def run_concurrent(cfg: RunConfig, out: str | Path) -> RunResult:
    """Like ``run`` but training overlaps sampling.

    A trainer thread owns one set of learners and trains on replay snapshots,
    publishing a parameter snapshot after every block. The sampler owns a
    second set and, before each episode, loads the newest published snapshot
    without waiting for training. The sampler is the only replay writer. The
    first block is trained before sampling starts, as in ``run``. Not
    reproducible across machines or loads.
    """
    if cfg.explorer.method == "random":
        return run(cfg, out)  # nothing to train
    t0 = time.perf_counter()
    cfg, out, trainer, replay = _start(cfg, out)
    ex = cfg.explorer
    sampler = Explorer(cfg)
    lock = threading.Lock()
    stop = threading.Event()
    published: dict = {}
    errors: list[BaseException] = []

    def train_block(cycle: int) -> None:
        stats = trainer.train(replay.snapshot())
        trainer.save_checkpoints(out / "checkpoints", cycle)
        state = learner_state(trainer)
        with lock:
            published["cycle"], published["state"] = cycle, state
        log.info("cycle %d trained on %d episodes: %s", cycle, len(replay), stats)

    def train_loop() -> None:
        cycle = 1
        try:
            while not stop.is_set():
                train_block(cycle)
                cycle += 1
        except BaseException as e:  # surfaced in the sampler thread
            errors.append(e)

    train_block(0)
    thread = threading.Thread(target=train_loop, name="alan-trainer", daemon=True)
    thread.start()
    rows: list[dict] = []
    loaded: list[int] = []
    cumulative = 0
    try:
        for done in range(1, ex.budget + 1):
            if errors:
                break
            with lock:
                cycle, state = published["cycle"], published["state"]
            if not loaded or loaded[-1] != cycle:
                load_learner_state(sampler, state)
                loaded.append(cycle)
            traj = sampler.episode(len(replay), bootstrap=False)
            replay.append(traj)
            cumulative += int(traj.success)
            rows.append(metrics_row(done, traj, cumulative))
            if done % ex.episodes_per_cycle == 0:
                write_metrics(out / "metrics.csv", rows)
    finally:
        stop.set()
        thread.join()
    if errors:
        raise RuntimeError("trainer thread failed") from errors[0]
    write_metrics(out / "metrics.csv", rows)
    counters = dict(trainer.counters)
    for k in ("plans", "env_steps"):
        counters[k] += sampler.counters[k]
    return _finish(cfg, out, replay, rows, published["cycle"] + 1, counters, t0,
                   mode="concurrent", snapshots_loaded=loaded)
