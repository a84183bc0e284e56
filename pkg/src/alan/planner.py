"""Cross-entropy-method planning through the world model.

Candidates are scored with common random numbers: every action sequence in
one plan is imagined with the same latent noise draw, so a candidate's score
is a deterministic function of its actions. That makes elite carry-over
valid (the best elite never gets worse between iterations) and lets an
exhaustive search score exactly the same objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .ensemble import Ensemble, disagreement_of
from .worldmodel import LatentState, WorldModel

STD_FLOOR = 0.05


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class CEMConfig:
    horizon: int = 10
    population: int = 64
    elite_frac: float = 0.1
    iterations: int = 4
    init_std: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.population * self.elite_frac < 2:
            raise ValueError("population * elite_frac must be >= 2")

    @property
    def n_elite(self) -> int:
        return max(2, int(round(self.population * self.elite_frac)))


class RunningStat:
    """Welford mean/variance over all values seen so far."""

    def __init__(self) -> None:
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> None:
        for v in np.ravel(values):
            if not math.isfinite(v):
                continue
            self.n += 1
            d = v - self.mean
            self.mean += d / self.n
            self.m2 += d * (v - self.mean)

    @property
    def std(self) -> float:
        if self.n < 2:
            return 1.0
        return math.sqrt(self.m2 / self.n)

    def as_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "m2": self.m2}


@dataclass
class Objective:
    """Weighted sum of the predicted-change term and the change-space
    disagreement term, each scaled by its running std."""

    w_ec: float = 1.0
    w_dis: float = 1.0
    ec_stat: RunningStat = field(default_factory=RunningStat)
    dis_stat: RunningStat = field(default_factory=RunningStat)
    frozen: bool = False

    def __post_init__(self) -> None:
        if self.w_ec < 0 or self.w_dis < 0:
            raise ValueError("objective weights must be >= 0")

    def scales(self) -> tuple[float, float]:
        return max(self.ec_stat.std, 1e-6), max(self.dis_stat.std, 1e-6)

    def combine(self, ec: np.ndarray, dis: np.ndarray) -> np.ndarray:
        s_ec, s_dis = self.scales()
        return self.w_ec * ec / s_ec + self.w_dis * dis / s_dis

    def observe(self, ec: np.ndarray, dis: np.ndarray) -> None:
        if not self.frozen:
            self.ec_stat.update(ec)
            self.dis_stat.update(dis)


def objective_terms(
    model: WorldModel,
    ensemble: Ensemble | None,
    latents: list[LatentState],
    actions: np.ndarray,
    need_dis: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step raw terms for imagined ``latents`` (H+1 states, the first being
    the start) and ``actions`` (H, ..., A).

    Returns ``(ec, dis)`` each shaped (H, ...): ``ec[t]`` is the expected change
    norm of state t+1, ``dis[t]`` the ensemble disagreement given the predicted
    change of state t and action t.
    """
    if len(latents) != len(actions) + 1:
        raise ValueError("need one more latent than actions")
    with ad.no_grad():
        maps = [model.predict_change(s).data.astype(np.float64) for s in latents]
    ec = np.stack([m.mean(axis=-1) for m in maps[1:]])
    if ensemble is None or not need_dis:
        dis = np.zeros_like(ec)
    else:
        dis = np.stack([disagreement_of(ensemble.predict_members(maps[t], actions[t])) for t in range(len(actions))])
    return ec, dis


def exploration_objective(
    model: WorldModel,
    ensemble: Ensemble | None,
    latents: list[LatentState],
    actions: np.ndarray,
    obj: Objective,
) -> np.ndarray | float:
    ec, dis = objective_terms(model, ensemble, latents, actions, need_dis=obj.w_dis > 0)
    out = obj.combine(ec.sum(axis=0), dis.sum(axis=0))
    return float(out) if np.ndim(out) == 0 else out


def cem_optimize(
    score_fn: Callable[[np.ndarray], np.ndarray],
    cfg: CEMConfig,
    action_dim: int = 4,
    init_mean: np.ndarray | None = None,
    history: list | None = None,
) -> np.ndarray:
    """Maximise ``score_fn`` over (H, A) action sequences in [-1, 1].

    ``score_fn`` maps candidates (P, H, A) to scores (P,). The previous
    iteration's elites (with their scores) compete with each new population.
    """
    H = cfg.horizon
    if init_mean is None:
        mean = np.zeros((H, action_dim))
    else:
        mean = np.asarray(init_mean, dtype=np.float64).reshape(H, action_dim).copy()
    mean = np.clip(mean, -1.0, 1.0)
    std = np.full_like(mean, cfg.init_std)
    rng = np.random.default_rng(cfg.seed)
    elites = np.zeros((0, H, action_dim))
    elite_scores = np.zeros(0)
    for _ in range(cfg.iterations):
        cand = np.clip(mean + std * rng.standard_normal((cfg.population, H, action_dim)), -1.0, 1.0)
        scores = np.asarray(score_fn(cand), dtype=np.float64)
        pool = np.concatenate([elites, cand])
        pool_scores = np.concatenate([elite_scores, scores])
        finite = np.isfinite(pool_scores)
        if not finite.any():
            raise PlanningError("every candidate scored NaN; elite set is degenerate")
        pool_scores = np.where(finite, pool_scores, -np.inf)
        order = np.argsort(-pool_scores, kind="stable")[: cfg.n_elite]
        elites, elite_scores = pool[order], pool_scores[order]
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), STD_FLOOR)
        if history is not None:
            history.append(float(elite_scores[0]))
    return np.clip(mean, -1.0, 1.0)


def imagine_batch(model: WorldModel, start: LatentState, actions: np.ndarray, noise_seed: int) -> list[LatentState]:
    """Imagine P candidate sequences (P, H, A) from one start with a shared
    noise draw; returns H+1 batched latents including the start."""
    P, H, _ = actions.shape
    state = start.tile(P)
    eps = np.random.default_rng(noise_seed).standard_normal((H, 1, model.cfg.stoch))
    out = [state]
    with ad.no_grad(), ad.default_dtype(model.cfg.dtype):
        for t in range(H):
            s = model.prior_step(state, actions[:, t], None)
            z = ad.Tensor(s.z_mean.data + s.z_std.data * eps[t])
            state = LatentState(s.h, z, s.z_mean, s.z_std)
            out.append(state)
    return out


TermsFn = Callable[[list, np.ndarray], tuple]


def make_scorer(
    model: WorldModel,
    ensemble: Ensemble | None,
    start: LatentState,
    obj: Objective,
    noise_seed: int,
    record: list | None = None,
    terms_fn: TermsFn | None = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """``terms_fn(latents, actions)`` may replace the default change terms;
    actions arrive time-major (H, P, A)."""
    if terms_fn is None:
        def terms_fn(lat, acts):
            return objective_terms(model, ensemble, lat, acts, need_dis=obj.w_dis > 0)

    def score(cand: np.ndarray) -> np.ndarray:
        lat = imagine_batch(model, start, cand, noise_seed)
        ec, dis = terms_fn(lat, np.swapaxes(cand, 0, 1))
        ec_tot, dis_tot = ec.sum(axis=0), dis.sum(axis=0)
        if record is not None:
            record.append((ec_tot, dis_tot))
        return obj.combine(ec_tot, dis_tot)

    return score


@dataclass
class PlanResult:
    actions: np.ndarray  # (H, A)
    ec: float  # raw predicted change summed over the plan
    dis: float  # raw disagreement summed over the plan


def cem_plan(
    model: WorldModel,
    ensemble: Ensemble | None,
    start: LatentState,
    cfg: CEMConfig,
    obj: Objective,
    init_mean: np.ndarray | None = None,
    history: list | None = None,
    terms_fn: TermsFn | None = None,
) -> PlanResult:
    """Plan H actions from ``start``. Normalisers stay fixed during the plan
    and absorb every scored candidate's terms afterwards. With both weights
    zero there is nothing to optimise and the initial mean is returned."""
    if init_mean is not None and len(init_mean) != cfg.horizon:
        raise ValueError("init_mean must have length horizon")
    record: list = []
    score = make_scorer(model, ensemble, start, obj, cfg.seed + 1, record, terms_fn)
    if obj.w_ec == 0 and obj.w_dis == 0:
        plan = np.zeros((cfg.horizon, model.cfg.action_dim)) if init_mean is None else np.clip(init_mean, -1.0, 1.0)
    else:
        plan = cem_optimize(score, cfg, model.cfg.action_dim, init_mean, history)
    for ec, dis in record:
        obj.observe(ec, dis)
    record.clear()
    score(plan[None])
    (ec, dis), = record
    return PlanResult(plan, float(ec[0]), float(dis[0]))
