"""Advantage-weighted regression on the highest-change trajectories.

The policy and value networks read world-model latents ``concat(h, z)``.
The policy is only used to seed CEM with an imagined action sequence (and
is executed directly by the ``awr`` ablation).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .nn import MLP, ParamSet
from .worldmodel import LatentState, WorldModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AWRConfig:
    n_top: int = 10
    beta: float = 1.0
    discount: float = 0.95
    weight_clip: float = 20.0
    hidden: int = 64
    action_std: float = 0.3
    lr: float = 3e-4
    seed: int = 0
    dtype: str = "float32"


class PolicyValue(ParamSet):
    """Tanh-squashed policy mean plus a scalar value baseline."""

    kind = "awr"

    def __init__(self, feat_dim: int, action_dim: int = 4, cfg: AWRConfig = AWRConfig()):
        super().__init__()
        self.cfg = cfg
        self.feat_dim = feat_dim
        self.action_dim = action_dim
        rng = np.random.default_rng(cfg.seed)
        with ad.default_dtype(cfg.dtype):
            self.policy = MLP([feat_dim, cfg.hidden, cfg.hidden, action_dim], rng, out_act="tanh")
            self.value = MLP([feat_dim, cfg.hidden, cfg.hidden, 1], rng)
            self.adopt("policy", self.policy)
            self.adopt("value", self.value)
            self.policy_opt = ad.Adam(self.policy.parameters(), lr=cfg.lr)
            self.value_opt = ad.Adam(self.value.parameters(), lr=cfg.lr)
        self.train_steps = 0

    def act(self, feats) -> np.ndarray:
        with ad.no_grad(), ad.default_dtype(self.cfg.dtype):
            return self.policy(ad.Tensor(np.asarray(feats))).data.astype(np.float64)

    def values(self, feats) -> np.ndarray:
        with ad.no_grad(), ad.default_dtype(self.cfg.dtype):
            return self.value(ad.Tensor(np.asarray(feats))).data[..., 0].astype(np.float64)

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "config": asdict(self.cfg),
            "feat_dim": self.feat_dim,
            "action_dim": self.action_dim,
            "n_params": self.num_params(),
        }

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.header(), self.flat())

    @classmethod
    def load(cls, path: str | Path) -> "PolicyValue":
        header, flat = checkpoint.load(path)
        if header.get("kind") != cls.kind:
            raise checkpoint.CheckpointError(f"expected awr checkpoint, got {header.get('kind')}")
        pv = cls(header["feat_dim"], header["action_dim"], AWRConfig(**header["config"]))
        pv.load_flat(flat)
        return pv


def select_top(replay: Sequence, n_top: int) -> list:
    """The ``n_top`` trajectories with the largest total change; ties go to the
    most recently added."""
    if len(replay) == 0:
        raise ValueError("replay is empty")
    order = sorted(range(len(replay)), key=lambda i: (-replay[i].total_change, -i))
    return [replay[i] for i in order[: max(0, n_top)]]


def discounted_returns(rewards: np.ndarray, discount: float) -> np.ndarray:
    out = np.zeros_like(rewards, dtype=np.float64)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


@dataclass
class AWRDataset:
    feats: np.ndarray  # (N, F)
    actions: np.ndarray  # (N, A)
    returns: np.ndarray  # (N,)


def build_dataset(
    model: WorldModel,
    trajs: Sequence,
    discount: float,
    rewards_fn=None,
) -> AWRDataset:
    """Filter each trajectory to posterior-mean latents and attach Monte-Carlo
    returns. The reward for action ``a_t`` is the change norm of frame t+1
    unless ``rewards_fn(traj, latents)`` supplies per-step rewards."""
    feats, acts, rets = [], [], []
    for tr in trajs:
        lat = model.observe(tr.model_observations(), tr.actions)
        f = np.stack([s.features() for s in lat]).astype(np.float64)
        if rewards_fn is None:
            norms = tr.change_norms()
            rewards = np.append(norms[1:], 0.0)
        else:
            rewards = np.asarray(rewards_fn(tr, lat), dtype=np.float64)
        feats.append(f[:-1])
        acts.append(tr.actions[:-1])
        rets.append(discounted_returns(rewards, discount)[:-1])
    return AWRDataset(np.concatenate(feats), np.concatenate(acts), np.concatenate(rets))


def awr_weights(returns: np.ndarray, values: np.ndarray, beta: float, clip: float) -> np.ndarray:
    adv = (np.asarray(returns) - np.asarray(values)) / beta
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.where(adv >= np.log(clip), clip, np.exp(np.minimum(adv, np.log(clip))))
    if not np.isfinite(w).all():
        warnings.warn("non-finite AWR weights clipped", RuntimeWarning, stacklevel=2)
        w = np.where(np.isfinite(w), w, clip)
    return np.minimum(w, clip)


def policy_loss(pv: PolicyValue, data: AWRDataset, weights: np.ndarray) -> ad.Tensor:
    with ad.default_dtype(pv.cfg.dtype):
        mean = pv.policy(ad.Tensor(data.feats))
        err = ad.square(mean - data.actions).sum(axis=-1)
        return (err * weights).mean()


def value_loss(pv: PolicyValue, data: AWRDataset) -> ad.Tensor:
    with ad.default_dtype(pv.cfg.dtype):
        v = pv.value(ad.Tensor(data.feats))[..., 0]
        return (0.5 * ad.square(v - data.returns)).mean()


def awr_update(pv: PolicyValue, data: AWRDataset, beta: float | None = None) -> dict[str, float]:
    """One value-regression step and one weighted-cloning step."""
    if len(data.feats) == 0:
        raise ValueError("AWR dataset is empty")
    beta = pv.cfg.beta if beta is None else beta
    weights = awr_weights(data.returns, pv.values(data.feats), beta, pv.cfg.weight_clip)

    pv.value_opt.zero_grad()
    vl = value_loss(pv, data)
    vl.backward()
    pv.value_opt.step()

    pv.policy_opt.zero_grad()
    pl = policy_loss(pv, data, weights)
    pl.backward()
    pv.policy_opt.step()
    pv.train_steps += 1
    return {"policy": float(pl.data), "value": float(vl.data), "mean_weight": float(weights.mean())}


def propose_actions(pv: PolicyValue, model: WorldModel, start: LatentState, horizon: int) -> np.ndarray:
    """Roll the policy mean through the prior (means, no sampling) for
    ``horizon`` steps and return the actions taken."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    state = start
    actions = []
    with ad.no_grad():
        for _ in range(horizon):
            a = pv.act(state.features())
            actions.append(a)
            state = model.prior_step(state, a, None)
    return np.stack(actions)
