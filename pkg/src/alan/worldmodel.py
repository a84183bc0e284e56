"""Recurrent state-space world model with a change-prediction head.

Latent state ``s_t = (h_t, z_t)``: ``h`` is a deterministic recurrent vector,
``z`` a diagonal-Gaussian sample. The prior predicts ``z`` from ``h`` alone;
the posterior also sees the embedding of the incoming observation. Heads
decode the image, the encoder embedding and a per-pixel change probability
map from ``concat(h, z)``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .nn import MLP, ParamSet

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    """Raised when a loss or input is NaN/Inf; parameters are left untouched."""


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int = 1024
    action_dim: int = 4
    embed_dim: int = 128
    hidden: int = 128
    head_hidden: int = 64
    deter: int = 64
    stoch: int = 16
    beta: float = 1.0
    free_nats: float = 1.0
    lr: float = 3e-4
    min_std: float = 1e-4
    seed: int = 0
    dtype: str = "float32"

    @classmethod
    def tiny(cls, width: int = 8, **kw) -> "ModelConfig":
        base = dict(embed_dim=width, hidden=width, head_hidden=width, deter=width, stoch=width, dtype="float64")
        base.update(kw)
        return cls(**base)

    @property
    def feat_dim(self) -> int:
        return self.deter + self.stoch


@dataclass
class LatentState:
    h: Tensor
    z: Tensor
    z_mean: Tensor
    z_std: Tensor

    def feat(self) -> Tensor:
        return ad.concat([self.h, self.z], axis=-1)

    def features(self) -> np.ndarray:
        return np.concatenate([self.h.data, self.z.data], axis=-1)

    def detach(self) -> "LatentState":
        return LatentState(self.h.detach(), self.z.detach(), self.z_mean.detach(), self.z_std.detach())

    def index(self, idx) -> "LatentState":
        return LatentState(*(Tensor(t.data[idx]) for t in (self.h, self.z, self.z_mean, self.z_std)))

    def tile(self, n: int) -> "LatentState":
        """Repeat a single (unbatched or batch-1) state ``n`` times along a new batch axis."""
        def rep(t: Tensor) -> Tensor:
            d = t.data.reshape(-1, t.data.shape[-1])[:1]
            return Tensor(np.repeat(d, n, axis=0))

        return LatentState(rep(self.h), rep(self.z), rep(self.z_mean), rep(self.z_std))


@dataclass
class TrainBatch:
    obs: np.ndarray  # (B, L, obs_dim)
    actions: np.ndarray  # (B, L, action_dim)
    changes: np.ndarray  # (B, L, obs_dim), binary

    def __post_init__(self) -> None:
        if self.obs.ndim != 3 or self.obs.shape[1] < 2:
            raise ValueError("TrainBatch needs sequences of length >= 2 shaped (B, L, D)")
        if self.actions.shape[:2] != self.obs.shape[:2] or self.changes.shape[:2] != self.obs.shape[:2]:
            raise ValueError("observations, actions and change labels must share (B, L)")


@dataclass
class Losses:
    reconstruction: float
    embed: float
    kl: float
    change_nll: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def typed(method):
    """Run ``method`` with the instance's dtype as the graph default."""

    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with ad.default_dtype(self.cfg.dtype):
            return method(self, *args, **kwargs)

    return wrapper


class WorldModel(ParamSet):
    kind = "worldmodel"

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        with ad.default_dtype(cfg.dtype):
            self._build(cfg)
        self.train_steps = 0

    def _build(self, c: ModelConfig) -> None:
        rng = np.random.default_rng(c.seed)
        self.encoder = MLP([c.obs_dim, c.hidden, c.embed_dim], rng, act="elu", out_act="tanh")
        self.core = MLP([c.deter + c.stoch + c.action_dim, c.deter], rng, out_act="tanh")
        self.prior = MLP([c.deter, c.head_hidden, 2 * c.stoch], rng)
        self.posterior = MLP([c.deter + c.embed_dim, c.head_hidden, 2 * c.stoch], rng)
        self.image_decoder = MLP([c.feat_dim, c.hidden, c.obs_dim], rng)
        self.embed_decoder = MLP([c.feat_dim, c.hidden, c.embed_dim], rng)
        self.change_head = MLP([c.feat_dim, c.hidden, c.obs_dim], rng)
        for name in ("encoder", "core", "prior", "posterior", "image_decoder", "embed_decoder", "change_head"):
            self.adopt(name, getattr(self, name))
        self.optimizer = ad.Adam(self.parameters(), lr=c.lr)

    # -- heads ----------------------------------------------------------------
    def heads(self) -> dict[str, MLP]:
        return {
            "encoder": self.encoder,
            "core": self.core,
            "prior": self.prior,
            "posterior": self.posterior,
            "image_decoder": self.image_decoder,
            "embed_decoder": self.embed_decoder,
            "change_head": self.change_head,
        }

    @typed
    def encode(self, obs) -> Tensor:
        x = obs.data if isinstance(obs, Tensor) else np.asarray(obs, dtype=np.float64)
        if x.shape[-2:] == (32, 32) and self.cfg.obs_dim == 1024:
            x = x.reshape(*x.shape[:-2], 1024)
        if x.shape[-1] != self.cfg.obs_dim:
            raise ValueError(f"observation must have {self.cfg.obs_dim} pixels, got shape {x.shape}")
        return self.encoder(obs if isinstance(obs, Tensor) and obs.requires_grad else Tensor(x))

    @typed
    def initial_state(self, batch: int | None = None) -> LatentState:
        lead = () if batch is None else (batch,)
        z = Tensor(np.zeros(lead + (self.cfg.stoch,)))
        return LatentState(Tensor(np.zeros(lead + (self.cfg.deter,))), z, z, Tensor(np.ones(lead + (self.cfg.stoch,))))

    def _gaussian(self, raw: Tensor, rng: np.random.Generator | None) -> tuple[Tensor, Tensor, Tensor]:
        k = self.cfg.stoch
        mean = raw[..., :k]
        std = ad.softplus(raw[..., k:]) + self.cfg.min_std
        if rng is None:
            return mean, mean, std
        eps = rng.standard_normal(mean.shape)
        return mean + std * eps, mean, std

    def _recur(self, prev: LatentState, action) -> Tensor:
        a = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=np.float64))
        if a.ndim < prev.h.ndim:
            a = Tensor(np.broadcast_to(a.data, prev.h.shape[:-1] + a.shape[-1:]).copy()) if not a.requires_grad else a
        return self.core(ad.concat([prev.h, prev.z, a], axis=-1))

    @typed
    def prior_step(self, prev: LatentState, action, rng: np.random.Generator | None = None) -> LatentState:
        h = self._recur(prev, action)
        z, mean, std = self._gaussian(self.prior(h), rng)
        return LatentState(h, z, mean, std)

    @typed
    def posterior_step(
        self, prev: LatentState, action, embed, rng: np.random.Generator | None = None
    ) -> LatentState:
        for arr in (action, embed):
            d = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
            if not np.isfinite(d).all():
                raise NonFiniteError("posterior_step received non-finite input")
        h = self._recur(prev, action)
        e = embed if isinstance(embed, Tensor) else Tensor(embed)
        z, mean, std = self._gaussian(self.posterior(ad.concat([h, e], axis=-1)), rng)
        return LatentState(h, z, mean, std)

    def _as_feat(self, s) -> Tensor:
        return s.feat() if isinstance(s, LatentState) else ad.as_tensor(s)

    @typed
    def decode_image(self, s) -> Tensor:
        return ad.sigmoid(self.image_decoder(self._as_feat(s)))

    @typed
    def decode_embed(self, s) -> Tensor:
        return self.embed_decoder(self._as_feat(s))

    @typed
    def change_logits(self, s) -> Tensor:
        return self.change_head(self._as_feat(s))

    @typed
    def predict_change(self, s) -> Tensor:
        return ad.sigmoid(self.change_logits(s))

    # -- sequences -------------------------------------------------------------
    @typed
    def observe(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        rng: np.random.Generator | None = None,
    ) -> list[LatentState]:
        """Posterior filtering. ``obs`` is (L, D) or (B, L, D); state ``t`` has seen
        ``x_0..x_t`` and actions ``a_0..a_{t-1}``."""
        obs = np.asarray(obs, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        batched = obs.ndim == 3
        if not batched:
            obs, actions = obs[None], actions[None]
        B, L = obs.shape[:2]
        with ad.no_grad():
            emb = self.encode(obs).data
            state = self.initial_state(B)
            out = []
            prev_a = np.zeros((B, self.cfg.action_dim))
            for t in range(L):
                state = self.posterior_step(state, prev_a, emb[:, t], rng)
                out.append(state if batched else state.index(0))
                prev_a = actions[:, t]
        return out

    @typed
    def imagine(
        self,
        start: LatentState,
        actions: np.ndarray,
        seed: int | None = None,
    ) -> list[LatentState]:
        """Iterate the prior over ``actions`` (H, ..., A); returns H states.
        ``seed=None`` follows prior means."""
        actions = np.asarray(actions, dtype=np.float64)
        if len(actions) == 0:
            raise ValueError("imagine needs at least one action")
        rng = None if seed is None else np.random.default_rng(seed)
        out = []
        state = start
        with ad.no_grad():
            for a in actions:
                state = self.prior_step(state, a, rng)
                out.append(state)
        return out

    # -- training ----------------------------------------------------------------
    @typed
    def loss(self, batch: TrainBatch, rng: np.random.Generator | None) -> dict[str, Tensor]:
        c = self.cfg
        B, L = batch.obs.shape[:2]
        obs_tm = np.ascontiguousarray(np.swapaxes(batch.obs, 0, 1)).reshape(L * B, c.obs_dim)
        act_tm = np.swapaxes(batch.actions, 0, 1)
        chg_tm = np.ascontiguousarray(np.swapaxes(batch.changes, 0, 1)).reshape(L * B, c.obs_dim)
        emb = self.encode(obs_tm).reshape(L, B, c.embed_dim)
        state = self.initial_state(B)
        feats, kls = [], []
        prev_a = np.zeros((B, c.action_dim))
        for t in range(L):
            h = self._recur(state, prev_a)
            _, p_mean, p_std = self._gaussian(self.prior(h), None)
            z, q_mean, q_std = self._gaussian(self.posterior(ad.concat([h, emb[t]], axis=-1)), rng)
            state = LatentState(h, z, q_mean, q_std)
            feats.append(state.feat())
            kls.append(ad.gaussian_kl(q_mean, q_std, p_mean, p_std).sum(axis=-1))
            prev_a = act_tm[t]
        feat = ad.concat(feats, axis=0)
        recon = 0.5 * ad.square(self.decode_image(feat) - obs_tm).sum() / (L * B)
        embed = 0.5 * ad.square(self.decode_embed(feat) - emb.reshape(L * B, c.embed_dim)).sum() / (L * B)
        change = ad.bce_with_logits(self.change_logits(feat), chg_tm).sum() / (L * B)
        kl_raw = ad.stack(kls)
        kl = kl_raw.mean()
        total = recon + embed + change
        if c.beta != 0.0:
            total = total + c.beta * ad.maximum(kl_raw, c.free_nats).mean()
        return {"reconstruction": recon, "embed": embed, "kl": kl, "change_nll": change, "total": total}

    @typed
    def train_batch(self, batch: TrainBatch, rng: np.random.Generator) -> Losses:
        self.optimizer.zero_grad()
        terms = self.loss(batch, rng)
        total = terms["total"]
        if not np.isfinite(total.data):
            raise NonFiniteError(f"world-model loss is non-finite: { {k: float(v.data) for k, v in terms.items()} }")
        total.backward()
        grads_ok = all(p.grad is None or np.isfinite(p.grad).all() for p in self.parameters())
        if not grads_ok:
            self.optimizer.zero_grad()
            raise NonFiniteError("world-model gradients are non-finite; step skipped")
        self.optimizer.step()
        self.train_steps += 1
        return Losses(**{k: float(v.data) for k, v in terms.items()})

    # -- persistence ---------------------------------------------------------------
    def header(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.cfg), "n_params": self.num_params()}

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.header(), self.flat())

    @classmethod
    def load(cls, path: str | Path) -> "WorldModel":
        header, flat = checkpoint.load(path)
        if header.get("kind") != cls.kind:
            raise checkpoint.CheckpointError(f"expected {cls.kind} checkpoint, got {header.get('kind')}")
        model = cls(ModelConfig(**header["config"]))
        model.load_flat(flat)
        return model

    def clone(self) -> "WorldModel":
        other = WorldModel(self.cfg)
        other.load_flat(self.flat())
        return other


class Filter:
    """Incremental posterior filtering with posterior means (no sampling)."""

    def __init__(self, model: WorldModel):
        self.model = model
        self.state = model.initial_state()
        self.prev_action = np.zeros(model.cfg.action_dim)

    def update(self, obs_vec: np.ndarray) -> LatentState:
        with ad.no_grad():
            emb = self.model.encode(np.asarray(obs_vec, dtype=np.float64))
            self.state = self.model.posterior_step(self.state, self.prev_action, emb, None)
        return self.state

    def act(self, action) -> None:
        self.prev_action = np.asarray(action, dtype=np.float64)


def make_batch(trajs: Sequence, indices: Sequence[int]) -> TrainBatch:
    obs = np.stack([trajs[i].model_observations() for i in indices])
    acts = np.stack([trajs[i].actions for i in indices])
    chg = np.stack([trajs[i].changes.reshape(len(trajs[i]), -1).astype(np.float64) for i in indices])
    return TrainBatch(obs, acts, chg)
