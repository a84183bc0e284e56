"""Bootstrapped ensembles of one-step predictors and their disagreement.

All members share one stacked parameter set with a leading member axis, so
a forward pass over K members is a single batched matmul. Members never
exchange gradients: the training loss is a plain sum of member losses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .nn import MLP, ParamSet


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 5
    in_dim: int = 1024
    action_dim: int = 4
    out_dim: int = 1024
    hidden: int = 64
    output: str = "bernoulli"  # or "gaussian" (unit-variance, i.e. MSE)
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.members < 2:
            raise ValueError("an ensemble needs at least two members")
        if self.output not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown output model {self.output!r}")


class Ensemble(ParamSet):
    kind = "ensemble"

    def __init__(self, cfg: EnsembleConfig = EnsembleConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        with ad.default_dtype(cfg.dtype):
            self.net = MLP(
                [cfg.in_dim + cfg.action_dim, cfg.hidden, cfg.hidden, cfg.out_dim],
                rng,
                act="elu",
                members=cfg.members,
            )
            self.adopt("members", self.net)
            self.optimizer = ad.Adam(self.parameters(), lr=cfg.lr)
        self.boot_rngs = [np.random.default_rng([cfg.seed, k, 7]) for k in range(cfg.members)]
        self.train_steps = 0

    @property
    def members(self) -> int:
        return self.cfg.members

    def _inputs(self, x, a) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.shape[-1] != self.cfg.in_dim:
            raise ValueError(f"expected inputs of width {self.cfg.in_dim}, got {x.shape[-1]}")
        a = np.broadcast_to(a, x.shape[:-1] + (self.cfg.action_dim,))
        return np.concatenate([x, a], axis=-1), single

    def raw(self, inputs) -> ad.Tensor:
        with ad.default_dtype(self.cfg.dtype):
            return self.net(ad.Tensor(inputs) if not isinstance(inputs, ad.Tensor) else inputs)

    def predict_members(self, x, a) -> np.ndarray:
        """Member predictions, shape (K, N, out) (or (K, out) for one input)."""
        inputs, single = self._inputs(x, a)
        with ad.no_grad():
            out = self.raw(inputs).data
        if self.cfg.output == "bernoulli":
            out = 0.5 * (1.0 + np.tanh(0.5 * out))
        out = out.astype(np.float64)
        return out[:, 0] if single else out

    def disagreement(self, x, a) -> np.ndarray | float:
        """Pixel-mean of the across-member population variance."""
        preds = self.predict_members(x, a)
        return disagreement_of(preds)

    def member_losses(self, inputs: np.ndarray, targets: np.ndarray) -> ad.Tensor:
        """Per-member mean loss for stacked inputs (K, N, in) and targets (K, N, out)."""
        with ad.default_dtype(self.cfg.dtype):
            raw = self.raw(inputs)
            if self.cfg.output == "bernoulli":
                per = ad.bce_with_logits(raw, targets)
            else:
                per = 0.5 * ad.square(raw - targets)
            return per.sum(axis=-1).mean(axis=-1)

    def bootstrap(self, n: int) -> np.ndarray:
        return np.stack([r.integers(0, n, size=n) for r in self.boot_rngs])

    def train_step(self, x, a, target, idx: np.ndarray | None = None) -> np.ndarray:
        """One Adam step per member on its bootstrap view of the batch.

        Members whose loss is non-finite are rolled back. Returns the
        per-member losses measured before the step.
        """
        inputs, _ = self._inputs(x, a)
        target = np.asarray(target, dtype=np.float64).reshape(len(inputs), -1)
        if len(inputs) == 0:
            raise ValueError("empty training batch")
        if idx is None:
            idx = self.bootstrap(len(inputs))
        losses = self.member_losses(inputs[idx], target[idx])
        values = losses.data.astype(np.float64)
        good = np.isfinite(values)
        self.optimizer.zero_grad()
        if good.any():
            sel = np.flatnonzero(good)
            total = losses[sel].sum() if not good.all() else losses.sum()
            total.backward()
            before = None if good.all() else (self.snapshot(), self.optimizer.state())
            self.optimizer.step()
            if before is not None:
                self._rollback_members(np.flatnonzero(~good), *before)
            self.train_steps += 1
        return values

    def _rollback_members(self, bad: np.ndarray, params: list, opt: dict) -> None:
        for i, p in enumerate(self.parameters()):
            p.data[bad] = params[i][bad]
            self.optimizer.m[i][bad] = opt["m"][i][bad]
            self.optimizer.v[i][bad] = opt["v"][i][bad]

    def clone_member(self, src: int, dst: int) -> None:
        for p in self.parameters():
            p.data[dst] = p.data[src]

    def member_mask(self, param: ad.Tensor, k: int) -> np.ndarray:
        m = np.zeros(param.data.shape)
        m[k] = 1.0
        return m

    # -- persistence ---------------------------------------------------------
    def header(self) -> dict:
        cfg = asdict(self.cfg)
        return {
            "kind": self.kind,
            "config": cfg,
            "K": self.cfg.members,
            "member_dims": [self.cfg.in_dim + self.cfg.action_dim, self.cfg.hidden, self.cfg.hidden, self.cfg.out_dim],
            "n_params": self.num_params(),
        }

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.header(), self.flat())

    @classmethod
    def load(cls, path: str | Path) -> "Ensemble":
        header, flat = checkpoint.load(path)
        if header.get("kind") != cls.kind:
            raise checkpoint.CheckpointError(f"expected ensemble checkpoint, got {header.get('kind')}")
        ens = cls(EnsembleConfig(**header["config"]))
        ens.load_flat(flat)
        return ens


def disagreement_of(preds: np.ndarray) -> np.ndarray | float:
    """``preds`` has the member axis first; returns the mean over the last axis
    of the population variance over members.

    Deviations are taken from member 0 first, so identical members give
    exactly zero rather than rounding noise from the mean."""
    dev = preds - preds[:1]
    var = np.var(dev, axis=0)
    out = var.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def change_ensemble(seed: int = 0, **kw) -> Ensemble:
    return Ensemble(EnsembleConfig(seed=seed, **kw))


def transitions(trajs, rng: np.random.Generator, batch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample ``(c_t, a_t, c_{t+1})`` triples from labelled trajectories."""
    ti = rng.integers(0, len(trajs), size=batch_size)
    c, a, n = [], [], []
    for i in ti:
        tr = trajs[int(i)]
        t = int(rng.integers(0, len(tr) - 1))
        c.append(tr.changes[t].reshape(-1))
        a.append(tr.actions[t])
        n.append(tr.changes[t + 1].reshape(-1))
    return (np.asarray(c, dtype=np.float64), np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64))
