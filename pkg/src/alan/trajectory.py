"""Trajectory container shared by the change labeller, explorer and achiever."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .changemetric import ChangeConfig, MaskNoiseConfig, NO_NOISE, avg_pool, label_frames
from .simworld import Observation

EPISODE_LENGTH = 20


def model_obs(obs: Observation) -> np.ndarray:
    """The world model's view of one observation: the uint8-quantised
    composite average-pooled to 32x32 and flattened."""
    comp = np.rint(obs.composite * 255.0) / 255.0
    return avg_pool(comp, comp.shape[-1] // 32).reshape(-1)


@dataclass
class Trajectory:
    """Frames ``t = 0..L-1``: observation ``x_t``, the action executed after
    seeing it, and the change label ``c_t = f_c(x_t, x_0)``.

    Observations are stored as the uint8 composite plus the agent mask, which
    is all the change pipeline needs.
    """

    composites: np.ndarray  # (L, N, N) uint8
    agent_masks: np.ndarray  # (L, N, N) bool
    actions: np.ndarray  # (L, 4) float64
    changes: np.ndarray  # (L, 32, 32) uint8
    seed: int = 0
    region_id: str = ""
    method: str = ""
    episode_index: int = 0
    success: bool = False
    info: dict = field(default_factory=dict)
    _model_obs: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return int(self.composites.shape[0])

    @property
    def total_change(self) -> float:
        return float(self.change_norms().sum())

    def change_norms(self) -> np.ndarray:
        c = self.changes.reshape(len(self), -1)
        return c.sum(axis=1) / c.shape[1]

    def observation(self, t: int) -> Observation:
        comp = self.composites[t].astype(np.float64) / 255.0
        agent = self.agent_masks[t]
        return Observation(composite=comp, agent_layer=agent.astype(np.float64), env_layer=np.where(agent, 0.0, comp))

    def model_observations(self) -> np.ndarray:
        """Composites downsampled to 32x32 and flattened: (L, 1024) in [0, 1]."""
        if self._model_obs is None:
            comp = self.composites.astype(np.float64) / 255.0
            k = comp.shape[-1] // 32
            self._model_obs = avg_pool(comp, k).reshape(len(self), -1)
            self._model_obs.flags.writeable = False
        return self._model_obs

    @classmethod
    def from_observations(
        cls,
        observations: list[Observation],
        actions: np.ndarray,
        **meta,
    ) -> "Trajectory":
        comps = np.stack([np.rint(o.composite * 255.0).astype(np.uint8) for o in observations])
        masks = np.stack([o.agent_layer > 0.5 for o in observations])
        n = len(observations)
        return cls(
            composites=comps,
            agent_masks=masks,
            actions=np.asarray(actions, dtype=np.float64).reshape(n, -1),
            changes=np.zeros((n, 32, 32), dtype=np.uint8),
            **meta,
        )


def label_trajectory(
    traj: Trajectory,
    noise: MaskNoiseConfig = NO_NOISE,
    seed: int = 0,
    cfg: ChangeConfig = ChangeConfig(),
) -> Trajectory:
    if len(traj) == 0:
        raise ValueError("cannot label an empty trajectory")
    obs = [traj.observation(t) for t in range(len(traj))]
    grids = np.stack([c.grid for c in label_frames(obs, noise, seed, cfg)])
    return replace(traj, changes=grids)
