"""Intrinsic rewards of the comparison explorers.

``icm``: one-step latent prediction error of the world model.
``lexa``: disagreement of an ensemble of latent one-step models, measured in
the full latent space rather than in change space.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .ensemble import Ensemble, EnsembleConfig, disagreement_of
from .worldmodel import LatentState, WorldModel


def baseline_icm_reward(model: WorldModel, s_t: LatentState, a_t, s_next: LatentState) -> np.ndarray | float:
    """``|| prior mean of z_{t+1} given (s_t, a_t) - z_{t+1} ||``."""
    with ad.no_grad():
        pred = model.prior_step(s_t, a_t, None).z_mean.data.astype(np.float64)
    err = np.linalg.norm(pred - s_next.z.data.astype(np.float64), axis=-1)
    return float(err) if np.ndim(err) == 0 else err


def icm_rewards(model: WorldModel, latents: Sequence[LatentState], actions: np.ndarray) -> np.ndarray:
    """Per-step rewards for a filtered trajectory; the reward of action
    ``a_t`` is the error predicting ``z_{t+1}``. The final action has no
    successor and gets 0."""
    out = np.zeros(len(latents))
    for t in range(len(latents) - 1):
        out[t] = baseline_icm_reward(model, latents[t], actions[t], latents[t + 1])
    return out


def latent_ensemble(model: WorldModel, members: int = 5, hidden: int = 64, seed: int = 0, **kw) -> Ensemble:
    f = model.cfg.feat_dim
    return Ensemble(
        EnsembleConfig(
            members=members,
            in_dim=f,
            action_dim=model.cfg.action_dim,
            out_dim=f,
            hidden=hidden,
            output="gaussian",
            seed=seed,
            **kw,
        )
    )


def baseline_lexa_objective(ens: Ensemble, s_t, a_t) -> np.ndarray | float:
    """Mean over latent dimensions of the across-member variance of the
    predicted next latent."""
    feat = s_t.features() if isinstance(s_t, LatentState) else np.asarray(s_t)
    return disagreement_of(ens.predict_members(feat, a_t))


def lexa_terms(ens: Ensemble):
    """Planner terms for the latent-disagreement explorer: (zeros, dis)."""

    def terms(latents: list[LatentState], actions: np.ndarray):
        dis = np.stack([baseline_lexa_objective(ens, latents[t], actions[t]) for t in range(len(actions))])
        return np.zeros_like(dis), dis

    return terms


def latent_transitions(feats: np.ndarray, actions: np.ndarray, rng: np.random.Generator, batch_size: int):
    """Sample ``(f_t, a_t, f_{t+1})`` from filtered features (N, L, F)."""
    n, L = feats.shape[:2]
    i = rng.integers(0, n, size=batch_size)
    t = rng.integers(0, L - 1, size=batch_size)
    return feats[i, t], actions[i, t], feats[i, t + 1]
