"""Environment-change images from pairs of layered observations.

The agent is removed from both frames with a shared mask (the union of the
two predicted agent masks), both masked frames are blurred, and a pixel is
flagged only when the blurred-pixel distance and the pooled patch-feature
distance both exceed their thresholds. The flagged raster is max-pooled to
a 32x32 binary grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .simworld import Observation

GRID = 32


@dataclass(frozen=True)
class MaskNoiseConfig:
    flip_prob: float = 0.0
    dilate_px: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        if self.dilate_px < 0:
            raise ValueError("dilate_px must be >= 0")


NO_NOISE = MaskNoiseConfig()


@dataclass(frozen=True)
class ChangeConfig:
    sigma: float = 1.0
    pixel_threshold: float = 0.1
    feature_threshold: float = 0.05
    patch: int = 4
    grid: int = GRID


@dataclass
class ChangeImage:
    grid: np.ndarray

    @property
    def norm(self) -> float:
        return float(self.grid.sum()) / self.grid.size


def avg_pool(img: np.ndarray, k: int) -> np.ndarray:
    n0, n1 = img.shape[-2] // k, img.shape[-1] // k
    return img.reshape(*img.shape[:-2], n0, k, n1, k).mean(axis=(-3, -1))


def max_pool(img: np.ndarray, k: int) -> np.ndarray:
    n0, n1 = img.shape[-2] // k, img.shape[-1] // k
    return img.reshape(*img.shape[:-2], n0, k, n1, k).max(axis=(-3, -1))


def agent_mask(obs: Observation, noise: MaskNoiseConfig = NO_NOISE, seed: int = 0) -> np.ndarray:
    """Emulated segmenter output: agent pixels, optionally dilated then flipped."""
    mask = obs.agent_layer > 0.5
    if noise.dilate_px > 0:
        mask = ndimage.binary_dilation(mask, iterations=noise.dilate_px)
    if noise.flip_prob > 0.0:
        rng = np.random.default_rng(seed)
        mask = mask ^ (rng.random(mask.shape) < noise.flip_prob)
    return mask


def mask_agent(obs: Observation, noise: MaskNoiseConfig = NO_NOISE, seed: int = 0) -> np.ndarray:
    """Composite with the predicted agent pixels zeroed.

    With a perfect mask this equals ``env_layer`` everywhere the arm does not
    occlude an object, and is zero under the arm.
    """
    return np.where(agent_mask(obs, noise, seed), 0.0, obs.composite)


def change_image(
    x_i: Observation,
    x_j: Observation,
    noise: MaskNoiseConfig = NO_NOISE,
    seed: int = 0,
    cfg: ChangeConfig = ChangeConfig(),
) -> ChangeImage:
    if x_i.composite.shape != x_j.composite.shape:
        raise ValueError(f"dimension mismatch: {x_i.composite.shape} vs {x_j.composite.shape}")
    n = x_i.composite.shape[0]
    if n % cfg.grid or n % cfg.patch:
        raise ValueError(f"raster {n} not divisible by grid {cfg.grid} and patch {cfg.patch}")
    seeds = np.random.SeedSequence(seed).generate_state(2)
    mask = agent_mask(x_i, noise, int(seeds[0])) | agent_mask(x_j, noise, int(seeds[1]))
    a = ndimage.gaussian_filter(np.where(mask, 0.0, x_i.composite), cfg.sigma, mode="constant")
    b = ndimage.gaussian_filter(np.where(mask, 0.0, x_j.composite), cfg.sigma, mode="constant")
    pixel_far = np.abs(a - b) > cfg.pixel_threshold
    feat = np.abs(avg_pool(a, cfg.patch) - avg_pool(b, cfg.patch))
    feat_far = np.kron(feat, np.ones((cfg.patch, cfg.patch))) > cfg.feature_threshold
    flagged = pixel_far & feat_far
    return ChangeImage(grid=max_pool(flagged, n // cfg.grid).astype(np.uint8))


def label_frames(
    observations: list[Observation],
    noise: MaskNoiseConfig = NO_NOISE,
    seed: int = 0,
    cfg: ChangeConfig = ChangeConfig(),
) -> list[ChangeImage]:
    """c_t = change(x_t, x_0) for every frame; c_0 is identically zero."""
    if not observations:
        raise ValueError("cannot label an empty trajectory")
    x0 = observations[0]
    out = [ChangeImage(grid=np.zeros((cfg.grid, cfg.grid), dtype=np.uint8))]
    for t, x in enumerate(observations[1:], start=1):
        out.append(change_image(x, x0, noise, seed * 1_000_003 + t, cfg))
    return out
