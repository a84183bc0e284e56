"""Run configuration: one frozen dataclass per TOML section.

Unknown sections or keys are rejected so a typo never silently falls back to
a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .achiever import AchieveConfig
from .awrpolicy import AWRConfig
from .changemetric import ChangeConfig, MaskNoiseConfig
from .ensemble import EnsembleConfig
from .planner import CEMConfig
from .simworld import TASK_SCENES, ConfigError, SceneConfig, load_scene, scene_for_task
from .worldmodel import ModelConfig

METHODS = ("alan", "ec", "awr", "lexa", "icm", "random")


@dataclass(frozen=True)
class SceneSection:
    seed: int = 0
    flip_prob: float = 0.0
    dilate_px: int = 0
    file: str = ""  # scene file; empty means the built-in scene for the task

    @property
    def noise(self) -> MaskNoiseConfig:
        return MaskNoiseConfig(self.flip_prob, self.dilate_px)

    def build(self, task: str) -> SceneConfig:
        if not self.file:
            return scene_for_task(task, self.seed)
        scene = load_scene(self.file)
        if task not in {o.id for o in scene.objects}:
            raise ConfigError(f"scene file {self.file} has no object {task!r}")
        return scene


@dataclass(frozen=True)
class ExplorerConfig:
    method: str = "alan"
    task: str = "door"
    seed: int = 0
    episode_length: int = 20
    bootstrap: int = 25
    budget: int = 125
    episodes_per_cycle: int = 5
    wm_steps: int = 500
    ensemble_steps: int = 200
    awr_steps: int = 200
    wm_batch: int = 4
    action_noise: float = 0.3
    keep_checkpoints: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if not self.task:
            raise ConfigError("explorer.task must be set")
        for name in ("episode_length", "bootstrap", "episodes_per_cycle", "wm_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"explorer.{name} must be >= 1")
        for name in ("budget", "wm_steps", "ensemble_steps", "awr_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"explorer.{name} must be >= 0")


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple = ("alan", "ec", "random")
    tasks: tuple = ("door",)
    seeds: tuple = (1, 2, 3, 4, 5)
    achieve: bool = False
    workers: int = 1  # parallel run processes

    def __post_init__(self) -> None:
        unknown = sorted(set(self.methods) - set(METHODS))
        if unknown:
            raise ConfigError(f"unknown method(s) in [benchmark]: {', '.join(unknown)}")
        if self.workers < 1:
            raise ConfigError("benchmark.workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    change: ChangeConfig = field(default_factory=ChangeConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    planner: CEMConfig = field(default_factory=CEMConfig)
    awr: AWRConfig = field(default_factory=AWRConfig)
    explorer: ExplorerConfig = field(default_factory=ExplorerConfig)
    achiever: AchieveConfig = field(default_factory=AchieveConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def __post_init__(self) -> None:
        if not self.scene.file and self.explorer.task not in TASK_SCENES:
            raise ConfigError(f"unknown task {self.explorer.task!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def digest(self) -> str:
        """Hash of everything that affects a run; the benchmark grid does not."""
        d = {k: v for k, v in self.to_dict().items() if k != "benchmark"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **sections: dict) -> "RunConfig":
        """``cfg.with_overrides(explorer={"seed": 3})``."""
        return from_dict({**self.to_dict(), **{k: {**self.to_dict()[k], **v} for k, v in sections.items()}})

    def for_run(self, method: str | None = None, task: str | None = None, seed: int | None = None) -> "RunConfig":
        ex = {}
        if method is not None:
            ex["method"] = method
        if task is not None:
            ex["task"] = task
        if seed is not None:
            ex["seed"] = int(seed)
        return self.with_overrides(explorer=ex) if ex else self


_SECTION_TYPES = {
    "scene": SceneSection,
    "change": ChangeConfig,
    "model": ModelConfig,
    "ensemble": EnsembleConfig,
    "planner": CEMConfig,
    "awr": AWRConfig,
    "explorer": ExplorerConfig,
    "achiever": AchieveConfig,
    "benchmark": BenchmarkConfig,
}


def _section(name: str, values: Any):
    cls = _SECTION_TYPES[name]
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    extra = sorted(set(values) - set(known))
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(extra)}")
    clean = {}
    for k, v in values.items():
        if isinstance(known[k].default, tuple) and isinstance(v, list):
            v = tuple(v)
        clean[k] = v
    try:
        return cls(**clean)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}]: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    extra = sorted(set(data) - set(_SECTION_TYPES))
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    return RunConfig(**{name: _section(name, vals) for name, vals in data.items()})


def load(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return from_dict(data)


def from_json(text: str) -> RunConfig:
    return from_dict(json.loads(text))


def default() -> RunConfig:
    return RunConfig()


def replace_section(cfg: RunConfig, name: str, **kw) -> RunConfig:
    return replace(cfg, **{name: replace(getattr(cfg, name), **kw)})
