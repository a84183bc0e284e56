"""Deterministic 2D kinematic play-kitchen.

World coordinates have ``y`` pointing up. The arm hangs from a fixed base
above the workspace and ends in a two-finger gripper whose tip is the
end-effector point used for every contact test. Rendering is a binary
pixel-centre coverage test, so layers are exact and reproducible.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = ("hinged_door", "liftable_item", "freestanding_item")

DOOR_SUCCESS_FRAC = 0.6
LIFT_SUCCESS_FRAC = 0.10
PUSH_SUCCESS_FRAC = 0.05
GRIP_CLOSE = 0.5
GRIP_OPEN = -0.5


class ConfigError(ValueError):
    """Invalid scene, region or task reference."""


Point = tuple[float, float]


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    kind: str
    polygon: tuple[Point, ...]
    intensity: int = 150
    # hinged doors
    hinge: Point | None = None
    angle_range: tuple[float, float] = (0.0, 1.3)
    opening: int = 1
    handle: Point | None = None
    handle_radius: float = 0.05
    # liftable items
    grasp_point: Point | None = None
    grasp_radius: float = 0.04
    region_radius: float = 0.12

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"object {self.id!r}: unknown kind {self.kind!r}")
        if len(self.polygon) < 3:
            raise ConfigError(f"object {self.id!r}: polygon needs >= 3 vertices")
        if not 0 < self.intensity < 256:
            raise ConfigError(f"object {self.id!r}: intensity must be in 1..255")
        if self.kind == "hinged_door":
            lo, hi = self.angle_range
            if self.hinge is None or self.handle is None:
                raise ConfigError(f"door {self.id!r} needs hinge and handle")
            if not (0.0 <= lo < hi <= math.pi):
                raise ConfigError(f"door {self.id!r}: angle range must lie in [0, pi]")
            if self.opening not in (1, -1):
                raise ConfigError(f"door {self.id!r}: opening must be +1 or -1")
        if self.kind == "liftable_item" and self.grasp_point is None:
            raise ConfigError(f"item {self.id!r} needs a grasp point")
        if not _is_simple(self.polygon):
            raise ConfigError(f"object {self.id!r}: polygon self-intersects")

    @property
    def rest_angle(self) -> float:
        return self.angle_range[0]

    @property
    def centroid(self) -> Point:
        return polygon_centroid(self.polygon)


@dataclass(frozen=True)
class ArmSpec:
    base: Point = (0.5, 1.12)
    link_width: float = 0.045
    move_scale: float = 0.06
    turn_scale: float = 0.25
    margin: float = 0.02
    finger_length: float = 0.045
    finger_width: float = 0.014
    finger_spread: float = 0.026
    palm_width: float = 0.07
    palm_thickness: float = 0.016
    intensity: int = 140


@dataclass(frozen=True)
class SceneConfig:
    objects: tuple[ObjectSpec, ...] = ()
    workspace: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    raster_size: int = 64
    seed: int = 0
    name: str = "custom"
    arm: ArmSpec = ArmSpec()

    def __post_init__(self) -> None:
        x0, y0, x1, y1 = self.workspace
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("workspace must have positive extent")
        if self.raster_size < 16:
            raise ConfigError("raster_size must be >= 16")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ConfigError("object identifiers must be unique")
        for o in self.objects:
            for x, y in o.polygon:
                if not (x0 <= x <= x1 and y0 <= y <= y1):
                    raise ConfigError(f"object {o.id!r} lies outside the workspace")

    @property
    def side(self) -> float:
        x0, y0, x1, y1 = self.workspace
        return max(x1 - x0, y1 - y0)

    def get(self, object_id: str) -> ObjectSpec:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise ConfigError(f"unknown object {object_id!r}")


@dataclass(frozen=True)
class RegionDescriptor:
    object_id: str
    center: Point
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ConfigError("region radius must be positive")


@dataclass
class WorldState:
    x: float
    y: float
    theta: float
    gripper_closed: bool
    articulations: dict[str, float] = field(default_factory=dict)
    free_poses: dict[str, tuple[float, float, bool]] = field(default_factory=dict)
    time_step: int = 0

    def copy(self) -> "WorldState":
        return dataclasses.replace(
            self, articulations=dict(self.articulations), free_poses=dict(self.free_poses)
        )

    @property
    def tip(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def held(self) -> str | None:
        for k, (_, _, lifted) in self.free_poses.items():
            if lifted:
                return k
        return None


@dataclass
class Observation:
    composite: np.ndarray
    agent_layer: np.ndarray
    env_layer: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.composite.shape


ACTION_DIM = 4


def clamp_action(action: Sequence[float]) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(ACTION_DIM)
    return np.clip(a, -1.0, 1.0)


# -- geometry ----------------------------------------------------------------


def polygon_area(poly: Sequence[Point]) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(poly: Sequence[Point]) -> Point:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if abs(a) < 1e-15:
        return float(x.mean()), float(y.mean())
    cx = ((x + xn) * cross).sum() / (6 * a)
    cy = ((y + yn) * cross).sum() / (6 * a)
    return float(cx), float(cy)


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return d1 * d2 < 0 and d3 * d4 < 0


def _is_simple(poly: Sequence[Point]) -> bool:
    n = len(poly)
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


def rotate(poly: np.ndarray, pivot: Point, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    d = np.asarray(poly, dtype=np.float64) - pivot
    return np.stack([c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1]], axis=-1) + pivot


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorised over points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        xa, ya = poly[i]
        xb, yb = poly[(i + 1) % n]
        if ya == yb:
            continue
        cond = (ya > py) != (yb > py)
        xcross = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= cond & (px < xcross)
    return inside


def _segment_quad(a: np.ndarray, b: np.ndarray, width: float) -> np.ndarray:
    d = b - a
    n = float(np.hypot(*d))
    if n < 1e-12:
        d = np.array([0.0, 1.0])
        n = 1.0
    perp = np.array([-d[1], d[0]]) / n * (width / 2)
    return np.array([a + perp, b + perp, b - perp, a - perp])


# -- kinematic helpers ---------------------------------------------------------


def door_rotation(obj: ObjectSpec, angle: float) -> float:
    return obj.opening * (angle - obj.rest_angle)


def door_polygon(obj: ObjectSpec, angle: float) -> np.ndarray:
    return rotate(np.asarray(obj.polygon), obj.hinge, door_rotation(obj, angle))


def handle_position(obj: ObjectSpec, angle: float) -> np.ndarray:
    return rotate(np.asarray(obj.handle), obj.hinge, door_rotation(obj, angle))


def item_polygon(obj: ObjectSpec, pose: tuple[float, float, bool]) -> np.ndarray:
    cx, cy = obj.centroid
    return np.asarray(obj.polygon) + (pose[0] - cx, pose[1] - cy)


def grasp_position(obj: ObjectSpec, pose: tuple[float, float, bool]) -> np.ndarray:
    cx, cy = obj.centroid
    return np.asarray(obj.grasp_point) + (pose[0] - cx, pose[1] - cy)


def arm_polygons(scene: SceneConfig, state: WorldState) -> list[np.ndarray]:
    arm = scene.arm
    tip = state.tip
    down = np.array([math.sin(state.theta), -math.cos(state.theta)])
    side = np.array([-down[1], down[0]])
    wrist = tip - down * arm.finger_length
    polys = [_segment_quad(np.asarray(arm.base), wrist, arm.link_width)]
    palm_a = wrist - side * arm.palm_width / 2
    palm_b = wrist + side * arm.palm_width / 2
    polys.append(_segment_quad(palm_a, palm_b, arm.palm_thickness))
    spread = arm.finger_width / 2 if state.gripper_closed else arm.finger_spread
    for sgn in (-1.0, 1.0):
        root = wrist + sgn * side * spread
        polys.append(_segment_quad(root, root + down * arm.finger_length, arm.finger_width))
    return polys


# -- operations ------------------------------------------------------------------


def regions(scene: SceneConfig) -> list[RegionDescriptor]:
    return [RegionDescriptor(o.id, o.centroid, o.region_radius) for o in scene.objects]


def rest_state(scene: SceneConfig, x: float, y: float) -> WorldState:
    return WorldState(
        x=x,
        y=y,
        theta=0.0,
        gripper_closed=False,
        articulations={o.id: o.rest_angle for o in scene.objects if o.kind == "hinged_door"},
        free_poses={o.id: (*o.centroid, False) for o in scene.objects if o.kind != "hinged_door"},
        time_step=0,
    )


def _arm_bounds(scene: SceneConfig) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = scene.workspace
    m = scene.arm.margin
    return x0 + m, y0 + m, x1 - m, y1 - m


def reset(scene: SceneConfig, region: RegionDescriptor | str, seed: int) -> WorldState:
    """Objects at rest; arm tip uniform in the region disk (seeded)."""
    if isinstance(region, str):
        region = next((r for r in regions(scene) if r.object_id == region), None)
        if region is None:
            raise ConfigError("unknown region")
    if region.object_id not in {o.id for o in scene.objects}:
        raise ConfigError(f"region {region.object_id!r} does not belong to scene")
    rng = np.random.default_rng([scene.seed, int(seed)])
    r = region.radius * math.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * math.pi)
    bx0, by0, bx1, by1 = _arm_bounds(scene)
    x = float(np.clip(region.center[0] + r * math.cos(phi), bx0, bx1))
    y = float(np.clip(region.center[1] + r * math.sin(phi), by0, by1))
    return rest_state(scene, x, y)


def step(scene: SceneConfig, state: WorldState, action: Sequence[float]) -> WorldState:
    a = clamp_action(action)
    arm = scene.arm
    new = state.copy()
    new.time_step = state.time_step + 1

    # gripper first, at the pre-motion tip
    if a[3] > GRIP_CLOSE and not state.gripper_closed:
        new.gripper_closed = True
        for o in scene.objects:
            if o.kind != "liftable_item" or new.held() is not None:
                continue
            pose = new.free_poses[o.id]
            if np.hypot(*(grasp_position(o, pose) - state.tip)) <= o.grasp_radius:
                new.free_poses[o.id] = (pose[0], pose[1], True)
    elif a[3] < GRIP_OPEN and state.gripper_closed:
        new.gripper_closed = False
        held = new.held()
        if held is not None:
            px, _, _ = new.free_poses[held]
            new.free_poses[held] = (px, scene.get(held).centroid[1], False)

    bx0, by0, bx1, by1 = _arm_bounds(scene)
    new.x = float(np.clip(state.x + arm.move_scale * a[0], bx0, bx1))
    new.y = float(np.clip(state.y + arm.move_scale * a[1], by0, by1))
    new.theta = float(np.clip(state.theta + arm.turn_scale * a[2], -math.pi / 2, math.pi / 2))
    delta = np.array([new.x - state.x, new.y - state.y])

    for o in scene.objects:
        if o.kind == "hinged_door":
            ang = state.articulations[o.id]
            hpos = handle_position(o, ang)
            if np.hypot(*(hpos - state.tip)) <= o.handle_radius:
                lever = hpos - np.asarray(o.hinge)
                dh = o.opening * np.array([-lever[1], lever[0]])
                dang = float(delta @ dh) / float(lever @ lever)
                lo, hi = o.angle_range
                new.articulations[o.id] = float(np.clip(ang + dang, lo, hi))
        elif o.kind == "liftable_item":
            px, py, lifted = new.free_poses[o.id]
            if lifted:
                new.free_poses[o.id] = (px + float(delta[0]), py + float(delta[1]), True)
        else:
            px, py, _ = new.free_poses[o.id]
            poly = item_polygon(o, (px, py, False))
            if points_in_polygon(np.array([new.x]), np.array([new.y]), poly)[0]:
                new.free_poses[o.id] = (px + float(delta[0]), py + float(delta[1]), False)
    return new


class Rasterizer:
    """Pixel-centre coverage for a fixed workspace and raster size."""

    def __init__(self, scene: SceneConfig):
        x0, y0, x1, y1 = scene.workspace
        n = scene.raster_size
        self.n = n
        self.x0, self.y1 = x0, y1
        self.dx = (x1 - x0) / n
        self.dy = (y1 - y0) / n
        cols = x0 + (np.arange(n) + 0.5) * self.dx
        rows = y1 - (np.arange(n) + 0.5) * self.dy
        self.px, self.py = np.meshgrid(cols, rows)

    def fill(self, poly: np.ndarray) -> np.ndarray:
        poly = np.asarray(poly, dtype=np.float64)
        out = np.zeros((self.n, self.n), dtype=bool)
        c0 = int(max(0, math.floor((poly[:, 0].min() - self.x0) / self.dx)))
        c1 = int(min(self.n, math.ceil((poly[:, 0].max() - self.x0) / self.dx) + 1))
        r0 = int(max(0, math.floor((self.y1 - poly[:, 1].max()) / self.dy)))
        r1 = int(min(self.n, math.ceil((self.y1 - poly[:, 1].min()) / self.dy) + 1))
        if c0 >= c1 or r0 >= r1:
            return out
        sub = points_in_polygon(self.px[r0:r1, c0:c1], self.py[r0:r1, c0:c1], poly)
        out[r0:r1, c0:c1] = sub
        return out


_RASTER_CACHE: dict[tuple, Rasterizer] = {}


def rasterizer(scene: SceneConfig) -> Rasterizer:
    key = (scene.workspace, scene.raster_size)
    r = _RASTER_CACHE.get(key)
    if r is None:
        r = _RASTER_CACHE[key] = Rasterizer(scene)
    return r


def object_polygon(scene: SceneConfig, state: WorldState, obj: ObjectSpec) -> np.ndarray:
    if obj.kind == "hinged_door":
        return door_polygon(obj, state.articulations[obj.id])
    return item_polygon(obj, state.free_poses[obj.id])


def render_layers(scene: SceneConfig, state: WorldState) -> tuple[np.ndarray, np.ndarray]:
    """Integer layers: (env intensities uint8, agent boolean mask)."""
    ras = rasterizer(scene)
    env = np.zeros((ras.n, ras.n), dtype=np.uint8)
    held = state.held()
    # held items are drawn last so they sit on top of the scenery
    order = sorted(scene.objects, key=lambda o: o.id == held)
    for o in order:
        env[ras.fill(object_polygon(scene, state, o))] = o.intensity
    agent = np.zeros((ras.n, ras.n), dtype=bool)
    for poly in arm_polygons(scene, state):
        agent |= ras.fill(poly)
    return env, agent


def compose(env: np.ndarray, agent: np.ndarray, agent_intensity: float) -> np.ndarray:
    return np.where(agent, agent_intensity, env)


def render(scene: SceneConfig, state: WorldState) -> Observation:
    env, agent = render_layers(scene, state)
    env_f = env.astype(np.float64) / 255.0
    agent_f = agent.astype(np.float64)
    return Observation(
        composite=compose(env_f, agent, scene.arm.intensity / 255.0),
        agent_layer=agent_f,
        env_layer=env_f,
    )


def success(scene: SceneConfig, state: WorldState, task_id: str) -> bool:
    obj = scene.get(task_id)
    side = scene.side
    if obj.kind == "hinged_door":
        lo, hi = obj.angle_range
        return abs(state.articulations[obj.id] - obj.rest_angle) > DOOR_SUCCESS_FRAC * (hi - lo)
    px, py, lifted = state.free_poses[obj.id]
    cx, cy = obj.centroid
    if obj.kind == "liftable_item":
        return bool(lifted) and (py - cy) > LIFT_SUCCESS_FRAC * side
    return math.hypot(px - cx, py - cy) > PUSH_SUCCESS_FRAC * side


# -- built-in scenes ---------------------------------------------------------------


def _rect(cx: float, cy: float, w: float, h: float) -> tuple[Point, ...]:
    return ((cx - w / 2, cy - h / 2), (cx + w / 2, cy - h / 2), (cx + w / 2, cy + h / 2), (cx - w / 2, cy + h / 2))


def _panel(hinge: Point, length: float, thickness: float, direction: int) -> tuple[Point, ...]:
    hx, hy = hinge
    x_end = hx + direction * length
    xa, xb = sorted((hx, x_end))
    return _rect((xa + xb) / 2, hy, xb - xa, thickness)


def kitchen1(seed: int = 0) -> SceneConfig:
    door_hinge = (0.08, 0.50)
    return SceneConfig(
        name="kitchen1",
        seed=seed,
        objects=(
            ObjectSpec(
                id="door",
                kind="hinged_door",
                polygon=_panel(door_hinge, 0.32, 0.04, +1),
                intensity=150,
                hinge=door_hinge,
                angle_range=(0.0, 1.3),
                opening=1,
                handle=(0.37, 0.50),
                handle_radius=0.05,
            ),
            ObjectSpec(
                id="knife",
                kind="liftable_item",
                polygon=_rect(0.74, 0.22, 0.22, 0.035),
                intensity=200,
                grasp_point=(0.67, 0.22),
                grasp_radius=0.04,
            ),
            ObjectSpec(
                id="pan",
                kind="liftable_item",
                polygon=_rect(0.74, 0.72, 0.12, 0.10),
                intensity=110,
                grasp_point=(0.74, 0.76),
                grasp_radius=0.05,
            ),
        ),
    )


def kitchen2(seed: int = 0) -> SceneConfig:
    shelf_hinge = (0.08, 0.84)
    fridge_hinge = (0.92, 0.20)
    return SceneConfig(
        name="kitchen2",
        seed=seed,
        objects=(
            ObjectSpec(
                id="shelf",
                kind="hinged_door",
                polygon=_panel(shelf_hinge, 0.32, 0.04, +1),
                intensity=150,
                hinge=shelf_hinge,
                angle_range=(0.0, 1.3),
                opening=-1,
                handle=(0.37, 0.84),
                handle_radius=0.05,
            ),
            ObjectSpec(
                id="fridge",
                kind="hinged_door",
                polygon=_panel(fridge_hinge, 0.32, 0.04, -1),
                intensity=170,
                hinge=fridge_hinge,
                angle_range=(0.0, 1.3),
                opening=-1,
                handle=(0.63, 0.20),
                handle_radius=0.05,
            ),
            ObjectSpec(
                id="pot",
                kind="freestanding_item",
                polygon=_rect(0.45, 0.30, 0.14, 0.12),
                intensity=130,
            ),
        ),
    )


SCENES = {"kitchen1": kitchen1, "kitchen2": kitchen2}
TASK_SCENES = {
    "door": "kitchen1",
    "knife": "kitchen1",
    "pan": "kitchen1",
    "shelf": "kitchen2",
    "fridge": "kitchen2",
    "pot": "kitchen2",
}


def scene_for_task(task: str, seed: int = 0) -> SceneConfig:
    try:
        return SCENES[TASK_SCENES[task]](seed)
    except KeyError:
        raise ConfigError(f"unknown task {task!r}") from None


# -- scene files ----------------------------------------------------------------------

SCENE_FILE_VERSION = 1
_POINT_FIELDS = ("hinge", "handle", "grasp_point", "base")


def _tuplify(key: str, value):
    if key == "polygon":
        return tuple(tuple(float(c) for c in p) for p in value)
    if key in _POINT_FIELDS or key in ("angle_range", "workspace"):
        return tuple(float(c) for c in value)
    return value


def _build(cls, table: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(table) - known)
    if extra:
        raise ConfigError(f"unknown key(s) in {what}: {', '.join(extra)}")
    try:
        return cls(**{k: _tuplify(k, v) for k, v in table.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {what}: {exc}") from exc


def scene_from_dict(data: dict) -> SceneConfig:
    """Schema (version 1): top-level ``version``, optional ``name``, ``seed``,
    ``raster_size``, ``workspace = [x0, y0, x1, y1]``, an optional ``[arm]``
    table and an ``[[objects]]`` array whose keys are the ObjectSpec fields
    (points as ``[x, y]``, polygons as lists of points)."""
    data = dict(data)
    version = data.pop("version", None)
    if version != SCENE_FILE_VERSION:
        raise ConfigError(f"scene file version must be {SCENE_FILE_VERSION}, got {version!r}")
    objects = tuple(_build(ObjectSpec, o, f"object {o.get('id', i)!r}") for i, o in enumerate(data.pop("objects", [])))
    arm = _build(ArmSpec, data.pop("arm", {}), "[arm]")
    top = _build(SceneConfig, {k: v for k, v in data.items()}, "scene") if data else SceneConfig()
    return dataclasses.replace(top, objects=objects, arm=arm)


def load_scene(path: str | Path) -> SceneConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"scene file not found: {p}")
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return scene_from_dict(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return "[" + ", ".join(_toml_value(x) for x in v) + "]"


def dump_scene(scene: SceneConfig) -> str:
    """Scene file text that :func:`load_scene` reads back to an equal scene."""
    lines = [f"version = {SCENE_FILE_VERSION}"]
    for key in ("name", "seed", "raster_size", "workspace"):
        lines.append(f"{key} = {_toml_value(getattr(scene, key))}")
    lines.append("\n[arm]")
    for f in dataclasses.fields(ArmSpec):
        lines.append(f"{f.name} = {_toml_value(getattr(scene.arm, f.name))}")
    for o in scene.objects:
        lines.append("\n[[objects]]")
        for f in dataclasses.fields(ObjectSpec):
            v = getattr(o, f.name)
            if v is not None:
                lines.append(f"{f.name} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


class Env:
    """Stateful convenience wrapper around the pure functions."""

    def __init__(self, scene: SceneConfig, region: RegionDescriptor | str):
        self.scene = scene
        if isinstance(region, str):
            match = [r for r in regions(scene) if r.object_id == region]
            if not match:
                raise ConfigError(f"unknown region {region!r}")
            region = match[0]
        self.region = region
        self.state: WorldState | None = None
        self.steps_taken = 0

    def reset(self, seed: int) -> Observation:
        self.state = reset(self.scene, self.region, seed)
        return render(self.scene, self.state)

    def step(self, action: Sequence[float]) -> Observation:
        if self.state is None:
            raise RuntimeError("call reset() first")
        self.state = step(self.scene, self.state, action)
        self.steps_taken += 1
        return render(self.scene, self.state)

    def success(self, task_id: str) -> bool:
        return success(self.scene, self.state, task_id)
