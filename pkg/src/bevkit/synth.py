"""Deterministic synthetic scenes with mutually consistent ground truth.

All agent geometry lives in the present ego frame (timestamp ``n_past - 1``),
which doubles as the world frame.  Instance rasters for every timestamp are
drawn in that frame on the motion grid, so ego motion never disturbs the
future-state oracles.  ``poses[t]`` maps ego coordinates at timestamp ``t``
into the present frame.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .boxes import DetectionBox, wrap_angle
from .errors import ConfigError, ContractError, FormatError, GenerationError
from .future import FlowField, StepFn, sequence_flow_step
from .grid import (DET_SPEC, MAP_SPEC, MOTION_SPEC, BEVGrid, GridSpec, _snap,
                   atomic_write_bytes, read_grid, write_grid)
from .temporal import EgoPose

MAP_CLASSES = ("divider", "ped_crossing", "boundary")

# class -> (width, length, height) ranges in metres
AGENT_SIZES = {
    "car": ((1.7, 2.1), (4.0, 5.0), (1.4, 1.8)),
    "pedestrian": ((0.5, 0.8), (0.5, 0.8), (1.6, 1.9)),
    "truck": ((2.3, 2.6), (6.0, 8.0), (2.8, 3.4)),
}

PEDESTRIAN_MAX_SPEED = 2.0

InstanceSegFrame = np.ndarray


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_past: int = 3
    horizon: int = 4
    period: float = 0.5
    agents: int = 8
    classes: tuple[str, ...] = ("car", "pedestrian", "truck")
    speed_range: tuple[float, float] = (0.0, 8.0)
    yaw_rate_range: tuple[float, float] = (0.0, 0.0)
    ego_speed_range: tuple[float, float] = (0.0, 10.0)
    ego_turn_rate_range: tuple[float, float] = (-0.2, 0.2)
    integer_motion: bool = True
    lane_width: float = 3.5
    lanes: int = 4
    crossing_x: float = 12.0
    crossing_width: float = 4.0
    boundary_margin: float = 1.0
    det_spec: GridSpec = DET_SPEC
    map_spec: GridSpec = MAP_SPEC
    motion_spec: GridSpec = MOTION_SPEC
    max_attempts: int = 500

    def __post_init__(self):
        if self.n_past < 1 or self.horizon < 1:
            raise ConfigError(f"need n_past >= 1 and horizon >= 1, got {self.n_past}, {self.horizon}")
        if not self.period > 0:
            raise ConfigError(f"frame period must be positive, got {self.period}")
        if self.agents < 0:
            raise ConfigError("agent count must be non-negative")
        unknown = set(self.classes) - set(AGENT_SIZES)
        if unknown or not self.classes:
            raise ConfigError(f"unknown agent classes: {sorted(unknown)}")
        for name in ("speed_range", "yaw_rate_range", "ego_speed_range", "ego_turn_rate_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is reversed: {lo} > {hi}")
        if self.integer_motion and self.yaw_rate_range != (0.0, 0.0):
            raise ConfigError("integer_motion requires a zero yaw_rate_range")

    @property
    def frames(self) -> int:
        return self.n_past + self.horizon

    @property
    def present(self) -> int:
        return self.n_past - 1

    def to_items(self) -> list[tuple[str, str]]:
        items = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, GridSpec):
                items.append((f.name, v.to_text()))
            elif isinstance(v, tuple):
                items.append((f.name, ",".join(str(x) if isinstance(x, str) else repr(float(x))
                                               for x in v)))
            else:
                items.append((f.name, repr(v)))
        return items

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "SceneConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name].strip()
            default = getattr(cls, f.name, None)
            try:
                if f.name.endswith("_spec"):
                    kwargs[f.name] = GridSpec.from_text(raw)
                elif f.name == "classes":
                    kwargs[f.name] = tuple(c.strip() for c in raw.split(",") if c.strip())
                elif f.name.endswith("_range"):
                    lo, hi = (float(x) for x in raw.split(","))
                    kwargs[f.name] = (lo, hi)
                elif isinstance(default, bool):
                    if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(f"not a boolean: {raw}")
                    kwargs[f.name] = raw.lower() in ("true", "1", "yes")
                elif isinstance(default, int):
                    kwargs[f.name] = int(raw)
                else:
                    kwargs[f.name] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {f.name}: {raw!r} ({exc})") from None
        unknown = set(items) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class Agent:
    instance_id: int
    label: str
    w: float
    l: float
    h: float
    yaw: float
    speed: float
    yaw_rate: float
    # present-frame position, and integer per-frame displacement in motion cells
    x: float
    y: float
    step_cells: tuple[int, int] | None = None
    velocity: tuple[float, float] | None = None

    def state(self, tau: float, k: int, spec: GridSpec) -> tuple[float, float, float, float, float]:
        """(x, y, yaw, vx, vy) at time ``tau`` seconds (``k`` frames) from the present."""
        if self.step_cells is not None:
            dj, di = self.step_cells
            j, i = spec.to_index(self.x, self.y)[::-1]
            j = float(_snap(np.asarray(j))) + dj * k
            i = float(_snap(np.asarray(i))) + di * k
            x = spec.x_min + (j + 0.5) * spec.cell_size
            y = spec.y_min + (i + 0.5) * spec.cell_size
            return x, y, self.yaw, self.velocity[0], self.velocity[1]
        if self.yaw_rate == 0.0:
            c, s = math.cos(self.yaw), math.sin(self.yaw)
            return (self.x + self.speed * c * tau, self.y + self.speed * s * tau, self.yaw,
                    self.speed * c, self.speed * s)
        heading = self.yaw + self.yaw_rate * tau
        r = self.speed / self.yaw_rate
        x = self.x + r * (math.sin(heading) - math.sin(self.yaw))
        y = self.y - r * (math.cos(heading) - math.cos(self.yaw))
        return x, y, wrap_angle(heading), self.speed * math.cos(heading), self.speed * math.sin(heading)

    @property
    def radius(self) -> float:
        return 0.5 * math.hypot(self.w, self.l)


@dataclass
class Scene:
    config: SceneConfig
    boxes: list[list[DetectionBox]]
    poses: list[EgoPose]
    instances: list[np.ndarray]
    map_raster: np.ndarray
    _flows: list[FlowField] | None = field(default=None, repr=False)

    @property
    def present(self) -> int:
        return self.config.present

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def future_instances(self) -> list[np.ndarray]:
        """Present frame followed by the ``T`` future frames."""
        return self.instances[self.present:]

    def flows(self) -> list[FlowField]:
        if self._flows is None:
            self._flows = [gt_flow(self, k) for k in range(self.horizon)]
        return self._flows

    def boxes_in_own_frame(self, t: int) -> list[DetectionBox]:
        """Boxes at timestamp ``t`` expressed in that timestamp's ego frame."""
        pose = self.poses[t]
        out = []
        for b in self.boxes[t]:
            x, y = pose.apply_inverse(b.x, b.y)
            vx, vy = EgoPose(pose.theta).apply_inverse(b.vx, b.vy)
            out.append(replace(b, x=float(x), y=float(y), vx=float(vx), vy=float(vy),
                               yaw=wrap_angle(b.yaw - pose.theta)))
        return out

    def state_grid(self, t: int) -> BEVGrid:
        return BEVGrid(self.config.motion_spec, self.instances[t].astype(np.float32))

    def map_grid(self) -> BEVGrid:
        return BEVGrid(self.config.map_spec, self.map_raster.astype(np.float32))


# --- rasterisation ----------------------------------------------------------

def rasterize_boxes(boxes: Sequence[DetectionBox], spec: GridSpec) -> InstanceSegFrame:
    """Paint each box's ``instance_id`` into cells whose centres fall in its footprint.

    Membership is half-open in the box frame (``-l/2 <= u < l/2``,
    ``-w/2 <= v < w/2``) so a cell-aligned box covers exactly area / cell^2
    cells.  Later boxes overwrite earlier ones.
    """
    out = np.zeros(spec.shape, dtype=np.int32)
    cs = spec.cell_size
    for b in boxes:
        fi, fj = spec.to_index(b.x, b.y)
        ci, cj = float(_snap(fi)), float(_snap(fj))
        half_l, half_w = 0.5 * b.l / cs, 0.5 * b.w / cs
        reach = math.hypot(half_l, half_w) + 1.0
        i_lo, i_hi = max(0, math.floor(ci - reach)), min(spec.ny - 1, math.ceil(ci + reach))
        j_lo, j_hi = max(0, math.floor(cj - reach)), min(spec.nx - 1, math.ceil(cj + reach))
        if i_lo > i_hi or j_lo > j_hi:
            continue
        di = np.arange(i_lo, i_hi + 1, dtype=np.float64)[:, None] - ci
        dj = np.arange(j_lo, j_hi + 1, dtype=np.float64)[None, :] - cj
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        u = dj * c + di * s
        v = di * c - dj * s
        inside = (u >= -half_l) & (u < half_l) & (v >= -half_w) & (v < half_w)
        window = out[i_lo:i_hi + 1, j_lo:j_hi + 1]
        window[inside] = b.instance_id
    return out


def _draw_polyline(mask: np.ndarray, spec: GridSpec, pts: np.ndarray) -> None:
    """Mark every cell touched by a densely sampled polyline."""
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / (0.25 * spec.cell_size))) + 1)
        xs = np.linspace(x0, x1, n)
        ys = np.linspace(y0, y1, n)
        ok = (xs >= spec.x_min) & (xs < spec.x_max) & (ys >= spec.y_min) & (ys < spec.y_max)
        cols = np.floor((xs[ok] - spec.x_min) / spec.cell_size).astype(int)
        rows = np.floor((ys[ok] - spec.y_min) / spec.cell_size).astype(int)
        mask[np.minimum(rows, spec.ny - 1), np.minimum(cols, spec.nx - 1)] = True


def render_map(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """(ny, nx, 3) uint8 map raster: dividers, pedestrian crossings, boundaries."""
    spec = config.map_spec
    out = np.zeros(spec.shape + (len(MAP_CLASSES),), dtype=np.uint8)
    divider = np.zeros(spec.shape, dtype=bool)
    xs = np.arange(spec.x_min, spec.x_max + 10.0, 10.0)
    half = config.lanes / 2.0
    for k in range(1, config.lanes):
        y = (k - half) * config.lane_width
        wobble = rng.uniform(-0.2, 0.2, size=xs.size)
        _draw_polyline(divider, spec, np.stack([xs, y + wobble], axis=1))
    out[..., 0] = divider

    xx, yy = spec.cell_centers()
    road = half * config.lane_width
    crossing = ((np.abs(xx - config.crossing_x) < 0.5 * config.crossing_width)
                & (np.abs(yy) < road))
    out[..., 1] = crossing

    boundary = np.zeros(spec.shape, dtype=bool)
    m = config.boundary_margin
    x0, x1 = spec.x_min + m, spec.x_max - m
    y0, y1 = spec.y_min + m, spec.y_max - m
    ring = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])
    _draw_polyline(boundary, spec, ring)
    out[..., 2] = boundary
    return out


# --- generation ---------------------------------------------------------------

def _ego_pose(speed: float, turn_rate: float, tau: float) -> EgoPose:
    heading = turn_rate * tau
    if turn_rate == 0.0:
        return EgoPose(0.0, speed * tau, 0.0)
    r = speed / turn_rate
    return EgoPose(heading, r * math.sin(heading), r * (1.0 - math.cos(heading)))


def _footprint_inside(agent: Agent, spec: GridSpec) -> bool:
    box = DetectionBox(agent.x, agent.y, 0.0, agent.w, agent.l, agent.h, agent.yaw)
    c = box.corners_xy()
    return bool((c[:, 0] >= spec.x_min).all() and (c[:, 0] < spec.x_max).all()
                and (c[:, 1] >= spec.y_min).all() and (c[:, 1] < spec.y_max).all())


def _sample_agent(config: SceneConfig, rng: np.random.Generator, instance_id: int) -> Agent:
    spec = config.motion_spec
    label = config.classes[int(rng.integers(len(config.classes)))]
    (w0, w1), (l0, l1), (h0, h1) = AGENT_SIZES[label]
    w, l, h = rng.uniform(w0, w1), rng.uniform(l0, l1), rng.uniform(h0, h1)
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(*config.speed_range)
    if label == "pedestrian":
        speed = min(speed, PEDESTRIAN_MAX_SPEED)
    yaw_rate = rng.uniform(*config.yaw_rate_range)
    x = rng.uniform(spec.x_min, spec.x_max)
    y = rng.uniform(spec.y_min, spec.y_max)
    if not config.integer_motion:
        return Agent(instance_id, label, w, l, h, heading, speed, yaw_rate, x, y)

    cs = spec.cell_size
    j = min(spec.nx - 1, int((x - spec.x_min) // cs))
    i = min(spec.ny - 1, int((y - spec.y_min) // cs))
    x = spec.x_min + (j + 0.5) * cs
    y = spec.y_min + (i + 0.5) * cs
    step = speed * config.period / cs
    dj = int(round(step * math.cos(heading)))
    di = int(round(step * math.sin(heading)))
    vx, vy = dj * cs / config.period, di * cs / config.period
    speed = math.hypot(vx, vy)
    yaw = math.atan2(vy, vx) if speed > 0 else heading
    return Agent(instance_id, label, w, l, h, yaw, speed, 0.0, x, y,
                 step_cells=(dj, di), velocity=(vx, vy))


def _collides(a: Agent, others: list[Agent], config: SceneConfig) -> bool:
    margin = config.motion_spec.cell_size
    for t in range(config.frames):
        k = t - config.present
        tau = k * config.period
        ax, ay, *_ = a.state(tau, k, config.motion_spec)
        for b in others:
            bx, by, *_ = b.state(tau, k, config.motion_spec)
            if math.hypot(ax - bx, ay - by) < a.radius + b.radius + margin:
                return True
    return False


def generate(config: SceneConfig) -> Scene:
    """Build a scene; the same config (seed included) always yields identical output."""
    # independent streams so that e.g. the agent count never changes the map
    agent_seq, ego_seq, map_seq = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.default_rng(agent_seq)
    agents: list[Agent] = []
    attempts = 0
    while len(agents) < config.agents:
        attempts += 1
        if attempts > config.max_attempts * max(1, config.agents):
            raise GenerationError(
                f"could not place {config.agents} non-overlapping agents inside the motion grid "
                f"after {attempts - 1} attempts (placed {len(agents)})")
        cand = _sample_agent(config, rng, len(agents) + 1)
        if _footprint_inside(cand, config.motion_spec) and not _collides(cand, agents, config):
            agents.append(cand)

    ego_rng = np.random.default_rng(ego_seq)
    ego_speed = ego_rng.uniform(*config.ego_speed_range)
    ego_turn = ego_rng.uniform(*config.ego_turn_rate_range)
    map_raster = render_map(config, np.random.default_rng(map_seq))

    boxes, poses, instances = [], [], []
    for t in range(config.frames):
        k = t - config.present
        tau = k * config.period
        frame = []
        for a in agents:
            x, y, yaw, vx, vy = a.state(tau, k, config.motion_spec)
            frame.append(DetectionBox(x, y, 0.5 * a.h, a.w, a.l, a.h, yaw, vx, vy, a.label,
                                      1.0, a.instance_id, t))
        boxes.append(frame)
        poses.append(_ego_pose(ego_speed, ego_turn, tau))
        instances.append(rasterize_boxes(frame, config.motion_spec))
    return Scene(config, boxes, poses, instances, map_raster)


# --- ground-truth flow --------------------------------------------------------

def gt_flow(scene: Scene, k: int) -> FlowField:
    """Backward flow taking the instance raster at present+k to present+k+1.

    Cells of each agent's destination footprint carry the agent's per-step
    displacement in cells.  Background cells carry zero flow, except cells the
    agent just vacated: those point at the nearest background cell of the
    source raster so that warping reproduces the next raster.
    """
    if not 0 <= k < scene.horizon:
        raise ContractError(f"flow step {k} outside [0, {scene.horizon})")
    spec = scene.config.motion_spec
    t = scene.present + k
    src, dst = scene.instances[t], scene.instances[t + 1]
    flow = np.zeros(spec.shape + (2,), dtype=np.float32)

    before = {b.instance_id: b for b in scene.boxes[t]}
    for b in scene.boxes[t + 1]:
        a = before.get(b.instance_id)
        if a is None:
            continue
        dx = (b.x - a.x) / spec.cell_size
        dy = (b.y - a.y) / spec.cell_size
        if scene.config.integer_motion:
            dx, dy = round(dx), round(dy)
        mask = dst == b.instance_id
        flow[mask, 0] = dx
        flow[mask, 1] = dy

    vacated = (dst == 0) & (src != 0)
    if vacated.any() and (src == 0).any():
        _, (ri, rj) = ndimage.distance_transform_edt(src != 0, return_indices=True)
        ii, jj = np.nonzero(vacated)
        flow[ii, jj, 0] = jj - rj[ii, jj]
        flow[ii, jj, 1] = ii - ri[ii, jj]
    return FlowField(flow)


def gt_flow_step(scene: Scene) -> StepFn:
    return sequence_flow_step(scene.flows())


# --- scene directories ----------------------------------------------------------

SCENE_FILE = "scene.txt"
MAP_FILE = "map.bvg"
BOX_FIELDS = ("t", "id", "label", "x", "y", "z", "w", "l", "h", "yaw", "vx", "vy", "score")


def instance_file(t: int) -> str:
    return f"instances_{t:02d}.bvg"


def scene_text(scene: Scene, manifest: Sequence[tuple[str, str]] = ()) -> str:
    """Line-oriented metadata: ``manifest`` / ``config`` / ``pose`` / ``box`` / ``raster`` records."""
    lines = ["# bevkit scene v1",
             "# pose <t> <theta> <tx> <ty>   (maps ego frame at t into the present frame)",
             "# box " + " ".join(f"<{f}>" for f in BOX_FIELDS) + "   (present ego frame)"]
    lines += [f"manifest {k} {v}" for k, v in manifest]
    lines += [f"config {k} {v}" for k, v in scene.config.to_items()]
    for t, p in enumerate(scene.poses):
        lines.append(f"pose {t} {p.theta!r} {p.tx!r} {p.ty!r}")
    for t, frame in enumerate(scene.boxes):
        for b in frame:
            lines.append(" ".join(["box", str(t), str(b.instance_id), b.label] +
                                  [repr(float(v)) for v in
                                   (b.x, b.y, b.z, b.w, b.l, b.h, b.yaw, b.vx, b.vy, b.score)]))
    for t in range(len(scene.instances)):
        lines.append(f"raster instances {t} {instance_file(t)}")
    lines.append(f"raster map - {MAP_FILE}")
    return "\n".join(lines) + "\n"


def write_scene(scene: Scene, directory: str | os.PathLike,
                manifest: Sequence[tuple[str, str]] = ()) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for t in range(len(scene.instances)):
        path = directory / instance_file(t)
        write_grid(scene.state_grid(t), path)
        written.append(path)
    write_grid(scene.map_grid(), directory / MAP_FILE)
    written.append(directory / MAP_FILE)
    atomic_write_bytes(directory / SCENE_FILE, scene_text(scene, manifest).encode())
    written.append(directory / SCENE_FILE)
    return written


def read_scene(directory: str | os.PathLike) -> Scene:
    directory = Path(directory)
    meta = directory / SCENE_FILE
    if not meta.is_file():
        raise FormatError(f"{meta} not found")
    items: dict[str, str] = {}
    poses: dict[int, EgoPose] = {}
    boxes: dict[int, list[DetectionBox]] = {}
    for lineno, line in enumerate(meta.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        kind, _, rest = line.partition(" ")
        try:
            if kind == "config":
                key, _, value = rest.partition(" ")
                items[key] = value
            elif kind == "pose":
                t, theta, tx, ty = rest.split()
                poses[int(t)] = EgoPose(float(theta), float(tx), float(ty))
            elif kind == "box":
                parts = rest.split()
                if len(parts) != len(BOX_FIELDS):
                    raise ValueError(f"expected {len(BOX_FIELDS)} fields")
                t, iid, label = int(parts[0]), int(parts[1]), parts[2]
                x, y, z, w, l, h, yaw, vx, vy, score = (float(v) for v in parts[3:])
                boxes.setdefault(t, []).append(
                    DetectionBox(x, y, z, w, l, h, yaw, vx, vy, label, score, iid, t))
            elif kind not in ("raster", "manifest"):
                raise ValueError(f"unknown record {kind!r}")
        except (ValueError, ConfigError) as exc:
            raise FormatError(f"{meta}:{lineno}: {exc}") from None
    config = SceneConfig.from_items(items)
    if sorted(poses) != list(range(config.frames)):
        raise FormatError(f"{meta}: expected poses for timestamps 0..{config.frames - 1}")
    instances = [np.rint(read_grid(directory / instance_file(t), config.motion_spec).data[..., 0])
                 .astype(np.int32) for t in range(config.frames)]
    map_grid = read_grid(directory / MAP_FILE, config.map_spec)
    return Scene(config, [boxes.get(t, []) for t in range(config.frames)],
                 [poses[t] for t in range(config.frames)], instances,
                 map_grid.data.astype(np.uint8))
