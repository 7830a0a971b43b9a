"""Camera model, frustum generation, categorical-depth lifting and pillar pooling.

Camera frame: x right, y down, z along the optical axis (right-handed).
Extrinsics map camera coordinates into the ego frame (x forward, y left, z up).
Depth means distance along the optical axis, not along the ray.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .grid import BEVGrid, GridSpec

DEFAULT_STRIDE = 16
DEFAULT_Z_BOUNDS = (-5.0, 3.0)


def worker_count() -> int:
    """Worker cap from ``BEVKIT_THREADS`` (default 1)."""
    raw = os.environ.get("BEVKIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"BEVKIT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"BEVKIT_THREADS must be >= 1, got {n}")
    return n


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ConfigError("extrinsics need a 3x3 rotation and a 3-vector translation")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
            raise ConfigError("camera rotation is not orthonormal within 1e-6")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)


def yaw_camera(yaw: float, fx: float, fy: float, cx: float, cy: float,
               position=(0.0, 0.0, 1.5)) -> Camera:
    """Level camera whose optical axis points along ``yaw`` in the ego ground plane."""
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[s, 0.0, c],
                    [-c, 0.0, s],
                    [0.0, -1.0, 0.0]])
    return Camera(fx, fy, cx, cy, rot, np.asarray(position, dtype=np.float64))


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise ConfigError("camera rig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)


def surround_rig(image_width: int = 704, image_height: int = 256, fx: float = 560.0,
                 fy: float | None = None, height: float = 1.5) -> CameraRig:
    """Six level cameras spaced like a typical surround-view car rig."""
    yaws = [0.0, math.radians(-55), math.radians(55), math.radians(-110),
            math.radians(110), math.pi]
    fy = fx if fy is None else fy
    return CameraRig(tuple(
        yaw_camera(y, fx, fy, image_width / 2.0, image_height / 2.0, (0.0, 0.0, height))
        for y in yaws))


@dataclass(frozen=True)
class DepthBins:
    """``count`` uniformly spaced depths ``d_min + k * (d_max - d_min) / count``."""

    d_min: float = 1.0
    d_max: float = 60.0
    count: int = 59

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise ConfigError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if int(self.count) != self.count or self.count < 1:
            raise ConfigError(f"depth bin count must be a positive integer, got {self.count}")

    def values(self) -> np.ndarray:
        step = (self.d_max - self.d_min) / self.count
        return self.d_min + np.arange(self.count, dtype=np.float64) * step


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-camera features ``(M, H', W', C)`` and depth distributions ``(M, H', W', D)``.

    Depth distributions are renormalised to sum to one per pixel on construction.
    """

    features: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        depth = np.array(self.depth, dtype=np.float64)
        if feats.ndim != 4 or depth.ndim != 4:
            raise ContractError("features and depth must be 4-D (M, H', W', *)")
        if feats.shape[:3] != depth.shape[:3]:
            raise ContractError(f"feature dims {feats.shape[:3]} != depth dims {depth.shape[:3]}")
        if not (np.isfinite(feats).all() and np.isfinite(depth).all()):
            raise ContractError("feature map values must be finite")
        if (depth < 0).any():
            raise ContractError("depth distribution has negative entries")
        # left-to-right sum so the normalisation is reproducible by a scalar loop
        total = np.cumsum(depth, axis=-1)[..., -1:]
        if (total <= 0).any():
            raise ContractError("depth distribution sums to zero for some pixel")
        depth = depth / total
        feats.setflags(write=False)
        depth.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "depth", depth)

    @property
    def hw(self) -> tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]


@dataclass(frozen=True, eq=False)
class LiftedCloud:
    """Points in (camera, row, col, depth-bin) order.

    ``positions`` (P, 3), ``weights`` (P,), ``features`` (P, C).
    """

    positions: np.ndarray
    weights: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]

    def permuted(self, order: np.ndarray) -> "LiftedCloud":
        return LiftedCloud(self.positions[order], self.weights[order], self.features[order])


def build_frustum(hw: tuple[int, int], bins: DepthBins, rig: CameraRig,
                  stride: float = DEFAULT_STRIDE) -> np.ndarray:
    """Ego-frame points for every camera, feature pixel and depth bin: ``(M, H', W', D, 3)``.

    Feature pixel ``(r, c)`` sits at image coordinate ``((c + 0.5) * stride, (r + 0.5) * stride)``.
    """
    h, w = hw
    depths = bins.values()[None, None, :]
    u = ((np.arange(w, dtype=np.float64) + 0.5) * stride)[None, :, None]
    v = ((np.arange(h, dtype=np.float64) + 0.5) * stride)[:, None, None]
    out = np.empty((len(rig), h, w, bins.count, 3), dtype=np.float64)
    for m, cam in enumerate(rig.cameras):
        xc = (u - cam.cx) / cam.fx * depths
        yc = (v - cam.cy) / cam.fy * depths
        xc, yc, zc = np.broadcast_arrays(xc, yc, depths)
        r, t = cam.rotation, cam.translation
        for k in range(3):
            out[m, ..., k] = r[k, 0] * xc + r[k, 1] * yc + r[k, 2] * zc + t[k]
    return out


def lift(features: FeatureMap, bins: DepthBins, rig: CameraRig,
         stride: float = DEFAULT_STRIDE) -> LiftedCloud:
    """Outer product of pixel features and depth probabilities, placed on the frustum."""
    m, h, w, _ = features.features.shape
    if features.depth.shape[-1] != bins.count:
        raise ContractError(f"depth distribution has {features.depth.shape[-1]} bins, "
                            f"DepthBins has {bins.count}")
    if m != len(rig):
        raise ContractError(f"feature map has {m} cameras, rig has {len(rig)}")
    positions = build_frustum((h, w), bins, rig, stride)
    weights = features.depth
    lifted = features.features[:, :, :, None, :] * weights[..., None]
    c = features.features.shape[-1]
    return LiftedCloud(positions.reshape(-1, 3), weights.reshape(-1), lifted.reshape(-1, c))


def point_cells(positions: np.ndarray, spec: GridSpec,
                z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS) -> np.ndarray:
    """Flat cell index per point, or -1 when dropped.

    The extent is half-open: ``x_min <= x < x_max`` (same for y and z).
    """
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    keep = ((x >= spec.x_min) & (x < spec.x_max) & (y >= spec.y_min) & (y < spec.y_max)
            & (z >= z_bounds[0]) & (z < z_bounds[1]))
    col = np.minimum(np.floor((x - spec.x_min) / spec.cell_size), spec.nx - 1)
    row = np.minimum(np.floor((y - spec.y_min) / spec.cell_size), spec.ny - 1)
    cells = np.where(keep, row * spec.nx + col, -1)
    return cells.astype(np.int64)


def _pool_channel(cells: np.ndarray, values: np.ndarray, ncells: int) -> np.ndarray:
    nz = values != 0.0
    cells, values = cells[nz], values[nz]
    # canonical order: by cell, then ascending value, so any permutation of the
    # cloud yields the same sequential float64 sum
    order = np.lexsort((values, cells))
    acc = np.zeros(ncells, dtype=np.float64)
    np.add.at(acc, cells[order], values[order])
    return acc


def pillar_pool(cloud: LiftedCloud, spec: GridSpec,
                z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS,
                threads: int | None = None) -> BEVGrid:
    """Sum-pool point features into BEV cells (z collapsed).

    Within each cell and channel, contributions are added in float64 in
    ascending value order and the result is rounded to float32, so output is
    bitwise reproducible and independent of point order and thread count.
    """
    if not (np.isfinite(cloud.positions).all() and np.isfinite(cloud.features).all()):
        raise ContractError("point cloud must be finite")
    nchan = cloud.features.shape[1]
    ncells = spec.nx * spec.ny
    cells = point_cells(cloud.positions, spec, z_bounds)
    keep = cells >= 0
    cells = cells[keep]
    feats = cloud.features[keep]

    threads = worker_count() if threads is None else threads
    columns = [np.ascontiguousarray(feats[:, c]) for c in range(nchan)]
    if threads > 1 and nchan > 1:
        with ThreadPoolExecutor(max_workers=min(threads, nchan)) as pool:
            sums = list(pool.map(lambda col: _pool_channel(cells, col, ncells), columns))
    else:
        sums = [_pool_channel(cells, col, ncells) for col in columns]
    out = np.stack(sums, axis=-1) if sums else np.zeros((ncells, 0))
    return BEVGrid(spec, out.reshape(spec.ny, spec.nx, nchan).astype(np.float32))
