"""BEV rasters, the task grid sampler, BEV-side augmentation and the BVG1 file format.

Conventions used throughout the package:

* ``data`` has shape ``(ny, nx, C)``; row ``i`` runs along +y, column ``j``
  along +x.
* Cell ``(i, j)`` is centred at ``(x_min + (j + 0.5) * cell, y_min + (i + 0.5) * cell)``.
* Sampling is bilinear between cell centres.  Neighbours outside the raster
  count as zero, and any query outside the metric extent returns zero.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxes import DetectionBox, wrap_angle
from .errors import ConfigError, ContractError, FormatError

# Fractional sample positions closer than this (in cells) to an integer are
# snapped, so coincident cell centres are copied rather than interpolated.
SNAP_TOL = 1e-9
# Tolerance (relative to the cell count) for the integral-extent check.
EXTENT_TOL = 1e-6


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell_size: float
    nx: int = field(init=False, compare=False, repr=False)
    ny: int = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        vals = (self.x_min, self.x_max, self.y_min, self.y_max, self.cell_size)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ConfigError(f"grid spec values must be finite: {vals}")
        if self.cell_size <= 0:
            raise ConfigError(f"cell_size must be positive, got {self.cell_size}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ConfigError(f"empty grid extent: {vals}")
        object.__setattr__(self, "nx", _cell_count(self.x_max - self.x_min, self.cell_size, "x"))
        object.__setattr__(self, "ny", _cell_count(self.y_max - self.y_min, self.cell_size, "y"))

    @property
    def shape(self) -> tuple[int, int]:
        """Raster shape as ``(ny, nx)``."""
        return (self.ny, self.nx)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx, dtype=np.float64) + 0.5) * self.cell_size

    def y_centers(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny, dtype=np.float64) + 0.5) * self.cell_size

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Metric ``(X, Y)`` arrays of shape ``(ny, nx)``."""
        return np.meshgrid(self.x_centers(), self.y_centers(), indexing="xy")

    def to_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Continuous ``(row, col)`` index of metric positions; integers are cell centres."""
        fj = (np.asarray(x, dtype=np.float64) - self.x_min) / self.cell_size - 0.5
        fi = (np.asarray(y, dtype=np.float64) - self.y_min) / self.cell_size - 0.5
        return fi, fj

    def to_text(self) -> str:
        return ",".join(repr(float(v)) for v in
                        (self.x_min, self.x_max, self.y_min, self.y_max, self.cell_size))

    @classmethod
    def from_text(cls, text: str) -> "GridSpec":
        """Parse ``x_min,x_max,y_min,y_max,cell_size``."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 5:
            raise ConfigError(f"grid spec needs 5 comma-separated values, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            raise ConfigError(f"bad grid spec {text!r}: {exc}") from None


def _cell_count(extent: float, cell: float, axis: str) -> int:
    ratio = extent / cell
    n = round(ratio)
    if n < 1 or abs(ratio - n) > EXTENT_TOL * max(1.0, n):
        raise ConfigError(f"{axis} extent {extent} is not an integer multiple of cell size {cell}")
    return int(n)


# Task grids used by the reference configuration.
DET_SPEC = GridSpec(-51.2, 51.2, -51.2, 51.2, 0.8)
MAP_SPEC = GridSpec(-30.0, 30.0, -15.0, 15.0, 0.15)
MOTION_SPEC = GridSpec(-50.0, 50.0, -50.0, 50.0, 0.5)


@dataclass(frozen=True, eq=False)
class BEVGrid:
    """An immutable ``(ny, nx, C)`` float32 raster on a :class:`GridSpec`."""

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[:2] != self.spec.shape:
            raise ContractError(
                f"grid data shape {data.shape} does not match spec (ny, nx)={self.spec.shape}")
        if data.shape[2] < 1:
            raise ContractError("grid needs at least one channel")
        data = np.array(data, dtype=np.float32, order="C", copy=True)
        if not np.isfinite(data).all():
            raise ContractError("grid values must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, spec: GridSpec, channels: int = 1) -> "BEVGrid":
        return cls(spec, np.zeros((spec.ny, spec.nx, channels), dtype=np.float32))

    def with_data(self, data: np.ndarray) -> "BEVGrid":
        return BEVGrid(self.spec, data)

    def equals(self, other: "BEVGrid") -> bool:
        """Bitwise equality of spec and payload."""
        return (self.spec == other.spec and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    def total(self) -> float:
        return float(self.data.sum(dtype=np.float64))


def _snap(f: np.ndarray) -> np.ndarray:
    r = np.rint(f)
    return np.where(np.abs(f - r) <= SNAP_TOL, r, f)


def bilinear(data: np.ndarray, fi: np.ndarray, fj: np.ndarray) -> np.ndarray:
    """Sample ``data`` (ny, nx, C) at continuous indices; returns ``fi.shape + (C,)`` float64.

    Queries outside ``[-0.5, n - 0.5)`` on either axis give 0.  Inside that
    band, neighbours beyond the outermost centres are zero-padded.  Integer
    positions copy the stored value exactly.
    """
    ny, nx, nc = data.shape
    fi = _snap(np.asarray(fi, dtype=np.float64))
    fj = _snap(np.asarray(fj, dtype=np.float64))
    inside = (fi >= -0.5) & (fi < ny - 0.5) & (fj >= -0.5) & (fj < nx - 0.5)
    fi = np.where(inside, fi, 0.0)
    fj = np.where(inside, fj, 0.0)
    i0 = np.floor(fi)
    j0 = np.floor(fj)
    wi = (fi - i0)[..., None]
    wj = (fj - j0)[..., None]
    i0 = i0.astype(np.intp) + 1
    j0 = j0.astype(np.intp) + 1

    padded = np.zeros((ny + 2, nx + 2, nc), dtype=np.float64)
    padded[1:-1, 1:-1] = data
    v00 = padded[i0, j0]
    v01 = padded[i0, j0 + 1]
    v10 = padded[i0 + 1, j0]
    v11 = padded[i0 + 1, j0 + 1]
    out = (1.0 - wi) * (1.0 - wj) * v00 + (1.0 - wi) * wj * v01 \
        + wi * (1.0 - wj) * v10 + wi * wj * v11
    # exact copy at cell centres (keeps -0.0 and avoids v + 0.0 rounding paths)
    on_center = (wi == 0.0) & (wj == 0.0)
    out = np.where(on_center, v00, out)
    out[~inside] = 0.0
    return out


def sample_metric(grid: BEVGrid, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinearly sample ``grid`` at metric positions; returns float64."""
    fi, fj = grid.spec.to_index(x, y)
    return bilinear(grid.data, fi, fj)


def grid_sample(src: BEVGrid, dst_spec: GridSpec) -> BEVGrid:
    """Crop/resample ``src`` onto ``dst_spec`` by bilinear interpolation at dst cell centres."""
    if not isinstance(dst_spec, GridSpec):
        raise ConfigError(f"dst_spec must be a GridSpec, got {type(dst_spec).__name__}")
    if dst_spec == src.spec:
        return src
    xs, ys = dst_spec.cell_centers()
    return BEVGrid(dst_spec, sample_metric(src, xs, ys).astype(np.float32))


def cos_sin(theta: float) -> tuple[float, float]:
    """cos/sin with exact values at quarter turns."""
    q = theta / (0.5 * math.pi)
    k = round(q)
    if abs(q - k) < 1e-12:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k % 4]
    return math.cos(theta), math.sin(theta)


@dataclass(frozen=True)
class BEVTransform:
    """Content rotation (about the grid centre), axis flips and isotropic scaling.

    The forward map applied to content is ``F @ (scale * R(rotation))`` where
    ``F`` negates x and/or y.
    """

    rotation: float = 0.0
    flip_x: bool = False
    flip_y: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if not math.isfinite(self.rotation):
            raise ConfigError("rotation must be finite")

    @property
    def is_identity(self) -> bool:
        return (cos_sin(self.rotation) == (1.0, 0.0) and not self.flip_x
                and not self.flip_y and self.scale == 1.0)

    def matrix(self) -> np.ndarray:
        c, s = cos_sin(self.rotation)
        m = np.array([[c, -s], [s, c]]) * self.scale
        flip = np.diag([-1.0 if self.flip_x else 1.0, -1.0 if self.flip_y else 1.0])
        return flip @ m

    def inverse_matrix(self) -> np.ndarray:
        c, s = cos_sin(self.rotation)
        r_inv = np.array([[c, s], [-s, c]]) / self.scale
        flip = np.diag([-1.0 if self.flip_x else 1.0, -1.0 if self.flip_y else 1.0])
        return r_inv @ flip

    def inverse(self) -> "BEVTransform":
        """Transform undoing this one."""
        if self.flip_x != self.flip_y:
            # R(-a) F = F R(a) for a single-axis flip, so the angle is kept
            return BEVTransform(self.rotation, self.flip_x, self.flip_y, 1.0 / self.scale)
        return BEVTransform(-self.rotation, self.flip_x, self.flip_y, 1.0 / self.scale)


def apply_bev_transform(obj, t: BEVTransform, spec: GridSpec | None = None):
    """Augment a :class:`BEVGrid` or a list of :class:`DetectionBox` consistently.

    Grids are warped backward (each output centre pulls from the inverse-mapped
    source position).  For boxes, ``spec`` supplies the rotation centre; the
    ego origin is used when it is omitted.
    """
    if isinstance(obj, BEVGrid):
        return _transform_grid(obj, t)
    center = spec.center if spec is not None else (0.0, 0.0)
    return transform_boxes(obj, t, center)


def _transform_grid(grid: BEVGrid, t: BEVTransform) -> BEVGrid:
    if t.is_identity:
        return grid
    cx, cy = grid.spec.center
    xs, ys = grid.spec.cell_centers()
    inv = t.inverse_matrix()
    dx, dy = xs - cx, ys - cy
    qx = inv[0, 0] * dx + inv[0, 1] * dy + cx
    qy = inv[1, 0] * dx + inv[1, 1] * dy + cy
    return grid.with_data(sample_metric(grid, qx, qy).astype(np.float32))


def transform_boxes(boxes: Sequence[DetectionBox], t: BEVTransform,
                    center: tuple[float, float] = (0.0, 0.0)) -> list[DetectionBox]:
    m = t.matrix()
    cx, cy = center
    out = []
    for b in boxes:
        dx, dy = b.x - cx, b.y - cy
        yaw = b.yaw + t.rotation
        if t.flip_x:
            yaw = math.pi - yaw
        if t.flip_y:
            yaw = -yaw
        out.append(replace(
            b,
            x=m[0, 0] * dx + m[0, 1] * dy + cx,
            y=m[1, 0] * dx + m[1, 1] * dy + cy,
            z=b.z * t.scale,
            w=b.w * t.scale, l=b.l * t.scale, h=b.h * t.scale,
            yaw=wrap_angle(yaw),
            vx=m[0, 0] * b.vx + m[0, 1] * b.vy,
            vy=m[1, 0] * b.vx + m[1, 1] * b.vy,
        ))
    return out


# --- BVG1 file format -------------------------------------------------------

MAGIC = b"BVG1"
HEADER = struct.Struct("<4sIII")
FORMAT_VERSION = "BVG1"
# Refuse headers whose payload would exceed this many values (16 GiB of float32).
MAX_VALUES = 1 << 32


def grid_to_bytes(grid: BEVGrid) -> bytes:
    ny, nx, nc = grid.data.shape
    return HEADER.pack(MAGIC, ny, nx, nc) + grid.data.astype("<f4", copy=False).tobytes(order="C")


def grid_from_bytes(buf: bytes, spec: GridSpec | None = None) -> BEVGrid:
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} bytes")
    magic, ny, nx, nc = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if ny == 0 or nx == 0 or nc == 0:
        raise FormatError(f"zero dimension in header: ({ny}, {nx}, {nc})")
    count = ny * nx * nc
    if count > MAX_VALUES:
        raise FormatError(f"dimension overflow: {ny}x{nx}x{nc} values")
    payload = len(buf) - HEADER.size
    if payload != 4 * count:
        kind = "truncated" if payload < 4 * count else "oversized"
        raise FormatError(f"{kind} payload: expected {4 * count} bytes, found {payload}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=HEADER.size).reshape(ny, nx, nc)
    if not np.isfinite(data).all():
        raise FormatError("payload contains non-finite values")
    if spec is None:
        spec = GridSpec(0.0, float(nx), 0.0, float(ny), 1.0)
    elif spec.shape != (ny, nx):
        raise FormatError(f"file holds {ny}x{nx} cells but spec expects {spec.ny}x{spec.nx}")
    return BEVGrid(spec, data.astype(np.float32))


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a temporary sibling file and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid(grid: BEVGrid, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, grid_to_bytes(grid))


def read_grid(path: str | os.PathLike, spec: GridSpec | None = None) -> BEVGrid:
    """Read a BVG1 file.

    The format stores no metric extent; pass ``spec`` to attach one (its
    shape is checked), otherwise a unit-cell spec anchored at the origin is used.
    """
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read(), spec)
