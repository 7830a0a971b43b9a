"""BEV detection boxes shared by augmentation, synthesis and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class DetectionBox:
    """A 3D box described in a BEV (ego) frame.

    ``l`` runs along the heading ``yaw`` (measured from +x towards +y), ``w``
    across it.  ``instance_id`` is only meaningful for ground truth, and
    ``sample`` keys boxes to a frame so that matching never crosses frames.
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    label: str = "car"
    score: float = 1.0
    instance_id: int = 0
    sample: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ConfigError(f"box sizes must be positive, got w={self.w} l={self.l} h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ConfigError(f"box score must lie in [0, 1], got {self.score}")

    @property
    def center_xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def with_score(self, score: float) -> "DetectionBox":
        return replace(self, score=score)

    def corners_xy(self) -> np.ndarray:
        """Footprint corners as a (4, 2) array, counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.l, 0.5 * self.w
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])


def bev_distance(a: DetectionBox, b: DetectionBox) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)
