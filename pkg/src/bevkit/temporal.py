"""Ego-motion alignment of past BEV grids into the present frame."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import wrap_angle
from .errors import ConfigError, ContractError
from .grid import BEVGrid, cos_sin, sample_metric


@dataclass(frozen=True)
class EgoPose:
    """Planar rigid motion ``p_present = R(theta) @ p_past + (tx, ty)``."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.theta, self.tx, self.ty)):
            raise ConfigError(f"ego pose must be finite: {self}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def is_identity(self) -> bool:
        return self.theta == 0.0 and self.tx == 0.0 and self.ty == 0.0

    def apply(self, x, y):
        c, s = cos_sin(self.theta)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return c * x - s * y + self.tx, s * x + c * y + self.ty

    def apply_inverse(self, x, y):
        c, s = cos_sin(self.theta)
        dx = np.asarray(x, dtype=np.float64) - self.tx
        dy = np.asarray(y, dtype=np.float64) - self.ty
        return c * dx + s * dy, -s * dx + c * dy

    def inverse(self) -> "EgoPose":
        x, y = self.apply_inverse(0.0, 0.0)
        return EgoPose(-self.theta, float(x), float(y))

    def then(self, other: "EgoPose") -> "EgoPose":
        """Motion applying ``self`` first and ``other`` second (``other ∘ self``)."""
        x, y = other.apply(self.tx, self.ty)
        return EgoPose(self.theta + other.theta, float(x), float(y))

    def to_tuple(self) -> tuple[float, float, float]:
        return (self.theta, self.tx, self.ty)


IDENTITY = EgoPose()


def compose(second: EgoPose, first: EgoPose) -> EgoPose:
    """``second ∘ first``."""
    return first.then(second)


def align(past: BEVGrid, motion: EgoPose) -> BEVGrid:
    """Warp ``past`` into the present frame by backward bilinear sampling, zero fill."""
    if motion.is_identity:
        return past
    xs, ys = past.spec.cell_centers()
    qx, qy = motion.apply_inverse(xs, ys)
    return past.with_data(sample_metric(past, qx, qy).astype(np.float32))


def align_sequence(grids: Sequence[BEVGrid], motions: Sequence[EgoPose]) -> list[BEVGrid]:
    """Align ``grids`` (oldest first, present last) with one pre-composed motion per past frame."""
    grids = list(grids)
    if not grids:
        raise ContractError("need at least the present grid", stage="align")
    if len(motions) != len(grids) - 1:
        raise ContractError(f"{len(grids)} grids need {len(grids) - 1} motions, got {len(motions)}",
                            stage="align")
    spec = grids[-1].spec
    for g in grids:
        if g.spec != spec:
            raise ContractError("all grids in a sequence must share one GridSpec", stage="align")
    return [align(g, m) for g, m in zip(grids[:-1], motions)] + [grids[-1]]


def compose_relative(relative: Sequence[EgoPose]) -> list[EgoPose]:
    """Turn frame-to-next-frame motions into frame-to-present motions.

    ``relative[k]`` maps frame ``k`` into frame ``k + 1``; the result has the
    same length, entry ``k`` mapping frame ``k`` straight into the present.
    """
    out: list[EgoPose] = []
    acc = IDENTITY
    for rel in reversed(relative):
        acc = rel.then(acc)
        out.append(acc)
    return out[::-1]
