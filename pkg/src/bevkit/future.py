"""Iterative-flow future-state generation.

Each step warps the current state with a backward flow field and adds an
optional residual update: ``s[k+1] = flow_warp(s[k], flow[k]) + update[k]``.
The flow generator is injected, so ground-truth or constant-flow generators
can stand in for a learned network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError
from .grid import BEVGrid, GridSpec, bilinear

DEFAULT_LATENT_DIM = 32
FRAME_PERIOD_S = 0.5


@dataclass(frozen=True, eq=False)
class LatentMap:
    """Per-cell diagonal Gaussian parameters, each ``(ny, nx, L)``."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        logvar = np.array(self.log_variance, dtype=np.float64)
        if mean.ndim != 3 or mean.shape != logvar.shape:
            raise ContractError(f"mean {mean.shape} and log_variance {logvar.shape} "
                                "must share one (ny, nx, L) shape")
        if not (np.isfinite(mean).all() and np.isfinite(logvar).all()):
            raise ContractError("latent parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_variance", logvar)

    @classmethod
    def standard(cls, spec: GridSpec, dim: int = DEFAULT_LATENT_DIM) -> "LatentMap":
        shape = (spec.ny, spec.nx, dim)
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)


def sample_latent(latent: LatentMap, rng: np.random.Generator | int | None = None,
                  deterministic: bool = False) -> np.ndarray:
    """Draw ``mean + exp(0.5 * log_variance) * eps`` per element; ``deterministic`` returns the mean.

    ``rng`` is a Generator or an integer seed; it is required unless sampling
    deterministically, so no hidden global state is consulted.
    """
    if deterministic:
        return latent.mean.copy()
    if rng is None:
        raise ContractError("a seed or Generator is required for stochastic sampling")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    eps = rng.standard_normal(latent.mean.shape)
    return latent.mean + np.exp(0.5 * latent.log_variance) * eps


@dataclass(frozen=True, eq=False)
class FlowField:
    """Backward flow in cells: target cell ``(i, j)`` reads source ``(i - dy, j - dx)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ContractError(f"flow must be (ny, nx, 2), got {data.shape}")
        if not np.isfinite(data).all():
            raise ContractError("flow must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dx(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.data[..., 1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "FlowField":
        return cls(np.zeros(shape + (2,), dtype=np.float32))

    @classmethod
    def constant(cls, shape: tuple[int, int], dx: float, dy: float) -> "FlowField":
        data = np.empty(shape + (2,), dtype=np.float32)
        data[..., 0] = dx
        data[..., 1] = dy
        return cls(data)

    def to_grid(self, spec: GridSpec) -> BEVGrid:
        return BEVGrid(spec, self.data)

    @classmethod
    def from_grid(cls, grid: BEVGrid) -> "FlowField":
        if grid.channels != 2:
            raise ContractError(f"flow grid needs 2 channels, got {grid.channels}")
        return cls(grid.data)


def flow_warp(state: BEVGrid, flow: FlowField) -> BEVGrid:
    """``out[i, j] = bilinear(state, (i - dy[i, j], j - dx[i, j]))`` with zero fill."""
    if flow.shape != state.spec.shape:
        raise ContractError(f"flow {flow.shape} does not match state {state.spec.shape}")
    if not flow.data.any():
        return state
    ii, jj = np.indices(state.spec.shape, dtype=np.float64)
    fi = ii - flow.dy.astype(np.float64)
    fj = jj - flow.dx.astype(np.float64)
    return state.with_data(bilinear(state.data, fi, fj).astype(np.float32))


@dataclass(frozen=True)
class StateSequence:
    """States ``s_t .. s_{t+T}`` sharing one grid spec."""

    states: tuple[BEVGrid, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not self.states:
            raise ContractError("state sequence is empty")
        spec = self.states[0].spec
        if any(s.spec != spec for s in self.states):
            raise ContractError("all states must share one GridSpec")

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def spec(self) -> GridSpec:
        return self.states[0].spec

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, k: int) -> BEVGrid:
        return self.states[k]

    def __iter__(self):
        return iter(self.states)


StepOutput = tuple[FlowField, Optional[np.ndarray | BEVGrid]]
StepFn = Callable[[BEVGrid, Optional[np.ndarray], int], StepOutput]


def rollout(initial: BEVGrid, latent: np.ndarray | None, step_fn: StepFn,
            horizon: int) -> StateSequence:
    """Generate ``horizon`` future states from ``initial`` by iterated flow warping.

    ``step_fn(state, latent, k)`` returns ``(flow, update)``; ``update`` may
    be ``None`` for no residual.
    """
    if horizon < 1:
        raise ContractError(f"horizon must be >= 1, got {horizon}", stage="rollout")
    states = [initial]
    state = initial
    for k in range(horizon):
        flow, update = step_fn(state, latent, k)
        if not isinstance(flow, FlowField):
            flow = FlowField(flow)
        if flow.shape != state.spec.shape:
            raise ContractError(f"step {k}: flow {flow.shape} vs state {state.spec.shape}",
                                stage="rollout")
        state = flow_warp(state, flow)
        if update is not None:
            upd = update.data if isinstance(update, BEVGrid) else np.asarray(update)
            if upd.ndim == 2:
                upd = upd[:, :, None]
            if upd.shape != state.shape:
                raise ContractError(f"step {k}: update {upd.shape} vs state {state.shape}",
                                    stage="rollout")
            state = state.with_data(state.data.astype(np.float64) + upd)
        states.append(state)
    return StateSequence(tuple(states))


def constant_flow_step(dx: float, dy: float) -> StepFn:
    """Step function emitting the same uniform flow and no update at every step."""
    def step(state: BEVGrid, latent, k: int) -> StepOutput:
        return FlowField.constant(state.spec.shape, dx, dy), None
    return step


def zero_flow_step(state: BEVGrid, latent, k: int) -> StepOutput:
    return FlowField.zeros(state.spec.shape), None


def sequence_flow_step(flows: Sequence[FlowField]) -> StepFn:
    """Step function replaying precomputed flows (e.g. ground truth)."""
    def step(state: BEVGrid, latent, k: int) -> StepOutput:
        return flows[k], None
    return step


def horizon_seconds(horizon: int, period: float = FRAME_PERIOD_S) -> float:
    return horizon * period
