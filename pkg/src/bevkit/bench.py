"""Wall-clock benchmarks for the core kernels with determinism checks."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BevkitError
from .future import FlowField, flow_warp
from .geometry import LiftedCloud, pillar_pool
from .grid import BEVGrid, GridSpec, grid_sample
from .temporal import EgoPose, align

BENCH_CHANNELS = 8
POINTS_PER_CELL = 8
OPS = ("pillar_pool", "align", "flow_warp", "grid_sample")


@dataclass(frozen=True)
class BenchResult:
    op: str
    size: int
    samples: tuple[float, ...]
    checksum: str

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.samples, 95))


def checksum(grid: BEVGrid) -> str:
    return hashlib.sha256(grid.data.tobytes()).hexdigest()


def _workloads(side: int, seed: int) -> dict[str, Callable[[], BEVGrid]]:
    rng = np.random.default_rng([seed, side])
    spec = GridSpec(-0.5 * side, 0.5 * side, -0.5 * side, 0.5 * side, 1.0)
    grid = BEVGrid(spec, rng.standard_normal((side, side, BENCH_CHANNELS)))
    n = side * side * POINTS_PER_CELL
    pos = np.column_stack([rng.uniform(spec.x_min, spec.x_max, n),
                           rng.uniform(spec.y_min, spec.y_max, n),
                           rng.uniform(-1.0, 1.0, n)])
    cloud = LiftedCloud(pos, np.ones(n), rng.standard_normal((n, BENCH_CHANNELS)))
    motion = EgoPose(0.1, 1.3, -0.7)
    flow = FlowField(rng.uniform(-2.0, 2.0, (side, side, 2)))
    half = 0.25 * side
    fine = GridSpec(-half, half, -half, half, 0.5)
    return {
        "pillar_pool": lambda: pillar_pool(cloud, spec),
        "align": lambda: align(grid, motion),
        "flow_warp": lambda: flow_warp(grid, flow),
        "grid_sample": lambda: grid_sample(grid, fine),
    }


def run_bench(sizes: Sequence[int], repetitions: int, seed: int = 0) -> list[BenchResult]:
    """Time each op ``repetitions`` times per grid side.

    Raises if any repetition produces output that differs bitwise from the first.
    """
    results = []
    for side in sizes:
        for op, fn in _workloads(side, seed).items():
            samples, sums = [], set()
            for _ in range(repetitions):
                t0 = time.perf_counter()
                out = fn()
                samples.append(time.perf_counter() - t0)
                sums.add(checksum(out))
            if len(sums) != 1:
                raise BevkitError(f"{op} at side {side} is not deterministic across repetitions")
            results.append(BenchResult(op, side, tuple(samples), sums.pop()))
    return results


def bench_csv(results: Sequence[BenchResult]) -> str:
    lines = ["op,size,repetitions,median_s,p95_s,checksum"]
    lines += [f"{r.op},{r.size},{len(r.samples)},{r.median:.6g},{r.p95:.6g},{r.checksum}"
              for r in results]
    return "\n".join(lines) + "\n"


def checksum_text(results: Sequence[BenchResult]) -> str:
    return "".join(f"{r.op} {r.size} {r.checksum}\n" for r in results)
