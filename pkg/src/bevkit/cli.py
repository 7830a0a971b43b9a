"""Command-line harness: ``bevkit {synth,pipeline,eval,bench,dump}``.

Data goes to files under ``--out``; diagnostics go to stderr.  Exit status is
0 on success, 1 when a stage fails and 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bench import bench_csv, checksum_text, run_bench
from .boxes import DetectionBox
from .config import RunConfig, load_config
from .errors import BevkitError, ConfigError, ContractError, FormatError
from .evaluation import detection_metrics, metrics_csv
from .future import StateSequence
from .grid import FORMAT_VERSION, GridSpec, atomic_write_bytes, read_grid, write_grid
from .pipeline import PipelineResult, decode_instances, evaluate_map, evaluate_motion, run_pipeline
from .synth import BOX_FIELDS, Scene, generate, read_scene, write_scene

STATE_DIR = "states"
DETECTIONS_FILE = "detections.txt"


def manifest_items(command: str, config: RunConfig) -> list[tuple[str, str]]:
    return [("bevkit", __version__), ("grid_format", FORMAT_VERSION), ("command", command),
            ("config_sha256", config.digest()), ("seed", str(config.scene.seed)),
            ("numpy", np.__version__)]


def write_manifest(out: Path, command: str, config: RunConfig) -> None:
    text = "".join(f"{k} {v}\n" for k, v in manifest_items(command, config))
    atomic_write_bytes(out / "manifest.txt", text.encode())
    atomic_write_bytes(out / "config.ini", config.canonical_text().encode())


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _spec_arg(text: str) -> GridSpec:
    try:
        return GridSpec.from_text(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    return config.with_overrides(seed=args.seed, det_spec=args.det_spec, map_spec=args.map_spec,
                                 motion_spec=args.motion_spec)


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BevkitError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def detections_text(dets: Sequence[DetectionBox]) -> str:
    lines = ["# det " + " ".join(f"<{f}>" for f in BOX_FIELDS)]
    for b in dets:
        lines.append(" ".join(["det", str(b.sample), str(b.instance_id), b.label] +
                              [repr(float(v)) for v in
                               (b.x, b.y, b.z, b.w, b.l, b.h, b.yaw, b.vx, b.vy, b.score)]))
    return "\n".join(lines) + "\n"


def read_detections(path: Path) -> list[DetectionBox]:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "det" or len(parts) != len(BOX_FIELDS) + 1:
            raise FormatError(f"{path}:{lineno}: malformed detection record")
        try:
            vals = [float(v) for v in parts[4:]]
            out.append(DetectionBox(*vals[:9], label=parts[3], score=vals[9],
                                    instance_id=int(parts[2]), sample=int(parts[1])))
        except (ValueError, ConfigError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def summary_text(result_metrics: dict[str, float], shapes: dict[str, tuple[int, int]] | None,
                 det_map: float, det_nds: float) -> str:
    lines = []
    if shapes:
        lines += [f"stage {name} {nx}x{ny}" for name, (nx, ny) in shapes.items()]
    lines += [f"map {det_map:.6f}", f"nds {det_nds:.6f}",
              "note nds averages mAP with ATE/ASE/AOE/AVE only (no attribute error), divisor 9"]
    lines += [f"{k} {v:.6f}" for k, v in result_metrics.items()]
    return "\n".join(lines) + "\n"


# --- subcommands ---------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out = _out_dir(args.out)
    scene = generate(config.scene)
    files = write_scene(scene, out, manifest_items("synth", config))
    n_boxes = sum(len(f) for f in scene.boxes)
    print(f"wrote {len(files)} files to {out}: {len(scene.instances)} instance rasters, "
          f"1 map raster, {n_boxes} boxes over {scene.config.frames} timestamps")
    return 0


def _load_or_generate(args: argparse.Namespace, config: RunConfig) -> Scene:
    if args.scene:
        scene = read_scene(args.scene)
        overrides = {k: v for k, v in (("det_spec", args.det_spec), ("map_spec", args.map_spec),
                                       ("motion_spec", args.motion_spec)) if v is not None}
        for key, spec in overrides.items():
            if getattr(scene.config, key) != spec:
                raise ContractError(f"scene {key} {getattr(scene.config, key)} differs from "
                                    f"override {spec}", stage="load")
        return scene
    return generate(config.scene)


def write_pipeline_outputs(out: Path, result: PipelineResult) -> None:
    (out / STATE_DIR).mkdir(exist_ok=True)
    for k, state in enumerate(result.states):
        write_grid(state, out / STATE_DIR / f"state_{k:02d}.bvg")
    write_grid(result.fused, out / "bev_fused.bvg")
    _write_text(out / DETECTIONS_FILE, detections_text(result.detections))
    _write_text(out / "metrics.csv", metrics_csv(result.metric_rows()))
    det = result.detection
    _write_text(out / "summary.txt", summary_text(result.metrics, result.stage_shapes, det.map, det.nds))


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if args.step:
        config = replace(config, step=args.step)
    scene = _load_or_generate(args, config)
    out = _out_dir(args.out)
    result = run_pipeline(scene, config, seed=args.seed)
    write_pipeline_outputs(out, result)
    write_manifest(out, "pipeline", config)
    det = result.detection
    print("stages " + " ".join(f"{k}={nx}x{ny}" for k, (nx, ny) in result.stage_shapes.items()))
    print(f"vpq_short={result.metrics['vpq_short']:.4f} vpq_long={result.metrics['vpq_long']:.4f} "
          f"iou_long={result.metrics['iou_long']:.4f} map_miou={result.metrics['map_miou']:.4f} "
          f"mAP={det.map:.4f} NDS={det.nds:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    scene = read_scene(args.scene)
    pred_dir = Path(args.pred)
    spec = scene.config.motion_spec
    paths = sorted((pred_dir / STATE_DIR).glob("state_*.bvg"))
    if len(paths) != scene.horizon + 1:
        raise ContractError(f"expected {scene.horizon + 1} predicted states in {pred_dir / STATE_DIR}, "
                            f"found {len(paths)}", stage="eval")
    states = StateSequence(tuple(read_grid(p, spec) for p in paths))
    metrics = evaluate_motion(decode_instances(states), scene.future_instances(), spec)
    metrics.update(evaluate_map(scene.map_raster, scene.map_raster))
    det = detection_metrics(read_detections(pred_dir / DETECTIONS_FILE), scene.boxes[scene.present])
    rows = list(det.rows())
    for name, value in metrics.items():
        metric, _, label = name.partition(":")
        rows.append((metric, label or "all", "all", value))
    out = _out_dir(args.out or args.pred)
    _write_text(out / "eval_metrics.csv", metrics_csv(rows))
    print(summary_text(metrics, None, det.map, det.nds), end="")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else config.bench_sizes
    reps = args.repetitions if args.repetitions is not None else config.bench_repetitions
    if reps < 1 or min(sizes) < 2:
        raise ConfigError("bench needs repetitions >= 1 and grid sides >= 2")
    out = _out_dir(args.out)
    results = run_bench(sizes, reps, seed=config.scene.seed)
    _write_text(out / "bench.csv", bench_csv(results))
    _write_text(out / "checksums.txt", checksum_text(results))
    write_manifest(out, "bench", config)
    for r in results:
        print(f"{r.op:12s} side={r.size:5d} median={r.median * 1e3:9.3f} ms "
              f"p95={r.p95 * 1e3:9.3f} ms")
    return 0


def pgm_bytes(channel: np.ndarray) -> bytes:
    lo, hi = float(channel.min()), float(channel.max())
    scaled = np.zeros(channel.shape) if hi == lo else (channel - lo) / (hi - lo)
    # row 0 is the lowest y, so flip to put +y at the top of the image
    pixels = np.round(scaled[::-1] * 255).astype(np.uint8)
    header = f"P5\n{channel.shape[1]} {channel.shape[0]}\n255\n".encode()
    return header + pixels.tobytes()


def cmd_dump(args: argparse.Namespace) -> int:
    grid = read_grid(args.grid)
    if not 0 <= args.channel < grid.channels:
        raise ConfigError(f"channel {args.channel} outside [0, {grid.channels})")
    channel = grid.data[..., args.channel]
    if args.format == "pgm":
        if not args.out:
            raise ConfigError("--out is required for pgm output")
        atomic_write_bytes(Path(args.out), pgm_bytes(channel))
        return 0
    text = "\n".join(" ".join(repr(float(v)) for v in row) for row in channel) + "\n"
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bevkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override [scene] seed")
        p.add_argument("--out", required=out_required, help="output directory")
        for name in ("det", "map", "motion"):
            p.add_argument(f"--{name}-spec", type=_spec_arg, metavar="X0,X1,Y0,Y1,CELL",
                           help=f"override the {name} grid")

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run lift/pool/align/sample/rollout and evaluate")
    common(p)
    p.add_argument("--scene", help="scene directory (generated from the config if omitted)")
    p.add_argument("--step", choices=("gt", "zero"), help="flow step function for the rollout")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="evaluate pipeline outputs against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True, help="pipeline output directory")
    p.add_argument("--out", help="where to write eval_metrics.csv (default: --pred)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the core kernels")
    common(p)
    p.add_argument("--sizes", help="comma-separated grid sides")
    p.add_argument("--repetitions", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump", help="print a grid channel as text or write a PGM image")
    p.add_argument("grid")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--format", choices=("text", "pgm"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"bevkit {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except BevkitError as exc:
        print(f"bevkit {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"bevkit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
