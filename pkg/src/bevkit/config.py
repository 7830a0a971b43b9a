"""Run configuration: an INI-style file with one section per concern.

Example::

    [scene]
    seed = 7
    n_past = 3
    horizon = 4
    agents = 8
    integer_motion = true

    [grid.det]
    x_min = -51.2
    x_max = 51.2
    y_min = -51.2
    y_max = 51.2
    cell_size = 0.8

    [depth]
    d_min = 1.0
    d_max = 60.0
    bins = 59

    [camera]
    image_width = 704
    image_height = 256
    fx = 560.0
    height = 1.5
    stride = 16

    [pooling]
    z_min = -5.0
    z_max = 3.0

    [pipeline]
    step = gt
    latent_dim = 32
    nms_distance = 1.0

    [bench]
    sizes = 64,128,256
    repetitions = 5

``[grid.map]`` and ``[grid.motion]`` take the same keys as ``[grid.det]``.
Every key is optional; omitted keys keep the defaults shown in
:class:`RunConfig`.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .geometry import DEFAULT_STRIDE, DEFAULT_Z_BOUNDS, CameraRig, DepthBins, surround_rig
from .grid import GridSpec
from .synth import SceneConfig

GRID_KEYS = ("x_min", "x_max", "y_min", "y_max", "cell_size")
STEP_MODES = ("gt", "zero")
SPEC_SECTIONS = {"grid.det": "det_spec", "grid.map": "map_spec", "grid.motion": "motion_spec"}
KNOWN_SECTIONS = {"scene", "depth", "camera", "pooling", "pipeline", "bench", *SPEC_SECTIONS}


@dataclass(frozen=True)
class CameraSettings:
    image_width: int = 704
    image_height: int = 256
    fx: float = 560.0
    fy: float = 560.0
    height: float = 1.5
    stride: int = DEFAULT_STRIDE

    def rig(self) -> CameraRig:
        return surround_rig(self.image_width, self.image_height, self.fx, self.fy, self.height)

    @property
    def feature_hw(self) -> tuple[int, int]:
        return self.image_height // self.stride, self.image_width // self.stride


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    depth: DepthBins = field(default_factory=DepthBins)
    camera: CameraSettings = field(default_factory=CameraSettings)
    z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS
    step: str = "gt"
    latent_dim: int = 32
    nms_distance: float = 1.0
    nms_scales: tuple[tuple[str, float], ...] = (("car", 1.0), ("truck", 0.7), ("pedestrian", 4.0))
    bench_sizes: tuple[int, ...] = (64, 128, 256)
    bench_repetitions: int = 5

    def __post_init__(self):
        if self.step not in STEP_MODES:
            raise ConfigError(f"pipeline step must be one of {STEP_MODES}, got {self.step!r}")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if not self.z_bounds[0] < self.z_bounds[1]:
            raise ConfigError(f"z bounds reversed: {self.z_bounds}")
        if self.bench_repetitions < 1 or not self.bench_sizes or min(self.bench_sizes) < 2:
            raise ConfigError("bench needs repetitions >= 1 and grid sides >= 2")
        if self.camera.stride < 1 or min(self.camera.feature_hw) < 1:
            raise ConfigError("camera image must span at least one feature pixel")

    def with_overrides(self, seed: int | None = None, **specs: GridSpec | None) -> "RunConfig":
        scene = self.scene
        if seed is not None:
            scene = replace(scene, seed=seed)
        updates = {k: v for k, v in specs.items() if v is not None}
        if updates:
            scene = replace(scene, **updates)
        return replace(self, scene=scene)

    def canonical_text(self) -> str:
        """Stable text form; its hash identifies a run configuration."""
        lines = ["[scene]"] + [f"{k} = {v}" for k, v in self.scene.to_items()]
        lines += ["[depth]", f"d_min = {self.depth.d_min!r}", f"d_max = {self.depth.d_max!r}",
                  f"bins = {self.depth.count}"]
        lines += ["[camera]"] + [f"{k} = {getattr(self.camera, k)!r}"
                                 for k in ("image_width", "image_height", "fx", "fy", "height", "stride")]
        lines += ["[pooling]", f"z_min = {self.z_bounds[0]!r}", f"z_max = {self.z_bounds[1]!r}"]
        lines += ["[pipeline]", f"step = {self.step}", f"latent_dim = {self.latent_dim}",
                  f"nms_distance = {self.nms_distance!r}",
                  "nms_scales = " + ",".join(f"{k}:{v!r}" for k, v in self.nms_scales)]
        lines += ["[bench]", "sizes = " + ",".join(map(str, self.bench_sizes)),
                  f"repetitions = {self.bench_repetitions}"]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _float(section: configparser.SectionProxy, key: str, default: float) -> float:
    try:
        return section.getfloat(key, fallback=default)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from None


def _int(section: configparser.SectionProxy, key: str, default: int) -> int:
    try:
        return section.getint(key, fallback=default)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(parser.sections()) - KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")

    base = RunConfig()
    items = dict(parser["scene"]) if parser.has_section("scene") else {}
    for sec, key in SPEC_SECTIONS.items():
        if parser.has_section(sec):
            s = parser[sec]
            extra = set(s) - set(GRID_KEYS)
            if extra:
                raise ConfigError(f"{source}: [{sec}] unknown keys {sorted(extra)}")
            default = getattr(base.scene, key)
            items[key] = ",".join(repr(_float(s, k, getattr(default, k))) for k in GRID_KEYS)
    scene = SceneConfig.from_items(items)

    depth = base.depth
    if parser.has_section("depth"):
        s = parser["depth"]
        depth = DepthBins(_float(s, "d_min", depth.d_min), _float(s, "d_max", depth.d_max),
                          _int(s, "bins", depth.count))
    cam = base.camera
    if parser.has_section("camera"):
        s = parser["camera"]
        fx = _float(s, "fx", cam.fx)
        cam = CameraSettings(_int(s, "image_width", cam.image_width),
                             _int(s, "image_height", cam.image_height), fx,
                             _float(s, "fy", fx), _float(s, "height", cam.height),
                             _int(s, "stride", cam.stride))
    z_bounds = base.z_bounds
    if parser.has_section("pooling"):
        s = parser["pooling"]
        z_bounds = (_float(s, "z_min", z_bounds[0]), _float(s, "z_max", z_bounds[1]))
    kwargs = {}
    if parser.has_section("pipeline"):
        s = parser["pipeline"]
        kwargs["step"] = s.get("step", base.step).strip()
        kwargs["latent_dim"] = _int(s, "latent_dim", base.latent_dim)
        kwargs["nms_distance"] = _float(s, "nms_distance", base.nms_distance)
        if "nms_scales" in s:
            pairs = []
            for item in s["nms_scales"].split(","):
                label, _, value = item.partition(":")
                try:
                    pairs.append((label.strip(), float(value)))
                except ValueError:
                    raise ConfigError(f"{source}: bad nms_scales entry {item!r}") from None
            kwargs["nms_scales"] = tuple(pairs)
    if parser.has_section("bench"):
        s = parser["bench"]
        if "sizes" in s:
            try:
                kwargs["bench_sizes"] = tuple(int(v) for v in s["sizes"].split(",") if v.strip())
            except ValueError:
                raise ConfigError(f"{source}: bad bench sizes {s['sizes']!r}") from None
        kwargs["bench_repetitions"] = _int(s, "repetitions", base.bench_repetitions)
    return RunConfig(scene, depth, cam, z_bounds, **kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), str(path))
