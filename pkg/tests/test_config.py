import pytest

from bevkit.config import RunConfig, load_config, parse_config
from bevkit.errors import ConfigError
from bevkit.grid import DET_SPEC, GridSpec


def test_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.scene.det_spec == DET_SPEC
    assert cfg.camera.feature_hw == (16, 44)


def test_full_file():
    cfg = parse_config("""
[scene]
seed = 7
agents = 2
[grid.motion]
x_min = -10
x_max = 10
cell_size = 1.0
[depth]
bins = 10
d_max = 11
[camera]
fx = 400
stride = 8
[pooling]
z_min = -2
[pipeline]
step = zero
nms_scales = car:1.0, pedestrian:2.5
[bench]
sizes = 16,32
repetitions = 2
""")
    assert cfg.scene.seed == 7 and cfg.scene.agents == 2
    assert cfg.scene.motion_spec == GridSpec(-10.0, 10.0, -50.0, 50.0, 1.0)
    assert cfg.depth.count == 10 and cfg.depth.d_max == 11.0
    assert cfg.camera.fx == cfg.camera.fy == 400.0 and cfg.camera.stride == 8
    assert cfg.z_bounds == (-2.0, 3.0)
    assert cfg.step == "zero" and cfg.nms_scales == (("car", 1.0), ("pedestrian", 2.5))
    assert cfg.bench_sizes == (16, 32) and cfg.bench_repetitions == 2


@pytest.mark.parametrize("text", [
    "[extra]\na = 1\n",
    "[grid.det]\nwidth = 3\n",
    "[scene]\nfoo = 1\n",
    "[depth]\nbins = many\n",
    "[pipeline]\nstep = learned\n",
    "[pipeline]\nnms_scales = car:x\n",
    "[pooling]\nz_min = 4\n",
    "[bench]\nsizes = 1\n",
    "[grid.det]\ncell_size = 0\n",
    "not an ini",
])
def test_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_digest_stable_and_sensitive():
    a = parse_config("[scene]\nseed = 1\n")
    assert a.digest() == parse_config("[scene]\nseed=1\n\n").digest()
    assert a.digest() != parse_config("[scene]\nseed = 2\n").digest()
    assert parse_config(a.canonical_text()) == a


def test_overrides():
    spec = GridSpec(-8.0, 8.0, -8.0, 8.0, 0.5)
    cfg = RunConfig().with_overrides(seed=9, motion_spec=spec, det_spec=None)
    assert cfg.scene.seed == 9 and cfg.scene.motion_spec == spec
    assert cfg.scene.det_spec == DET_SPEC
    assert RunConfig().with_overrides() == RunConfig()


def test_load(tmp_path):
    assert load_config(None) == RunConfig()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    p = tmp_path / "c.ini"
    p.write_text("[scene]\nhorizon = 2\n")
    assert load_config(p).scene.horizon == 2
