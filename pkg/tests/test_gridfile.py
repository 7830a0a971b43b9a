import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bevkit.errors import FormatError
from bevkit.grid import BEVGrid, GridSpec, grid_from_bytes, grid_to_bytes, read_grid, write_grid


def spec_for(ny, nx):
    return GridSpec(0.0, float(nx), 0.0, float(ny), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4)).flatmap(
    lambda s: hnp.arrays(np.float32, s, elements=st.floats(allow_nan=False, allow_infinity=False,
                                                            width=32))))
def test_bytes_round_trip(data):
    g = BEVGrid(spec_for(*data.shape[:2]), data)
    assert grid_from_bytes(grid_to_bytes(g), g.spec).equals(g)


def test_single_zero_cell_layout(tmp_path):
    g = BEVGrid(spec_for(1, 1), np.zeros((1, 1, 1)))
    path = tmp_path / "z.bvg"
    write_grid(g, path)
    raw = path.read_bytes()
    assert len(raw) == 16 + 4
    assert raw[:4] == b"BVG1" and struct.unpack("<III", raw[4:16]) == (1, 1, 1)
    assert read_grid(path).equals(g)


def test_header_order_and_endianness():
    data = np.arange(6, dtype=np.float32).reshape(2, 3, 1)
    raw = grid_to_bytes(BEVGrid(spec_for(2, 3), data))
    assert struct.unpack("<III", raw[4:16]) == (2, 3, 1)
    assert np.frombuffer(raw[16:], "<f4").tolist() == list(range(6))


def test_default_spec_is_unit_cells(tmp_path):
    path = tmp_path / "g.bvg"
    write_grid(BEVGrid(GridSpec(-5.0, 5.0, 0.0, 2.5, 2.5), np.ones((1, 4))), path)
    g = read_grid(path)
    assert (g.spec.nx, g.spec.ny, g.spec.cell_size) == (4, 1, 1.0)


def good_bytes():
    return grid_to_bytes(BEVGrid(spec_for(2, 2), np.ones((2, 2, 1))))


@pytest.mark.parametrize("mutate, message", [
    (lambda b: b[:10], "truncated header"),
    (lambda b: b"XVG1" + b[4:], "bad magic"),
    (lambda b: b[:-1], "truncated payload"),
    (lambda b: b + b"\0\0\0\0", "oversized payload"),
    (lambda b: b[:4] + struct.pack("<III", 0, 2, 1) + b[16:], "zero dimension"),
    (lambda b: b[:4] + struct.pack("<III", 2 ** 20, 2 ** 20, 8), "overflow"),
    (lambda b: b[:16] + struct.pack("<f", float("nan")) + b[20:], "non-finite"),
])
def test_corrupt_files(mutate, message):
    with pytest.raises(FormatError, match=message):
        grid_from_bytes(mutate(good_bytes()))


def test_spec_shape_mismatch():
    with pytest.raises(FormatError):
        grid_from_bytes(good_bytes(), spec_for(3, 2))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "g.bvg"
    write_grid(BEVGrid(spec_for(1, 2), np.ones((1, 2))), path)
    write_grid(BEVGrid(spec_for(1, 2), np.zeros((1, 2))), path)
    assert [p.name for p in tmp_path.iterdir()] == ["g.bvg"]
    assert read_grid(path).total() == 0.0
