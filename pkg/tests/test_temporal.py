import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevkit.errors import ConfigError, ContractError
from bevkit.grid import BEVGrid, GridSpec
from bevkit.temporal import IDENTITY, EgoPose, align, align_sequence, compose, compose_relative
from oracles import quarter_turn_oracle, shift_oracle

SPEC = GridSpec(-4.0, 4.0, -4.0, 4.0, 0.5)
angles = st.floats(-math.pi, math.pi)
offsets = st.floats(-20, 20)


def random_grid(seed, spec=SPEC, channels=2):
    rng = np.random.default_rng(seed)
    return BEVGrid(spec, rng.standard_normal(spec.shape + (channels,)))


class TestEgoPose:
    def test_theta_wrapped(self):
        assert EgoPose(3 * math.pi).theta == pytest.approx(math.pi)
        assert EgoPose(-math.pi).theta == pytest.approx(math.pi)

    def test_rejects_non_finite(self):
        with pytest.raises(ConfigError):
            EgoPose(0.0, float("inf"), 0.0)

    @settings(max_examples=60, deadline=None)
    @given(angles, offsets, offsets, st.floats(-50, 50), st.floats(-50, 50))
    def test_inverse(self, th, tx, ty, x, y):
        p = EgoPose(th, tx, ty)
        bx, by = p.apply_inverse(*p.apply(x, y))
        assert bx == pytest.approx(x, abs=1e-9) and by == pytest.approx(y, abs=1e-9)
        ix, iy = p.inverse().apply(*p.apply(x, y))
        assert ix == pytest.approx(x, abs=1e-9) and iy == pytest.approx(y, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(angles, offsets, offsets, angles, offsets, offsets, st.floats(-50, 50), st.floats(-50, 50))
    def test_then_is_sequential_application(self, a, b, c, d, e, f, x, y):
        p, q = EgoPose(a, b, c), EgoPose(d, e, f)
        want = q.apply(*p.apply(x, y))
        got = p.then(q).apply(x, y)
        assert np.allclose(got, want, atol=1e-9)
        assert compose(q, p) == p.then(q)


class TestAlign:
    def test_identity_bitwise(self):
        g = random_grid(0)
        assert align(g, IDENTITY).equals(g)
        assert align(g, EgoPose(2 * math.pi)).equals(g)

    def test_one_cell_translation(self):
        g = random_grid(1)
        out = align(g, EgoPose(0.0, SPEC.cell_size, 0.0))
        assert np.array_equal(out.data, shift_oracle(g.data, 0, 1))
        assert not out.data[:, 0].any()

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_quarter_turn(self, k):
        g = random_grid(k)
        assert np.array_equal(align(g, EgoPose(k * math.pi / 2)).data, quarter_turn_oracle(g.data, k))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(-20, 20), st.integers(-20, 20), st.integers(0, 3), st.integers(0, 99))
    def test_integer_motion_oracle(self, di, dj, k, seed):
        g = random_grid(seed)
        c = SPEC.cell_size
        out = align(g, EgoPose(k * math.pi / 2, dj * c, di * c))
        assert np.array_equal(out.data, shift_oracle(quarter_turn_oracle(g.data, k), di, dj))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(-6, 6), st.integers(-6, 6), st.integers(0, 99))
    def test_translation_conserves_in_extent_mass(self, di, dj, seed):
        g = random_grid(seed, channels=1)
        out = align(g, EgoPose(0.0, dj * SPEC.cell_size, di * SPEC.cell_size))
        n = SPEC.nx
        src = g.data[max(0, -di):n - max(0, di), max(0, -dj):n - max(0, dj)]
        assert out.data.sum(dtype=np.float64) == src.sum(dtype=np.float64)

    @settings(max_examples=30, deadline=None)
    @given(angles, st.floats(-1, 1), st.floats(-1, 1), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_affine_field_exact_in_interior(self, th, tx, ty, a, b, c0):
        xs, ys = SPEC.cell_centers()
        g = BEVGrid(SPEC, c0 + 0.1 * (a * xs + b * ys))
        motion = EgoPose(th, tx, ty)
        px, py = motion.apply_inverse(xs, ys)
        fi, fj = SPEC.to_index(px, py)
        interior = (fi >= 0) & (fi <= SPEC.ny - 1) & (fj >= 0) & (fj <= SPEC.nx - 1)
        got = align(g, motion).data[..., 0].astype(np.float64)
        want = c0 + 0.1 * (a * px + b * py)
        assert np.all(np.abs(got - want)[interior] <= 1e-6)

    def test_far_translation_is_empty(self):
        assert not align(random_grid(3), EgoPose(0.0, 100.0, 0.0)).data.any()


class TestAlignSequence:
    def test_single_present(self):
        g = random_grid(0)
        (out,) = align_sequence([g], [])
        assert out is g

    def test_identity_motions(self):
        grids = [random_grid(s) for s in range(3)]
        out = align_sequence(grids, [IDENTITY, IDENTITY])
        assert all(a.equals(b) for a, b in zip(out, grids))

    def test_composed_relative_shifts(self):
        c = SPEC.cell_size
        grids = [random_grid(s) for s in range(3)]
        motions = compose_relative([EgoPose(0.0, c, 0.0), EgoPose(0.0, c, 0.0)])
        assert [m.tx for m in motions] == [2 * c, c]
        out = align_sequence(grids, motions)
        for g, o, shift in zip(grids, out, (2, 1, 0)):
            assert np.array_equal(o.data, shift_oracle(g.data, 0, shift))

    def test_length_mismatch(self):
        with pytest.raises(ContractError, match=r"\[align\]"):
            align_sequence([random_grid(0), random_grid(1)], [])

    def test_spec_mismatch(self):
        other = random_grid(0, GridSpec(-4.0, 4.0, -4.0, 4.0, 1.0))
        with pytest.raises(ContractError):
            align_sequence([other, random_grid(1)], [IDENTITY])
