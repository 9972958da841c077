"""Tests for displacement fields, decomposition, sampling, and the codec."""

import math

import numpy as np
import pytest

from palkit.distortion import (
    DistortionField,
    FieldDecodeError,
    LensSpec,
    OutOfDomainError,
    angular_displacement,
    decode_field,
    decompose,
    displacement_map,
    encode_field,
    read_pfm,
    sample_bilinear,
    sample_bilinear_masked,
    synth_pal_field,
    write_pfm,
)


def angle_3d_oracle(x, y, xd, yd):
    """Reference: angle between 3D vectors (x, y, 1) and (xd, yd, 1)."""
    a = np.stack([np.broadcast_to(x, np.shape(xd)), np.broadcast_to(y, np.shape(yd)),
                  np.ones(np.shape(xd))], axis=-1)
    b = np.stack([xd, yd, np.ones(np.shape(xd))], axis=-1)
    dot = (a * b).sum(axis=-1)
    cos = dot / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.degrees(np.arccos(np.clip(cos, -1, 1)))


def affine_field(a11, a12, a21, a22, tx=0.0, ty=0.0, n=8, half=1.0):
    """Field whose displaced coords are an affine map of the grid coords."""
    fld0 = synth_pal_field(LensSpec(0, 0), n, n, half)
    x, y = fld0.grid_coords()
    xd = a11 * x + a12 * y + tx
    yd = a21 * x + a22 * y + ty
    return DistortionField(n, n, half, xd - x, yd - y)


def qr_2x2_oracle(j):
    """Reference decomposition via numpy QR with sign fix-up."""
    q, r = np.linalg.qr(j)
    for k in range(2):
        if r[k, k] < 0:
            q[:, k] *= -1
            r[k, :] *= -1
    theta = math.atan2(q[1, 0], q[0, 0])
    a, b, s = r[0, 0], r[1, 1], r[0, 1]
    return (math.degrees(theta), math.sqrt(a * b), a / b,
            math.degrees(math.atan(s / b)))


class TestAngularDisplacement:
    def test_identity_is_zero(self):
        assert angular_displacement(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_unit_shift_is_45_degrees(self):
        assert angular_displacement(0.0, 0.0, 1.0, 0.0) == pytest.approx(45.0, abs=1e-12)

    def test_matches_3d_dot_product_oracle(self):
        rng = np.random.default_rng(7)
        x, y, xd, yd = rng.uniform(-2, 2, size=(4, 5000))
        got = angular_displacement(x, y, xd, yd)
        want = angle_3d_oracle(x, y, xd, yd)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_symmetric_under_point_swap(self):
        rng = np.random.default_rng(8)
        x, y, xd, yd = rng.uniform(-1.5, 1.5, size=(4, 2000))
        fwd = angular_displacement(x, y, xd, yd)
        rev = angular_displacement(xd, yd, x, y)
        assert np.max(np.abs(fwd - rev)) < 1e-9

    def test_invariant_to_joint_rotation_about_axis(self):
        rng = np.random.default_rng(9)
        x, y, xd, yd = rng.uniform(-1.5, 1.5, size=(4, 2000))
        base = angular_displacement(x, y, xd, yd)
        for alpha in rng.uniform(0, 2 * np.pi, size=5):
            c, s = math.cos(alpha), math.sin(alpha)
            rot = angular_displacement(c * x - s * y, s * x + c * y,
                                       c * xd - s * yd, s * xd + c * yd)
            assert np.max(np.abs(rot - base)) < 1e-9


class TestSynthField:
    def test_zero_power_gives_zero_displacement(self):
        fld = synth_pal_field(LensSpec(0, 0), 32, 32, 1.0)
        assert np.max(np.abs(fld.dx)) == 0.0
        assert np.max(np.abs(fld.dy)) == 0.0

    def test_plus2_add2_beats_minus2_add2_centrally(self):
        # Central-region mean displacement ordering between the two
        # opposite-sphere prescriptions.
        plus = synth_pal_field(LensSpec(2, 2), 64, 64, 1.0)
        minus = synth_pal_field(LensSpec(-2, 2), 64, 64, 1.0)
        x, y = plus.grid_coords()
        central = (np.abs(x) < 0.3) & (np.abs(y) < 0.3)
        assert (displacement_map(plus)[central].mean()
                > displacement_map(minus)[central].mean())

    def test_higher_addition_displaces_more(self):
        add3 = synth_pal_field(LensSpec(0, 3), 48, 48, 1.0)
        add2 = synth_pal_field(LensSpec(0, 2), 48, 48, 1.0)
        assert displacement_map(add3).max() > displacement_map(add2).max()

    def test_higher_addition_dominates_pointwise_in_near_half(self):
        add3 = synth_pal_field(LensSpec(0, 3), 48, 48, 1.0)
        add2 = synth_pal_field(LensSpec(0, 2), 48, 48, 1.0)
        lower = slice(24, None)  # y < 0 rows
        d3 = displacement_map(add3)[lower]
        d2 = displacement_map(add2)[lower]
        assert np.all(d3 >= d2 - 1e-12)
        assert d3.max() > d2.max()

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            synth_pal_field(LensSpec(0, 0), 0, 4)
        with pytest.raises(ValueError):
            LensSpec(float("nan"), 2)
        with pytest.raises(ValueError):
            LensSpec(0, -1)
        with pytest.raises(ValueError):
            LensSpec(0, 2, refractive_index=1.0)

    def test_deterministic(self):
        a = synth_pal_field(LensSpec(1, 2.5), 32, 24, 0.9)
        b = synth_pal_field(LensSpec(1, 2.5), 32, 24, 0.9)
        assert np.array_equal(a.dx, b.dx) and np.array_equal(a.dy, b.dy)


class TestDisplacementMap:
    def test_zero_field_all_zero(self):
        fld = synth_pal_field(LensSpec(0, 0), 16, 16)
        assert np.all(displacement_map(fld) == 0)

    def test_single_nonzero_cell(self):
        fld0 = synth_pal_field(LensSpec(0, 0), 8, 8)
        dx = np.zeros((8, 8))
        dx[3, 5] = 0.2
        fld = DistortionField(8, 8, 1.0, dx, np.zeros((8, 8)))
        m = displacement_map(fld)
        assert m[3, 5] > 0
        m[3, 5] = 0
        assert np.all(m == 0)
        del fld0

    def test_matches_per_point_loop_oracle(self):
        fld = synth_pal_field(LensSpec(2, 2), 12, 10, 0.8)
        m = displacement_map(fld)
        x, y = fld.grid_coords()
        for i in range(fld.height_px):
            for j in range(fld.width_px):
                want = angular_displacement(
                    x[i, j], y[i, j], x[i, j] + fld.dx[i, j], y[i, j] + fld.dy[i, j])
                assert abs(m[i, j] - want) < 1e-12


class TestDecompose:
    def test_identity_map(self):
        fld = synth_pal_field(LensSpec(0, 0), 9, 9)
        maps = decompose(fld)
        assert np.allclose(maps.magnification, 1, atol=1e-9)
        assert np.allclose(maps.aspect, 1, atol=1e-9)
        assert np.allclose(maps.skew_deg, 0, atol=1e-9)
        assert np.allclose(maps.rotation_deg, 0, atol=1e-9)
        assert maps.degenerate_count == 0

    def test_global_pure_rotation(self):
        alpha = 17.0
        c, s = math.cos(math.radians(alpha)), math.sin(math.radians(alpha))
        fld = affine_field(c, -s, s, c, n=9)
        maps = decompose(fld)
        assert np.allclose(maps.rotation_deg, alpha, atol=1e-9)
        assert np.allclose(maps.magnification, 1, atol=1e-9)
        assert np.allclose(maps.aspect, 1, atol=1e-9)
        assert np.allclose(maps.skew_deg, 0, atol=1e-9)

    def test_uniform_scale_gives_magnification(self):
        fld = affine_field(1.7, 0, 0, 1.7, n=11)
        maps = decompose(fld)
        assert np.allclose(maps.magnification, 1.7, atol=1e-6)

    def test_random_affine_matches_qr_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            j = rng.uniform(-0.4, 0.4, (2, 2)) + np.eye(2)
            if np.linalg.det(j) <= 0.05:
                continue
            fld = affine_field(j[0, 0], j[0, 1], j[1, 0], j[1, 1],
                               tx=rng.uniform(-0.1, 0.1), n=7)
            maps = decompose(fld)
            rot, mag, asp, skw = qr_2x2_oracle(j)
            for got, want in ((maps.rotation_deg, rot), (maps.magnification, mag),
                              (maps.aspect, asp), (maps.skew_deg, skw)):
                assert np.allclose(got, want, atol=1e-6)

    def test_degenerate_cells_flagged(self):
        # Reflection has det < 0 everywhere.
        fld = affine_field(-1.0, 0, 0, 1.0, n=5)
        maps = decompose(fld)
        assert maps.degenerate_count == 25
        assert np.all(np.isnan(maps.magnification))
        assert np.all(np.isfinite(maps.displacement_deg))

    def test_requires_3x3(self):
        fld = synth_pal_field(LensSpec(0, 2), 2, 5)
        with pytest.raises(ValueError):
            decompose(fld)


class TestSampleBilinear:
    def test_grid_node_exact(self):
        rng = np.random.default_rng(3)
        grid = rng.normal(size=(6, 5))
        xs = np.linspace(-1, 1, 5)
        ys = np.linspace(1, -1, 6)
        for i in range(6):
            for j in range(5):
                assert sample_bilinear(grid, 1.0, xs[j], ys[i]) == pytest.approx(
                    grid[i, j], abs=1e-12)

    def test_constant_map_everywhere(self):
        grid = np.full((4, 4), 2.5)
        assert sample_bilinear(grid, 1.0, 0.123, -0.54) == pytest.approx(2.5)

    def test_linear_ramp_reproduced(self):
        xs = np.linspace(-1, 1, 9)
        ys = np.linspace(1, -1, 7)
        x, y = np.meshgrid(xs, ys)
        grid = 2.0 * x - 3.0 * y + 0.5
        rng = np.random.default_rng(4)
        qx = rng.uniform(-1, 1, 200)
        qy = rng.uniform(-1, 1, 200)
        got = sample_bilinear(grid, 1.0, qx, qy)
        assert np.allclose(got, 2.0 * qx - 3.0 * qy + 0.5, atol=1e-12)

    def test_out_of_domain_raises(self):
        grid = np.zeros((3, 3))
        with pytest.raises(OutOfDomainError):
            sample_bilinear(grid, 1.0, 1.0001, 0.0)

    def test_masked_variant_flags_outside(self):
        grid = np.ones((3, 3))
        vals, ok = sample_bilinear_masked(grid, 1.0, np.array([0.0, 2.0]),
                                          np.array([0.0, 0.0]))
        assert ok.tolist() == [True, False]
        assert vals[0] == 1.0


class TestFieldCodec:
    def test_round_trip_bytes_equal(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            w, h = rng.integers(1, 9, 2)
            dx = rng.normal(size=(h, w)).astype(np.float32).astype(np.float64)
            dy = rng.normal(size=(h, w)).astype(np.float32).astype(np.float64)
            fld = DistortionField(int(w), int(h), 1.0, dx, dy)
            blob = encode_field(fld)
            assert encode_field(decode_field(blob)) == blob

    def test_1x1_zero_field_is_32_bytes(self):
        # 8 magic + 4 width + 4 height + 8 extent + 8 payload.
        fld = DistortionField(1, 1, 1.0, np.zeros((1, 1)), np.zeros((1, 1)))
        assert len(encode_field(fld)) == 8 + 4 + 4 + 8 + 8 == 32

    def test_field_values_survive(self):
        fld = synth_pal_field(LensSpec(2, 2), 17, 13, 0.75)
        back = decode_field(encode_field(fld))
        assert back.width_px == 17 and back.height_px == 13
        assert back.domain_half_extent == 0.75
        assert np.allclose(back.dx, fld.dx, atol=1e-6)

    def test_bad_magic_names_offset_zero(self):
        blob = bytearray(encode_field(synth_pal_field(LensSpec(0, 0), 2, 2)))
        blob[0] ^= 0xFF
        with pytest.raises(FieldDecodeError) as exc:
            decode_field(bytes(blob))
        assert exc.value.offset == 0

    def test_truncated_payload(self):
        blob = encode_field(synth_pal_field(LensSpec(0, 2), 4, 4))
        with pytest.raises(FieldDecodeError):
            decode_field(blob[:-3])

    def test_non_finite_value_offset(self):
        fld = synth_pal_field(LensSpec(0, 0), 2, 2)
        blob = bytearray(encode_field(fld))
        blob[24:28] = np.float32("nan").tobytes()
        with pytest.raises(FieldDecodeError) as exc:
            decode_field(bytes(blob))
        assert exc.value.offset == 24


class TestPfm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        grid = rng.normal(size=(5, 7)).astype(np.float32).astype(np.float64)
        path = tmp_path / "map.pfm"
        write_pfm(grid, path)
        assert np.array_equal(read_pfm(path), grid)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.pfm"
        write_pfm(np.zeros((2, 3)), path)
        raw = path.read_bytes()
        assert raw.startswith(b"Pf\n3 2\n-1.0\n")
        assert len(raw) == len(b"Pf\n3 2\n-1.0\n") + 4 * 6
