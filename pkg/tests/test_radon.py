import numpy as np
import pytest

from tomodiff import AngleSpec, TiltSeries, ValidationError, Volume, back_project, fbp, forward_project
from tomodiff.simulator import ellipsoid_phantom

from reference import naive_forward_plane


def _rand_volume(rng, shape):
    return Volume(rng.random(shape, dtype=np.float32))


class TestForwardProject:
    def test_uniform_axis_aligned_column_sum(self):
        c, d = 0.7, 16
        vol = Volume(np.full((d, 8, 32), c, dtype=np.float32))
        frames = forward_project(vol, AngleSpec(0, 1)).frames
        interior = frames[0, :, 8:24]
        np.testing.assert_allclose(interior, c * d, atol=1e-4)

    def test_impulse_mass_at_zero_tilt(self):
        vol = np.zeros((33, 1, 33), dtype=np.float32)
        vol[16, 0, 16] = 1.0
        frames = forward_project(Volume(vol), AngleSpec(0, 1)).frames
        assert abs(frames.sum() - 1.0) < 1e-4

    def test_impulse_mass_at_oblique_tilts(self):
        # Unit-step bilinear sampling has an angle-dependent footprint gain of
        # 4*(1-cos(phi))*(1-sin(phi)) when a sample lands on the voxel, so the
        # 1e-4 budget only holds at 0 degrees; within the narrow-tilt regime
        # the deviation stays below 3 percent.
        vol = np.zeros((33, 1, 33), dtype=np.float32)
        vol[16, 0, 16] = 1.0
        for phi in (-7, -3, 3, 7):
            frames = forward_project(Volume(vol), AngleSpec(0, 1, center_deg=phi)).frames
            assert abs(frames.sum() - 1.0) < 3e-2

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(7)
        vol = _rand_volume(rng, (16, 4, 16))
        spec = AngleSpec(10, 1)
        got = forward_project(vol, spec).frames
        for h in range(4):
            want = naive_forward_plane(vol.data[:, h, :].astype(np.float64), spec.angles())
            np.testing.assert_allclose(got[:, h, :], want, atol=1e-4)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        spec = AngleSpec(12, 3)
        x1, x2 = _rand_volume(rng, (8, 6, 8)), _rand_volume(rng, (8, 6, 8))
        a, b = 2.5, -1.25
        combo = Volume(a * x1.data + b * x2.data)
        lhs = forward_project(combo, spec).frames.astype(np.float64)
        rhs = a * forward_project(x1, spec).frames.astype(np.float64) + b * forward_project(
            x2, spec
        ).frames.astype(np.float64)
        assert np.abs(lhs - rhs).max() <= 1e-5 * max(1.0, np.abs(rhs).max())

    def test_height_rows_decompose(self):
        rng = np.random.default_rng(11)
        spec = AngleSpec(6, 2)
        vol = _rand_volume(rng, (8, 6, 8))
        perm = rng.permutation(6)
        frames = forward_project(vol, spec).frames
        frames_perm = forward_project(Volume(vol.data[:, perm, :]), spec).frames
        np.testing.assert_array_equal(frames_perm, frames[:, perm, :])


class TestBackProject:
    def test_zeros_map_to_zeros(self):
        spec = AngleSpec(10, 5)
        tilts = TiltSeries(spec, np.zeros((3, 4, 8), dtype=np.float32))
        assert not back_project(tilts, depth=6).data.any()

    def test_ones_frame_zero_tilt_unit_interior(self):
        spec = AngleSpec(0, 1)
        tilts = TiltSeries(spec, np.ones((1, 4, 16), dtype=np.float32))
        vol = back_project(tilts, depth=8).data
        np.testing.assert_allclose(vol[:, :, 4:12], 1.0, atol=1e-5)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(5)
        spec = AngleSpec(8, 4)  # 3 angles
        x = _rand_volume(rng, (8, 8, 8))
        y = TiltSeries(spec, rng.random((3, 8, 8), dtype=np.float32))
        ax = forward_project(x, spec).frames.astype(np.float64)
        aty = back_project(y, 8).data.astype(np.float64)
        lhs = float(np.sum(ax * y.frames.astype(np.float64)))
        rhs = float(np.sum(x.data.astype(np.float64) * aty))
        denom = np.linalg.norm(ax) * np.linalg.norm(y.frames)
        assert abs(lhs - rhs) / denom < 1e-5

    def test_depth_required_positive(self):
        tilts = TiltSeries(AngleSpec(0, 1), np.ones((1, 4, 4), dtype=np.float32))
        with pytest.raises(ValidationError):
            back_project(tilts, depth=0)


class TestFbp:
    def test_none_filter_is_scaled_backprojection(self):
        rng = np.random.default_rng(2)
        tilts = TiltSeries(AngleSpec(0, 1), rng.random((1, 4, 8), dtype=np.float32))
        got = fbp(tilts, depth=4, filter="none").data
        want = back_project(tilts, 4).data * np.float32(np.pi / 2)
        np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_full_coverage_reconstructs_phantom(self):
        vol = ellipsoid_phantom((16, 64, 64))
        y = forward_project(vol, AngleSpec(180, 1))
        rec = fbp(y, depth=16)
        rmse = float(np.sqrt(np.mean((rec.data - vol.data) ** 2)))
        assert rmse < 0.05

    def test_missing_wedge_degrades(self):
        vol = ellipsoid_phantom((16, 64, 64))
        full = fbp(forward_project(vol, AngleSpec(180, 1)), 16)
        narrow = fbp(forward_project(vol, AngleSpec(10, 1)), 16)
        rmse_full = float(np.sqrt(np.mean((full.data - vol.data) ** 2)))
        rmse_narrow = float(np.sqrt(np.mean((narrow.data - vol.data) ** 2)))
        assert rmse_narrow > rmse_full

    def test_narrow_frames_rejected(self):
        tilts = TiltSeries(AngleSpec(0, 1), np.ones((1, 4, 1), dtype=np.float32))
        with pytest.raises(ValidationError):
            fbp(tilts, depth=4, filter="ramp")
        fbp(tilts, depth=4, filter="none")  # no filtering, no restriction

    def test_unknown_filter_rejected(self):
        tilts = TiltSeries(AngleSpec(0, 1), np.ones((1, 4, 8), dtype=np.float32))
        with pytest.raises(ValidationError):
            fbp(tilts, depth=4, filter="hamming")
