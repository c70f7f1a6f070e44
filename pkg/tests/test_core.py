import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tomodiff import AngleSpec, TiltSeries, UncertaintyMap, ValidationError, Volume, angle_list


class TestAngleSpec:
    def test_paper_ten_degree_range(self):
        angles = angle_list(AngleSpec(10, 1))
        assert angles == [-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5]

    def test_five_views(self):
        assert angle_list(AngleSpec(8, 2)) == [-4, -2, 0, 2, 4]

    def test_degenerate_span(self):
        assert angle_list(AngleSpec(0, 1, center_deg=2.5)) == [2.5]

    def test_truncation_below_limit(self):
        angles = angle_list(AngleSpec(5, 2))
        assert len(angles) == 3
        assert angles[-1] <= 2.5 + 1e-9

    @given(
        step=st.sampled_from([0.25, 0.5, 1.0, 1.5, 2.0, 3.0]),
        k=st.integers(min_value=0, max_value=200),
        center=st.floats(-30, 30),
    )
    @settings(max_examples=200, deadline=None)
    def test_count_for_exact_multiples(self, step, k, center):
        spec = AngleSpec(range_deg=k * step, step_deg=step, center_deg=center)
        angles = spec.angles()
        assert len(angles) == k + 1
        assert np.all(np.diff(angles) > 0) or len(angles) == 1
        # symmetric about center when the span is an exact multiple of the step
        np.testing.assert_allclose(angles + angles[::-1], 2 * center, atol=1e-9)
        assert angles[-1] <= center + spec.range_deg / 2 + 1e-9

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(range_deg=10, step_deg=0),
            dict(range_deg=10, step_deg=-1),
            dict(range_deg=-1, step_deg=1),
            dict(range_deg=float("nan"), step_deg=1),
            dict(range_deg=10, step_deg=float("inf")),
        ],
    )
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValidationError):
            AngleSpec(**kwargs)


class TestVolume:
    def test_rejects_non_finite(self):
        data = np.ones((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Volume(data)
        data[0, 0, 0] = np.inf
        with pytest.raises(ValidationError):
            Volume(data)

    def test_rejects_wrong_rank_and_empty(self):
        with pytest.raises(ValidationError):
            Volume(np.ones((2, 2), dtype=np.float32))
        with pytest.raises(ValidationError):
            Volume(np.ones((0, 2, 2), dtype=np.float32))

    def test_immutable_and_float32(self):
        vol = Volume(np.ones((2, 3, 4), dtype=np.float64))
        assert vol.data.dtype == np.float32
        assert (vol.depth, vol.height, vol.width) == (2, 3, 4)
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 5.0

    def test_with_data_copy_replace(self):
        vol = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        other = vol.with_data(np.ones((2, 2, 2)))
        assert other.data[0, 0, 0] == 1.0
        assert vol.data[0, 0, 0] == 0.0


class TestTiltSeries:
    def test_frame_count_must_match_angles(self):
        spec = AngleSpec(10, 1)  # 11 angles
        with pytest.raises(ValidationError):
            TiltSeries(spec, np.zeros((10, 4, 4), dtype=np.float32))

    def test_rejects_non_finite_frames(self):
        frames = np.zeros((11, 4, 4), dtype=np.float32)
        frames[3, 1, 1] = np.inf
        with pytest.raises(ValidationError):
            TiltSeries(AngleSpec(10, 1), frames)


class TestUncertaintyMap:
    def test_bounds_enforced(self):
        with pytest.raises(ValidationError):
            UncertaintyMap(np.full((2, 2, 2), 1.5, dtype=np.float32))
        with pytest.raises(ValidationError):
            UncertaintyMap(np.full((2, 2, 2), -0.1, dtype=np.float32))
        UncertaintyMap(np.full((2, 2, 2), 0.5, dtype=np.float32))
