import math

import numpy as np
import pytest

from tomodiff import MetricReport, ValidationError, Volume, align_quartiles, evaluate
from tomodiff.metrics import quartiles, ssim3d

from reference import sorted_quartiles


def _rand_vol(seed, shape=(6, 8, 8), lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(lo, hi, shape).astype(np.float32)
    return Volume(data)


class TestAlignQuartiles:
    def test_inverts_affine_distortion(self):
        ref = _rand_vol(0)
        recon = Volume(2.0 * ref.data + 1.0)
        aligned = align_quartiles(recon, ref)
        np.testing.assert_allclose(aligned.data, ref.data, atol=1e-6)

    def test_identity_when_already_aligned(self):
        ref = _rand_vol(1)
        aligned = align_quartiles(ref, ref)
        np.testing.assert_allclose(aligned.data, ref.data, atol=1e-7)

    def test_quartiles_match_after_alignment(self):
        recon, ref = _rand_vol(2, lo=-3, hi=5), _rand_vol(3)
        aligned = align_quartiles(recon, ref)
        got = quartiles(aligned.data)
        want = quartiles(ref.data)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_quantile_convention_matches_sort_oracle(self):
        data = _rand_vol(4).data
        np.testing.assert_allclose(quartiles(data), sorted_quartiles(data), atol=1e-12)

    def test_idempotent(self):
        recon, ref = _rand_vol(5), _rand_vol(6)
        once = align_quartiles(recon, ref)
        twice = align_quartiles(once, ref)
        assert float(np.abs(twice.data - once.data).max()) < 1e-9 * 10

    def test_degenerate_reconstruction_rejected(self):
        ref = _rand_vol(7)
        flat = Volume(np.full((6, 8, 8), 0.3, dtype=np.float32))
        with pytest.raises(ValidationError):
            align_quartiles(flat, ref)


class TestEvaluate:
    def test_identity_case(self):
        ref = _rand_vol(8)
        report = evaluate(ref, ref, align=False)
        assert report.rmse == 0.0
        assert math.isinf(report.psnr)
        assert report.ssim == 1.0

    def test_constant_offset_arithmetic(self):
        rng = np.random.default_rng(9)
        data = rng.uniform(0, 1, (6, 8, 8)).astype(np.float32)
        data.ravel()[0] = 0.0
        data.ravel()[1] = 1.0  # peak exactly 1
        ref = Volume(data)
        recon = Volume(data + np.float32(0.1))
        report = evaluate(recon, ref, align=False)
        assert abs(report.rmse - 0.1) < 1e-6
        assert abs(report.psnr - 20.0) < 1e-4

    def test_alignment_removes_offset(self):
        ref = _rand_vol(10)
        recon = Volume(ref.data + np.float32(0.1))
        report = evaluate(recon, ref, align=True)
        assert report.rmse < 1e-6
        assert report.aligned

    def test_affine_invariance_when_aligned(self):
        ref = _rand_vol(11)
        recon = _rand_vol(12)
        base = evaluate(recon, ref, align=True)
        warped = evaluate(Volume(3.7 * recon.data - 0.9), ref, align=True)
        assert abs(base.rmse - warped.rmse) < 1e-6
        assert abs(base.ssim - warped.ssim) < 1e-6
        assert abs(base.psnr - warped.psnr) < 1e-3

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            evaluate(_rand_vol(13), _rand_vol(14, shape=(4, 4, 4)))

    def test_constant_reference_rejected(self):
        flat = Volume(np.full((4, 4, 4), 0.5, dtype=np.float32))
        with pytest.raises(ValidationError):
            evaluate(_rand_vol(15, shape=(4, 4, 4)), flat)

    def test_report_serialization(self):
        report = MetricReport(rmse=0.0, psnr=math.inf, ssim=1.0, aligned=True)
        text = report.to_text()
        assert "psnr=inf" in text and "aligned=true" in text
        record = report.to_record()
        assert record["psnr"] is None and record["psnr_inf"] is True


class TestSsim:
    def test_symmetric(self):
        a, b = _rand_vol(16).data, _rand_vol(17).data
        assert ssim3d(a, b, 1.0) == pytest.approx(ssim3d(b, a, 1.0), abs=1e-12)

    def test_strictly_below_one_for_different_inputs(self):
        a, b = _rand_vol(18).data, _rand_vol(19).data
        assert ssim3d(a, b, 1.0) < 1.0

    def test_bounded(self):
        a, b = _rand_vol(20).data, -_rand_vol(21).data
        val = ssim3d(a, b, 1.0)
        assert -1.0 <= val <= 1.0
