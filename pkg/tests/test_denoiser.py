import struct
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from tomodiff import (
    OracleDenoiser,
    ProtocolError,
    SmoothingDenoiser,
    ValidationError,
    Volume,
    ZeroDenoiser,
    ddim_step,
    make_schedule,
    open_external_session,
)
from tomodiff.denoiser import (
    DenoiseRequest,
    MAGIC,
    encode_frame,
    make_header,
    parse_header,
)

from golden.gen_golden import DIMS, frames, payload_x_t, payload_condition

STUBS = Path(__file__).parent / "stubs"
GOLDEN = Path(__file__).parent / "golden"


def _req(x_t, t=0.5, condition=None, alpha=0.6, beta=0.8):
    return DenoiseRequest(
        x_t=x_t,
        condition=condition,
        t=t,
        theta_deg=10.0,
        dtheta_deg=1.0,
        alpha_t=alpha,
        beta_t=beta,
    )


class TestBuiltinDenoisers:
    def test_zero_kind_returns_zeros(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 4, 4), dtype=np.float32)
        assert not ZeroDenoiser().predict_noise(_req(x)).any()

    def test_smoothing_small_sigma_limit(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 6, 6), dtype=np.float32)
        alpha, beta = 0.6, 0.8
        eps = SmoothingDenoiser(1e-4).predict_noise(_req(x, alpha=alpha, beta=beta))
        want = (1 - alpha) / beta * x
        np.testing.assert_allclose(eps, want, atol=1e-3)

    def test_smoothing_matches_blur_formula(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 6, 6), dtype=np.float32)
        sigma, alpha, beta = 1.5, 0.3, np.sqrt(1 - 0.09)
        eps = SmoothingDenoiser(sigma).predict_noise(_req(x, alpha=alpha, beta=beta))
        want = (x - np.float32(alpha) * ndimage.gaussian_filter(x, sigma)) / np.float32(beta)
        np.testing.assert_allclose(eps, want, atol=1e-6)

    def test_smoothing_sigma_validated(self):
        with pytest.raises(ValidationError):
            SmoothingDenoiser(0.0)

    def test_oracle_round_trip_identity(self):
        # float32 storage amplifies the divide-by-alpha cancellation, so the
        # achievable tolerance scales with 1/alpha (1e-6 once alpha is not
        # tiny, ~1e-4 at the floored first step).
        rng = np.random.default_rng(3)
        gt = Volume(rng.random((5, 5, 5), dtype=np.float32))
        den = OracleDenoiser(gt)
        sched = make_schedule(20)
        for k in range(len(sched.times) - 1):
            alpha, beta = float(sched.alphas[k]), float(sched.betas[k])
            if beta <= 1e-6:
                continue
            x_t = np.float32(alpha) * gt.data + np.float32(beta) * rng.standard_normal(
                (5, 5, 5), dtype=np.float32
            )
            eps = den.predict_noise(_req(x_t, t=float(sched.times[k]), alpha=alpha, beta=beta))
            x0, _ = ddim_step(x_t, eps, alpha, beta, 1.0, 0.0)
            np.testing.assert_allclose(x0, gt.data, atol=max(1e-6, 2e-7 / alpha))

    def test_beta_zero_rejected(self):
        gt = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValidationError):
            OracleDenoiser(gt).predict_noise(_req(gt.data.copy(), t=0.0, alpha=1.0, beta=0.0))
        with pytest.raises(ValidationError):
            SmoothingDenoiser(1.0).predict_noise(_req(gt.data.copy(), t=0.0, alpha=1.0, beta=0.0))

    def test_oracle_shape_check(self):
        gt = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValidationError):
            OracleDenoiser(gt).predict_noise(_req(np.zeros((3, 3, 3), dtype=np.float32)))

    def test_condition_shape_check(self):
        with pytest.raises(ValidationError):
            _req(np.zeros((2, 2, 2), dtype=np.float32), condition=np.zeros((3, 3, 3), dtype=np.float32))


class TestFraming:
    def test_golden_bytes_are_reproduced(self):
        for name, blob in frames().items():
            assert (GOLDEN / name).read_bytes() == blob, name

    def test_golden_request_parses_back(self):
        blob = (GOLDEN / "predict_request.bin").read_bytes()
        assert blob[:8] == MAGIC
        (head_len,) = struct.unpack("<I", blob[8:12])
        header = parse_header(blob[12 : 12 + head_len])
        assert header["kind"] == "predict"
        assert header["has_condition"] is True
        assert tuple(header["dims"]) == DIMS
        payload = np.frombuffer(
            blob[12 + head_len : 12 + head_len + 96], dtype="<f4"
        ).reshape(DIMS)
        np.testing.assert_array_equal(payload, payload_x_t())
        cond = np.frombuffer(blob[12 + head_len + 96 :], dtype="<f4").reshape(DIMS)
        np.testing.assert_array_equal(cond, payload_condition())

    def test_header_is_canonical_json(self):
        blob = encode_frame(make_header("bye", (1, 2, 3)))
        (head_len,) = struct.unpack("<I", blob[8:12])
        text = blob[12 : 12 + head_len].decode("utf-8")
        assert text == (
            '{"dims":[1,2,3],"dtheta_deg":0.0,"has_condition":false,'
            '"kind":"bye","t":0.0,"theta_deg":0.0}'
        )

    def test_parse_rejects_bad_headers(self):
        with pytest.raises(ProtocolError):
            parse_header(b"not json")
        with pytest.raises(ProtocolError):
            parse_header(b'{"no_kind": 1}')
        with pytest.raises(ProtocolError):
            parse_header(b'{"kind": "predict", "dims": [1, 2]}')
        with pytest.raises(ProtocolError):
            parse_header(b'{"kind": "predict", "dims": [1, 2, -3]}')


class TestExternalSession:
    def _cmd(self, script, *args):
        return [sys.executable, str(STUBS / script), *map(str, args)]

    def test_echo_stub_handshake_and_predict(self):
        shape = (4, 6, 8)
        session = open_external_session(self._cmd("echo_denoiser.py"), shape, timeout_s=30)
        with session:
            rng = np.random.default_rng(0)
            x = rng.standard_normal(shape, dtype=np.float32)
            eps = session.predict(_req(x))
            np.testing.assert_array_equal(eps, x)
            cond = rng.standard_normal(shape, dtype=np.float32)
            eps2 = session.predict(_req(x, condition=cond))
            np.testing.assert_array_equal(eps2, x)
        assert session._proc.returncode == 0

    def test_wrong_shape_declaration_rejected(self):
        with pytest.raises(ProtocolError, match="declared shape"):
            open_external_session(
                self._cmd("echo_denoiser.py", 40, 128, 128), (8, 16, 16), timeout_s=30
            )

    def test_corrupted_magic_names_offset(self):
        for offset in (0, 5):
            with pytest.raises(ProtocolError, match=f"byte offset {offset}"):
                open_external_session(
                    self._cmd("corrupt_stub.py", offset), (2, 2, 2), timeout_s=30
                )

    def test_unresponsive_peer_times_out(self):
        with pytest.raises(ProtocolError, match="timed out"):
            open_external_session(self._cmd("silent_stub.py"), (2, 2, 2), timeout_s=1.5)

    def test_missing_executable(self):
        with pytest.raises(ValidationError):
            open_external_session(["/nonexistent/denoiser"], (2, 2, 2))
