import io

import numpy as np
import pytest

from tomotrainer import wire

from conftest import GOLDEN_DIR

DIMS = (2, 3, 4)


def _x_t():
    return ((np.arange(24, dtype=np.float32) % 7) / 7).reshape(DIMS)


def _condition():
    return (np.arange(24, dtype=np.float32) / 24).reshape(DIMS)


class TestGoldenFrames:
    """This implementation must emit exactly the repo's canonical bytes."""

    def test_hello_request(self):
        got = wire.encode_frame(wire.make_header("hello", DIMS))
        assert got == (GOLDEN_DIR / "hello_request.bin").read_bytes()

    def test_predict_request(self):
        got = wire.encode_frame(
            wire.make_header(
                "predict", DIMS, t=0.5, theta_deg=8.0, dtheta_deg=2.0, has_condition=True
            ),
            _x_t(),
            _condition(),
        )
        assert got == (GOLDEN_DIR / "predict_request.bin").read_bytes()

    def test_predict_response(self):
        got = wire.encode_frame(
            wire.make_header("predict", DIMS, t=0.5, theta_deg=8.0, dtheta_deg=2.0),
            -_x_t() / 2,
        )
        assert got == (GOLDEN_DIR / "predict_response.bin").read_bytes()

    def test_bye_request(self):
        got = wire.encode_frame(wire.make_header("bye", DIMS))
        assert got == (GOLDEN_DIR / "bye_request.bin").read_bytes()

    def test_golden_round_trip(self):
        blob = (GOLDEN_DIR / "predict_request.bin").read_bytes()
        header, payloads = wire.read_frame(io.BytesIO(blob), is_request=True)
        assert header["kind"] == "predict"
        assert header["t"] == 0.5
        assert len(payloads) == 2
        np.testing.assert_array_equal(payloads[0], _x_t())
        np.testing.assert_array_equal(payloads[1], _condition())


class TestFrameParsing:
    def test_bad_magic_offset(self):
        blob = bytearray(wire.encode_frame(wire.make_header("bye", DIMS)))
        blob[3] ^= 0xFF
        with pytest.raises(wire.WireError) as err:
            wire.read_frame(io.BytesIO(bytes(blob)), is_request=True)
        assert err.value.offset == 3

    def test_eof_at_boundary_is_peer_closed(self):
        with pytest.raises(wire.PeerClosed):
            wire.read_frame(io.BytesIO(b""), is_request=True)

    def test_eof_mid_frame_is_error(self):
        blob = wire.encode_frame(wire.make_header("bye", DIMS))
        with pytest.raises(wire.WireError):
            wire.read_frame(io.BytesIO(blob[:10]), is_request=True)

    def test_truncated_payload_is_error(self):
        blob = wire.encode_frame(
            wire.make_header("predict", DIMS, has_condition=False), _x_t()
        )
        with pytest.raises(wire.WireError):
            wire.read_frame(io.BytesIO(blob[:-5]), is_request=True)

    def test_response_payload_count_ignores_condition_flag(self):
        blob = wire.encode_frame(
            wire.make_header("predict", DIMS, has_condition=True), _x_t()
        )
        header, payloads = wire.read_frame(io.BytesIO(blob), is_request=False)
        assert len(payloads) == 1
