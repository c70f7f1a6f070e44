import subprocess
import sys

import numpy as np
import pytest

import tomodiff
from tomodiff.denoiser import DenoiseRequest

from tomotrainer import wire


def serve_cmd(checkpoint):
    return [sys.executable, "-m", "tomotrainer", "serve", str(checkpoint)]


def _req(x, cond=None, t=0.5, theta=8.0, dtheta=2.0):
    return DenoiseRequest(
        x_t=x, condition=cond, t=t, theta_deg=theta, dtheta_deg=dtheta,
        alpha_t=0.7, beta_t=0.71,
    )


class TestServeAgainstToolkitOpener:
    def test_handshake_predicts_and_bye(self, trained_checkpoint):
        shape = (8, 32, 32)
        rng = np.random.default_rng(0)
        session = tomodiff.open_external_session(
            serve_cmd(trained_checkpoint), shape, timeout_s=120
        )
        with session:
            for i in range(10):
                x = rng.standard_normal(shape, dtype=np.float32)
                cond = rng.standard_normal(shape, dtype=np.float32) if i % 2 else None
                eps = session.predict(_req(x, cond, t=(i + 1) / 10))
                assert eps.shape == shape
                assert np.isfinite(eps).all()
        assert session._proc.returncode == 0

    def test_prediction_is_deterministic(self, trained_checkpoint):
        shape = (8, 32, 32)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(shape, dtype=np.float32)
        outs = []
        for _ in range(2):
            with tomodiff.open_external_session(
                serve_cmd(trained_checkpoint), shape, timeout_s=120
            ) as session:
                outs.append(session.predict(_req(x)).tobytes())
        assert outs[0] == outs[1]

    def test_wrong_shape_is_rejected_by_opener(self, trained_checkpoint):
        with pytest.raises(tomodiff.ProtocolError, match="declared shape"):
            tomodiff.open_external_session(
                serve_cmd(trained_checkpoint), (4, 16, 16), timeout_s=120
            )


class TestServeErrorPaths:
    def test_malformed_frame_gets_error_frame_and_exit_3(self, trained_checkpoint):
        proc = subprocess.Popen(
            serve_cmd(trained_checkpoint), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        proc.stdin.write(b"NOT_A_MAGIC_____garbage")
        proc.stdin.flush()
        header, _ = wire.read_frame(proc.stdout, is_request=False)
        assert header["kind"] == "error"
        assert "message" in header
        proc.stdin.close()
        assert proc.wait(timeout=60) == 3

    def test_mismatched_predict_dims_is_protocol_error(self, trained_checkpoint):
        proc = subprocess.Popen(
            serve_cmd(trained_checkpoint), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        bad = np.zeros((2, 2, 2), dtype=np.float32)
        proc.stdin.write(wire.encode_frame(wire.make_header("predict", (2, 2, 2)), bad))
        proc.stdin.flush()
        header, _ = wire.read_frame(proc.stdout, is_request=False)
        assert header["kind"] == "error"
        proc.stdin.close()
        assert proc.wait(timeout=60) == 3

    def test_eof_without_bye_exits_cleanly(self, trained_checkpoint):
        proc = subprocess.Popen(
            serve_cmd(trained_checkpoint), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        proc.stdin.close()
        assert proc.wait(timeout=60) == 0


class TestReconstructionThroughServedModel:
    def test_guided_sample_completes(self, trained_checkpoint, dataset_dir):
        from tomotrainer.files import read_manifest

        rec = read_manifest(dataset_dir / "manifest.jsonl")[0]
        tilts = tomodiff.load_tilts(dataset_dir / rec["tilts"])
        shape = (8, 32, 32)
        session = tomodiff.open_external_session(
            serve_cmd(trained_checkpoint), shape, timeout_s=120
        )
        with session:
            out = tomodiff.guided_sample(
                tilts,
                tomodiff.ExternalDenoiser(session),
                tomodiff.GuidanceConfig(
                    cfg_scale=1.5, schedule=tomodiff.make_schedule(6), seed=0
                ),
            )
        assert out.shape == shape
        assert np.isfinite(out.data).all()
