"""Noise predictors: built-in analytic denoisers and a subprocess bridge.

A denoiser estimates the noise component of a noisy volume ``x_t`` given
the diffusion time ``t``, an optional conditioning volume, and the
acquisition geometry scalars (angular range and increment, in degrees).
Built-in kinds cover testing and classical regularization; learned models
run out of process and speak the TDNZ0001 wire protocol below.

Wire protocol (TDNZ0001)
------------------------
Messages alternate request/response over stdin/stdout. Each message is:

* 8 magic bytes ``TDNZ0001``;
* a 4-byte little-endian header length;
* a UTF-8 JSON header, serialized with sorted keys and ``(",", ":")``
  separators so frames are byte-reproducible, with fields ``kind``
  (``hello`` | ``predict`` | ``bye`` | ``error``), ``t``, ``theta_deg``,
  ``dtheta_deg``, ``has_condition`` and ``dims`` (``[depth, height,
  width]``);
* a raw little-endian float32 payload: for predict requests the volume
  ``x_t`` followed by the conditioning volume when ``has_condition`` is
  true; for predict responses the noise estimate. hello/bye/error frames
  carry no payload.

The handshake is one ``hello`` request (dims = the shape the client
expects) answered by a ``hello`` response in which the peer declares its
native shape. An absent condition is transmitted as ``has_condition =
false`` with no payload; the peer substitutes whatever it trained for the
unconditional branch. ``error`` responses carry a ``message`` field.
"""

from __future__ import annotations

import json
import math
import os
import select
import shlex
import struct
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DTYPE, Volume
from .errors import ProtocolError, ValidationError

MAGIC = b"TDNZ0001"
_HEADER_CAP = 1 << 20
_F32LE = np.dtype("<f4")

DEFAULT_TIMEOUT_S = 60.0


@dataclass
class DenoiseRequest:
    """One noise-prediction query.

    ``alpha_t``/``beta_t`` are the scheduler coefficients already resolved
    for ``t`` by the caller, so analytic denoisers invert exactly the same
    numbers the sampling loop uses.
    """

    x_t: np.ndarray
    condition: np.ndarray | None
    t: float
    theta_deg: float
    dtheta_deg: float
    alpha_t: float
    beta_t: float

    def __post_init__(self):
        self.x_t = np.asarray(self.x_t, dtype=DTYPE)
        if self.condition is not None:
            self.condition = np.asarray(self.condition, dtype=DTYPE)
            if self.condition.shape != self.x_t.shape:
                raise ValidationError(
                    f"condition shape {self.condition.shape} != x_t shape {self.x_t.shape}"
                )


class ZeroDenoiser:
    """Predicts zero noise everywhere; the do-nothing baseline."""

    shape = None

    def predict_noise(self, req: DenoiseRequest) -> np.ndarray:
        return np.zeros_like(req.x_t)


class SmoothingDenoiser:
    """Gaussian-blur prior: treats the blurred input as the clean estimate.

    The implied noise is ``(x_t - alpha * blur(x_t)) / beta``, which the
    sampling identity turns back into the blurred volume.
    """

    shape = None

    def __init__(self, sigma: float = 1.0):
        if not sigma > 0:
            raise ValidationError(f"sigma must be > 0, got {sigma}")
        self.sigma = float(sigma)

    def predict_noise(self, req: DenoiseRequest) -> np.ndarray:
        _require_noise_defined(req)
        x0_est = ndimage.gaussian_filter(req.x_t, self.sigma)
        return (req.x_t - DTYPE(req.alpha_t) * x0_est) / DTYPE(req.beta_t)


class OracleDenoiser:
    """Inverts the forward noising exactly against a known ground truth.

    Primarily a test instrument: plugged into the sampler it reproduces the
    ground truth at every step.
    """

    def __init__(self, ground_truth: Volume):
        self.ground_truth = ground_truth
        self.shape = ground_truth.shape

    def predict_noise(self, req: DenoiseRequest) -> np.ndarray:
        _require_noise_defined(req)
        if req.x_t.shape != self.shape:
            raise ValidationError(f"x_t shape {req.x_t.shape} != oracle shape {self.shape}")
        gt = self.ground_truth.data
        return (req.x_t - DTYPE(req.alpha_t) * gt) / DTYPE(req.beta_t)


def _require_noise_defined(req: DenoiseRequest) -> None:
    if not req.beta_t > 0:
        raise ValidationError(f"noise is undefined at beta={req.beta_t} (t={req.t})")


# --------------------------------------------------------------------------
# Wire framing


def encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_frame(header: dict, *payloads: np.ndarray) -> bytes:
    """Serialize one protocol message to bytes."""
    head = encode_header(header)
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    for p in payloads:
        parts.append(np.ascontiguousarray(p, dtype=_F32LE).tobytes())
    return b"".join(parts)


def make_header(
    kind: str,
    dims: tuple[int, int, int],
    t: float = 0.0,
    theta_deg: float = 0.0,
    dtheta_deg: float = 0.0,
    has_condition: bool = False,
) -> dict:
    return {
        "kind": kind,
        "t": float(t),
        "theta_deg": float(theta_deg),
        "dtheta_deg": float(dtheta_deg),
        "has_condition": bool(has_condition),
        "dims": [int(d) for d in dims],
    }


def _check_magic(got: bytes) -> None:
    if got == MAGIC:
        return
    for i, (a, b) in enumerate(zip(got, MAGIC)):
        if a != b:
            raise ProtocolError(
                f"bad magic at byte offset {i}: expected 0x{b:02x}, got 0x{a:02x}"
            )
    raise ProtocolError(f"bad magic: frame shorter than {len(MAGIC)} bytes")


def parse_header(blob: bytes) -> dict:
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or "kind" not in header:
        raise ProtocolError("header is not an object with a 'kind' field")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 0 for d in dims)
    ):
        raise ProtocolError(f"header dims must be three non-negative integers, got {dims!r}")
    return header


def payload_count(header: dict, is_request: bool) -> int:
    kind = header["kind"]
    if kind != "predict":
        return 0
    return 2 if (is_request and header.get("has_condition")) else 1


# --------------------------------------------------------------------------
# Deadline-guarded pipe I/O


def _remaining(deadline: float) -> float | None:
    """Seconds until the deadline for select(); None means wait forever."""
    if math.isinf(deadline):
        return None
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise ProtocolError("deadline exceeded")
    return remaining


def _read_exact(fd: int, n: int, deadline: float, consumed: int) -> bytes:
    """Read exactly ``n`` bytes or raise, tracking the absolute stream offset."""
    chunks = []
    got = 0
    while got < n:
        try:
            timeout = _remaining(deadline)
        except ProtocolError:
            raise ProtocolError(f"timed out reading at byte offset {consumed + got}") from None
        ready, _, _ = select.select([fd], [], [], timeout)
        if not ready:
            continue
        chunk = os.read(fd, n - got)
        if not chunk:
            raise ProtocolError(
                f"peer closed the stream at byte offset {consumed + got}; "
                f"expected {n - got} more bytes"
            )
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _write_all(fd: int, data: bytes, deadline: float) -> None:
    view = memoryview(data)
    while view:
        try:
            timeout = _remaining(deadline)
        except ProtocolError:
            raise ProtocolError("timed out writing a frame") from None
        _, ready, _ = select.select([], [fd], [], timeout)
        if not ready:
            continue
        try:
            n = os.write(fd, view)
        except BrokenPipeError as exc:
            raise ProtocolError("peer closed the stream while writing") from exc
        view = view[n:]


def read_frame(fd: int, deadline: float, is_request: bool) -> tuple[dict, list[np.ndarray]]:
    """Read one full frame from ``fd``; returns (header, payload volumes)."""
    consumed = 0
    magic = _read_exact(fd, len(MAGIC), deadline, consumed)
    _check_magic(magic)
    consumed += len(MAGIC)
    raw_len = _read_exact(fd, 4, deadline, consumed)
    consumed += 4
    (head_len,) = struct.unpack("<I", raw_len)
    if head_len == 0 or head_len > _HEADER_CAP:
        raise ProtocolError(f"implausible header length {head_len} at byte offset 8")
    head = _read_exact(fd, head_len, deadline, consumed)
    consumed += head_len
    header = parse_header(head)
    d, h, w = header["dims"]
    n_vox = d * h * w
    payloads = []
    for _ in range(payload_count(header, is_request)):
        raw = _read_exact(fd, 4 * n_vox, deadline, consumed)
        consumed += 4 * n_vox
        payloads.append(np.frombuffer(raw, dtype=_F32LE).reshape(d, h, w).astype(DTYPE))
    return header, payloads


# --------------------------------------------------------------------------
# External sessions


class ExternalDenoiserSession:
    """One live external denoiser process; single-owner, one request in flight."""

    def __init__(self, proc: subprocess.Popen, shape: tuple[int, int, int], timeout_s: float):
        self._proc = proc
        self.shape = shape
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._closed = False

    def _roundtrip(self, header: dict, *payloads: np.ndarray) -> tuple[dict, list[np.ndarray]]:
        if self._closed:
            raise ProtocolError("session is closed")
        deadline = time.monotonic() + self.timeout_s
        with self._lock:
            _write_all(self._proc.stdin.fileno(), encode_frame(header, *payloads), deadline)
            self._proc.stdin.flush()
            return read_frame(self._proc.stdout.fileno(), deadline, is_request=False)

    def predict(self, req: DenoiseRequest) -> np.ndarray:
        if req.x_t.shape != self.shape:
            raise ValidationError(f"x_t shape {req.x_t.shape} != session shape {self.shape}")
        header = make_header(
            "predict",
            self.shape,
            t=req.t,
            theta_deg=req.theta_deg,
            dtheta_deg=req.dtheta_deg,
            has_condition=req.condition is not None,
        )
        payloads = (req.x_t,) if req.condition is None else (req.x_t, req.condition)
        resp, resp_payloads = self._roundtrip(header, *payloads)
        if resp["kind"] == "error":
            raise ProtocolError(f"peer reported an error: {resp.get('message', '<none>')}")
        if resp["kind"] != "predict":
            raise ProtocolError(f"expected a predict response, got kind={resp['kind']!r}")
        if tuple(resp["dims"]) != self.shape:
            raise ProtocolError(f"response dims {resp['dims']} != session shape {self.shape}")
        return resp_payloads[0]

    def close(self) -> None:
        if self._closed:
            return
        try:
            self._roundtrip(make_header("bye", self.shape))
        except ProtocolError:
            pass
        finally:
            self._closed = True
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=self.timeout_s)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_external_session(
    command: str | list[str],
    shape: tuple[int, int, int],
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> ExternalDenoiserSession:
    """Spawn an external denoiser and perform the hello handshake.

    ``shape`` is the volume shape this client intends to send; the session
    fails if the peer declares anything else.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv:
        raise ValidationError("external denoiser command is empty")
    try:
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    except OSError as exc:
        raise ValidationError(f"cannot spawn external denoiser {argv[0]!r}: {exc}") from exc
    session = ExternalDenoiserSession(proc, tuple(int(d) for d in shape), timeout_s)
    try:
        resp, _ = session._roundtrip(make_header("hello", shape))
    except ProtocolError:
        proc.kill()
        proc.wait()
        raise
    if resp["kind"] == "error":
        proc.kill()
        proc.wait()
        raise ProtocolError(f"peer rejected the handshake: {resp.get('message', '<none>')}")
    if resp["kind"] != "hello":
        proc.kill()
        proc.wait()
        raise ProtocolError(f"expected a hello response, got kind={resp['kind']!r}")
    declared = tuple(resp["dims"])
    if declared != session.shape:
        proc.kill()
        proc.wait()
        raise ProtocolError(f"peer declared shape {declared}, expected {session.shape}")
    return session


class ExternalDenoiser:
    """Adapter exposing an open session through the denoiser interface."""

    def __init__(self, session: ExternalDenoiserSession):
        self.session = session
        self.shape = session.shape

    def predict_noise(self, req: DenoiseRequest) -> np.ndarray:
        return self.session.predict(req)
