"""TDNZ0001 framing, implemented against the published protocol description.

Deliberately self-contained: this side of the wire must interoperate with
the reconstruction toolkit byte for byte without sharing code with it.
Frames are magic ``TDNZ0001``, a little-endian uint32 header length, a
canonical JSON header (sorted keys, compact separators) with fields
``kind``/``t``/``theta_deg``/``dtheta_deg``/``has_condition``/``dims``,
then raw little-endian float32 payloads.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"TDNZ0001"
HEADER_CAP = 1 << 20
F32LE = np.dtype("<f4")


class WireError(Exception):
    """Malformed or unreadable frame; offset is relative to the frame start."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")


class PeerClosed(Exception):
    """The other end closed the stream at a frame boundary."""


def make_header(
    kind: str,
    dims: tuple[int, int, int],
    t: float = 0.0,
    theta_deg: float = 0.0,
    dtheta_deg: float = 0.0,
    has_condition: bool = False,
    **extra,
) -> dict:
    header = {
        "kind": kind,
        "t": float(t),
        "theta_deg": float(theta_deg),
        "dtheta_deg": float(dtheta_deg),
        "has_condition": bool(has_condition),
        "dims": [int(d) for d in dims],
    }
    header.update(extra)
    return header


def encode_frame(header: dict, *payloads: np.ndarray) -> bytes:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    parts.extend(np.ascontiguousarray(p, dtype=F32LE).tobytes() for p in payloads)
    return b"".join(parts)


def _read_exact(stream: BinaryIO, n: int, offset: int) -> bytes:
    buf = stream.read(n)
    if buf is None or len(buf) == 0:
        if offset == 0:
            raise PeerClosed()
        raise WireError("stream ended mid-frame", offset)
    if len(buf) < n:
        raise WireError("stream ended mid-frame", offset + len(buf))
    return buf


def read_frame(stream: BinaryIO, is_request: bool) -> tuple[dict, list[np.ndarray]]:
    """Read one frame; raises PeerClosed on EOF at a frame boundary."""
    magic = _read_exact(stream, len(MAGIC), 0)
    if magic != MAGIC:
        bad = next(i for i, (a, b) in enumerate(zip(magic, MAGIC)) if a != b)
        raise WireError("bad magic", bad)
    raw = _read_exact(stream, 4, len(MAGIC))
    (head_len,) = struct.unpack("<I", raw)
    if head_len == 0 or head_len > HEADER_CAP:
        raise WireError(f"implausible header length {head_len}", len(MAGIC))
    blob = _read_exact(stream, head_len, len(MAGIC) + 4)
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"unparseable header: {exc}", len(MAGIC) + 4) from exc
    if not isinstance(header, dict) or "kind" not in header:
        raise WireError("header lacks a kind", len(MAGIC) + 4)
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 0 for d in dims)
    ):
        raise WireError(f"bad dims {dims!r}", len(MAGIC) + 4)

    n_payloads = 0
    if header["kind"] == "predict":
        n_payloads = 2 if (is_request and header.get("has_condition")) else 1
    d, h, w = dims
    payloads = []
    consumed = len(MAGIC) + 4 + head_len
    for _ in range(n_payloads):
        raw = _read_exact(stream, 4 * d * h * w, consumed)
        consumed += len(raw)
        payloads.append(np.frombuffer(raw, dtype=F32LE).reshape(d, h, w).copy())
    return header, payloads
