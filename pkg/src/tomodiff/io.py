"""Bit-exact volume and tilt-series files, plus 8-bit slice export.

Both formats share one layout: a UTF-8 text header terminated by an
``END`` line, followed by a raw little-endian float32 payload in
depth-major order. Loading validates the magic, the declared dimensions,
and the payload length, and never allocates more than the header declares.

TDVOL1::

    TDVOL1
    dims <D> <H> <W>
    dtype f32le
    meta <key> <value>      (zero or more)
    END
    <4*D*H*W payload bytes>

TDTLT1 additionally embeds the acquisition angles::

    TDTLT1
    angles <range_deg> <step_deg> <center_deg>
    dims <T> <H> <W>
    dtype f32le
    meta <key> <value>
    END
    <4*T*H*W payload bytes>

Angle fields are written with ``repr`` so they survive a round trip
bit-exactly. Meta keys must not contain whitespace; values must not
contain newlines. Saving writes meta entries in sorted key order so
identical inputs produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import DTYPE, AngleSpec, TiltSeries, Volume
from .errors import ValidationError

VOLUME_MAGIC = b"TDVOL1"
TILT_MAGIC = b"TDTLT1"
_F32LE = np.dtype("<f4")

# Upper bound on declared voxel counts; corrupt headers cannot demand more.
_MAX_VOXELS = 1 << 31


class BadMagicError(ValidationError):
    """File does not start with the expected magic; offset = first bad byte."""

    def __init__(self, offset: int, expected: bytes, got: bytes):
        self.offset = offset
        super().__init__(
            f"bad magic at byte offset {offset}: expected {expected!r}, got {got!r}"
        )


class TruncatedFileError(ValidationError):
    """File ended early; offset = where the missing bytes should begin."""

    def __init__(self, offset: int, missing: int):
        self.offset = offset
        super().__init__(f"file truncated at byte offset {offset}: {missing} bytes missing")


class HeaderError(ValidationError):
    """Structurally invalid header; offset = start of the offending line."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"header error at byte offset {offset}: {message}")


def _check_meta(meta: dict[str, str]) -> dict[str, str]:
    for key, value in meta.items():
        if not key or any(ch.isspace() for ch in key):
            raise ValidationError(f"meta key {key!r} must be non-empty without whitespace")
        if "\n" in value:
            raise ValidationError(f"meta value for {key!r} must not contain newlines")
    return meta


def _write(path: Path | str, magic: bytes, lines: list[str], meta: dict[str, str], payload: np.ndarray) -> None:
    parts = [magic.decode("ascii")]
    parts.extend(lines)
    for key in sorted(meta):
        parts.append(f"meta {key} {meta[key]}")
    parts.append("END")
    header = ("\n".join(parts) + "\n").encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(payload, dtype=_F32LE).tobytes())


def save_volume(volume: Volume, path: Path | str, meta: dict[str, str] | None = None) -> None:
    meta = _check_meta(dict(meta or {}))
    d, h, w = volume.shape
    _write(path, VOLUME_MAGIC, [f"dims {d} {h} {w}", "dtype f32le"], meta, volume.data)


def save_tilts(tilts: TiltSeries, path: Path | str, meta: dict[str, str] | None = None) -> None:
    meta = _check_meta(dict(meta or {}))
    t, h, w = tilts.frames.shape
    spec = tilts.spec
    lines = [
        f"angles {spec.range_deg!r} {spec.step_deg!r} {spec.center_deg!r}",
        f"dims {t} {h} {w}",
        "dtype f32le",
    ]
    _write(path, TILT_MAGIC, lines, meta, tilts.frames)


class _HeaderReader:
    def __init__(self, f):
        self.f = f
        self.offset = 0

    def line(self) -> str:
        start = self.offset
        raw = bytearray()
        while True:
            b = self.f.read(1)
            if not b:
                raise TruncatedFileError(self.offset, 1)
            self.offset += 1
            if b == b"\n":
                break
            raw.extend(b)
            if len(raw) > 4096:
                raise HeaderError(start, "header line exceeds 4096 bytes")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise HeaderError(start, f"undecodable header line: {exc}") from exc


def _read_magic(reader: _HeaderReader, expected: bytes) -> None:
    got = reader.f.read(len(expected) + 1)
    if got[: len(expected)] != expected or not got.endswith(b"\n"):
        probe = got[: len(expected)]
        for i, byte in enumerate(expected):
            if i >= len(probe) or probe[i] != byte:
                raise BadMagicError(i, expected, bytes(probe))
        raise BadMagicError(len(expected), expected + b"\n", bytes(got))
    reader.offset += len(expected) + 1


def _parse_dims(reader: _HeaderReader, line: str, start: int, n: int) -> tuple[int, ...]:
    parts = line.split()
    if len(parts) != n + 1 or parts[0] != "dims":
        raise HeaderError(start, f"expected 'dims' with {n} integers, got {line!r}")
    try:
        dims = tuple(int(p) for p in parts[1:])
    except ValueError as exc:
        raise HeaderError(start, f"non-integer dims in {line!r}") from exc
    if any(d < 1 for d in dims):
        raise HeaderError(start, f"dims must be positive, got {dims}")
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_VOXELS:
        raise HeaderError(start, f"dims {dims} overflow the supported size")
    return dims


def _read_tail(reader: _HeaderReader) -> dict[str, str]:
    """Consume dtype, meta lines, and END; returns the meta map."""
    start = reader.offset
    line = reader.line()
    if line != "dtype f32le":
        raise HeaderError(start, f"unsupported dtype line {line!r}")
    meta: dict[str, str] = {}
    while True:
        start = reader.offset
        line = reader.line()
        if line == "END":
            return meta
        if line.startswith("meta "):
            fields = line.split(" ", 2)
            if len(fields) < 3:
                raise HeaderError(start, f"malformed meta line {line!r}")
            meta[fields[1]] = fields[2]
            continue
        raise HeaderError(start, f"unexpected header line {line!r}")


def _read_payload(reader: _HeaderReader, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    expected = 4 * count
    raw = reader.f.read(expected)
    if len(raw) < expected:
        raise TruncatedFileError(reader.offset + len(raw), expected - len(raw))
    trailing = reader.f.read(1)
    if trailing:
        raise HeaderError(
            reader.offset + expected, "trailing bytes after the declared payload"
        )
    return np.frombuffer(raw, dtype=_F32LE).reshape(shape).astype(DTYPE)


def load_volume(path: Path | str) -> Volume:
    """Read a TDVOL1 file; raises a distinct error per corruption mode."""
    with Path(path).open("rb") as f:
        reader = _HeaderReader(f)
        _read_magic(reader, VOLUME_MAGIC)
        start = reader.offset
        dims = _parse_dims(reader, reader.line(), start, 3)
        _read_tail(reader)
        data = _read_payload(reader, dims)
    return Volume(data)


def load_tilts(path: Path | str) -> TiltSeries:
    """Read a TDTLT1 file; the embedded angles must match the frame count."""
    with Path(path).open("rb") as f:
        reader = _HeaderReader(f)
        _read_magic(reader, TILT_MAGIC)
        start = reader.offset
        line = reader.line()
        parts = line.split()
        if len(parts) != 4 or parts[0] != "angles":
            raise HeaderError(start, f"expected 'angles <range> <step> <center>', got {line!r}")
        try:
            rng, step, center = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise HeaderError(start, f"non-numeric angles in {line!r}") from exc
        spec = AngleSpec(range_deg=rng, step_deg=step, center_deg=center)
        start = reader.offset
        dims = _parse_dims(reader, reader.line(), start, 3)
        if dims[0] != spec.n_tilts:
            raise HeaderError(
                start, f"frame count {dims[0]} does not match {spec.n_tilts} derived angles"
            )
        _read_tail(reader)
        data = _read_payload(reader, dims)
    return TiltSeries(spec, data)


def read_meta(path: Path | str) -> dict[str, str]:
    """Parse just the header of either format and return its meta map."""
    with Path(path).open("rb") as f:
        reader = _HeaderReader(f)
        magic = f.read(6)
        if magic not in (VOLUME_MAGIC, TILT_MAGIC):
            raise BadMagicError(0, VOLUME_MAGIC + b"|" + TILT_MAGIC, magic)
        nl = f.read(1)
        if nl != b"\n":
            raise HeaderError(6, "missing newline after magic")
        reader.offset = 7
        if magic == TILT_MAGIC:
            reader.line()  # angles
        reader.line()  # dims
        return _read_tail(reader)


def export_slices(
    volume: Volume,
    axis: int,
    path_prefix: Path | str,
    normalize: str = "global",
) -> list[Path]:
    """Write one 8-bit grayscale PNG per slice along ``axis``.

    ``normalize`` is "global" (one min-max over the volume) or "per_slice".
    A degenerate range maps to mid-gray. Returns the written paths in slice
    order; output is deterministic.
    """
    if axis not in (0, 1, 2):
        raise ValidationError(f"axis must be 0, 1, or 2, got {axis}")
    if normalize not in ("global", "per_slice"):
        raise ValidationError(f"normalize must be 'global' or 'per_slice', got {normalize!r}")
    prefix = Path(path_prefix)
    if prefix.parent != Path("") and not prefix.parent.exists():
        prefix.parent.mkdir(parents=True, exist_ok=True)

    data = np.moveaxis(volume.data, axis, 0).astype(np.float64)
    if normalize == "global":
        lo, hi = float(data.min()), float(data.max())
    paths = []
    for i, plane in enumerate(data):
        if normalize == "per_slice":
            lo, hi = float(plane.min()), float(plane.max())
        if hi > lo:
            norm = (plane - lo) / (hi - lo)
        else:
            norm = np.full_like(plane, 0.5)
        img = np.rint(np.clip(norm, 0.0, 1.0) * 255.0).astype(np.uint8)
        out = prefix.parent / f"{prefix.name}_{i:04d}.png"
        Image.fromarray(img, mode="L").save(out)
        paths.append(out)
    return paths
