"""Readers for the reconstruction toolkit's on-disk formats.

Implements the published TDVOL1/TDTLT1 layout and the JSON-lines dataset
manifest. Read-only: the trainer consumes datasets, it does not produce
them.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

F32LE = np.dtype("<f4")


class FileFormatError(ValueError):
    pass


def _read_header(f, expected_magic: bytes) -> dict[str, str]:
    """Returns the header fields as strings: dims, angles (when present), meta.*"""
    magic_line = f.readline()
    if magic_line != expected_magic + b"\n":
        raise FileFormatError(f"expected magic {expected_magic!r}, got {magic_line[:16]!r}")
    fields: dict[str, str] = {}
    while True:
        line = f.readline()
        if not line:
            raise FileFormatError("header ended before END")
        text = line.decode("utf-8").rstrip("\n")
        if text == "END":
            return fields
        key, _, value = text.partition(" ")
        if key == "meta":
            name, _, meta_value = value.partition(" ")
            fields[f"meta.{name}"] = meta_value
        else:
            fields[key] = value


def _read_payload(f, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    raw = f.read(4 * count)
    if len(raw) < 4 * count:
        raise FileFormatError(f"payload truncated: {len(raw)} of {4 * count} bytes")
    return np.frombuffer(raw, dtype=F32LE).reshape(shape).copy()


def load_volume(path: Path | str) -> np.ndarray:
    """TDVOL1 -> float32 array of shape (depth, height, width)."""
    with Path(path).open("rb") as f:
        fields = _read_header(f, b"TDVOL1")
        dims = tuple(int(v) for v in fields["dims"].split())
        if len(dims) != 3 or min(dims) < 1:
            raise FileFormatError(f"bad dims {fields['dims']!r}")
        return _read_payload(f, dims)


def load_tilts(path: Path | str) -> tuple[np.ndarray, float, float, float]:
    """TDTLT1 -> (frames (T, H, W), range_deg, step_deg, center_deg)."""
    with Path(path).open("rb") as f:
        fields = _read_header(f, b"TDTLT1")
        rng, step, center = (float(v) for v in fields["angles"].split())
        dims = tuple(int(v) for v in fields["dims"].split())
        if len(dims) != 3 or min(dims) < 1:
            raise FileFormatError(f"bad dims {fields['dims']!r}")
        return _read_payload(f, dims), rng, step, center


def read_manifest(path: Path | str) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
