"""Dataset and image file I/O: big-endian IDX (MNIST) and binary PGM."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload; the message carries the byte offset."""


def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an in-memory IDX file.

    Image files (magic 0x803) become float64 arrays ``(count, rows, cols)``
    scaled to [0, 1]; label files (magic 0x801) become an int64 vector.
    """
    if len(raw) < 4:
        raise IdxFormatError(f"truncated header at byte offset {len(raw)}: need 4 magic bytes")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == LABELS_MAGIC:
        ndim = 1
    elif magic == IMAGES_MAGIC:
        ndim = 3
    else:
        raise IdxFormatError(f"unsupported magic 0x{magic:08x} at byte offset 0")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(
            f"truncated header at byte offset {len(raw)}: need {header} bytes for {ndim} dims"
        )
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise IdxFormatError(
            f"truncated payload at byte offset {len(raw)}: expected {header + count} bytes"
        )
    payload = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if ndim == 1:
        return payload.astype(np.int64)
    return payload.astype(np.float64) / 255.0


def load_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (optionally gzipped). See :func:`parse_idx`."""
    return parse_idx(_read_bytes(path))


def write_idx(path: str | Path, array: np.ndarray) -> None:
    """Write a uint8 label vector or image stack as IDX (gzipped if path ends in .gz)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise TypeError("write_idx expects uint8 data")
    if arr.ndim == 1:
        magic = LABELS_MAGIC
    elif arr.ndim == 3:
        magic = IMAGES_MAGIC
    else:
        raise ValueError(f"IDX writer supports 1-D labels or 3-D images, got ndim={arr.ndim}")
    blob = struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a [0, 1] grayscale image as binary PGM (P5, maxval 255)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    rows, cols = img.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM written by :func:`write_pgm` back to [0, 1] floats."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: {fields[0]!r}")
    cols, rows, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=rows * cols, offset=pos)
    return data.reshape(rows, cols).astype(np.float64) / 255.0
