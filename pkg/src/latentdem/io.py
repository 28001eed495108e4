"""Image and kernel file formats.

* PGM: binary P5, 8-bit, values in [0, 1] mapped to 0..255 (for viewing).
* LDEMF32: magic ``b"LDEMF32"``, u32 height, u32 width (little-endian),
  then row-major little-endian float32 samples.  Lossless for float32.
* Kernel text: the size k, then k*k decimals (one kernel row per line).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

LDEMF32_MAGIC = b"LDEMF32"


def write_ldemf32(path, img) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("LDEMF32 stores 2D grids only")
    h, w = img.shape
    payload = np.ascontiguousarray(img, dtype="<f4").tobytes()
    Path(path).write_bytes(LDEMF32_MAGIC + struct.pack("<II", h, w) + payload)


def read_ldemf32(path) -> np.ndarray:
    data = Path(path).read_bytes()
    n = len(LDEMF32_MAGIC)
    if data[:n] != LDEMF32_MAGIC:
        raise ValueError(f"{path}: not an LDEMF32 file")
    h, w = struct.unpack("<II", data[n : n + 8])
    body = data[n + 8 :]
    if len(body) != 4 * h * w:
        raise ValueError(f"{path}: expected {4 * h * w} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def write_pgm(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM stores 2D grids only")
    h, w = img.shape
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace (comments allowed)
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary P5 PGM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pos += 1
    body = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if body.size != w * h:
        raise ValueError(f"{path}: truncated PGM payload")
    return body.reshape(h, w).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Read LDEMF32 or PGM, chosen by content."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    with path.open("rb") as fh:
        head = fh.read(len(LDEMF32_MAGIC))
    if head == LDEMF32_MAGIC:
        return read_ldemf32(path)
    return read_pgm(path)


def write_kernel_text(path, k) -> None:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("kernel must be square")
    lines = [str(k.shape[0])] + [" ".join(f"{v:.17g}" for v in row) for row in k]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kernel_text(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"kernel file not found: {path}")
    tokens = path.read_text().split()
    if not tokens:
        raise ValueError(f"{path}: empty kernel file")
    k = int(tokens[0])
    vals = tokens[1:]
    if len(vals) != k * k:
        raise ValueError(f"{path}: expected {k * k} kernel values, found {len(vals)}")
    return np.array([float(v) for v in vals]).reshape(k, k)
