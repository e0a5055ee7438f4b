"""Image and array file I/O: 8-bit binary PGM and raw float32 grids.

Raw float32 files are little-endian row-major, with a ``<name>.dims`` text
sidecar holding ``width height`` so the grid shape survives round trips.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def write_pgm(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] as binary 8-bit PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM output needs a 2-D grayscale image")
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM into floats in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ImageFormatError("not a binary PGM (missing P5 magic)")
    # header = magic, width, height, maxval; comments start with '#'
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(v) for v in fields)
    except ValueError as e:
        raise ImageFormatError(f"bad PGM header: {e}") from e
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise ImageFormatError(f"PGM body has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def _dims_path(path) -> str:
    return str(path) + ".dims"


def write_f32(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("raw float output needs a 2-D grid")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(grid.astype("<f4").tobytes())
    with open(_dims_path(path), "w") as f:
        f.write(f"{w} {h}\n")


def read_f32(path) -> np.ndarray:
    try:
        with open(_dims_path(path)) as f:
            w, h = (int(v) for v in f.read().split())
    except FileNotFoundError:
        raise ImageFormatError(f"missing dims sidecar for {path}")
    except ValueError as e:
        raise ImageFormatError(f"bad dims sidecar for {path}: {e}")
    data = np.fromfile(path, dtype="<f4")
    if data.size != w * h:
        raise ImageFormatError(
            f"{path}: {data.size} values, sidecar says {w}x{h}")
    return data.reshape(h, w).astype(np.float64)
