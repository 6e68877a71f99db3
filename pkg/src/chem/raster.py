"""Float raster files and 16-bit PGM previews.

Raster layout: magic ``b"CHEM"``, version ``u16`` (= 1), height ``u32``,
width ``u32``, all little-endian, then ``height * width`` little-endian
float64 samples in row-major order.
"""

import struct

import numpy as np

from ._validation import check_image

MAGIC = b"CHEM"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


def raster_to_bytes(img):
    img = check_image(img)
    h, w = img.shape
    return _HEADER.pack(MAGIC, VERSION, h, w) + img.astype("<f8").tobytes()


def raster_from_bytes(data):
    if len(data) < _HEADER.size:
        raise ValueError("raster is shorter than its header")
    magic, version, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad raster magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported raster version {version}")
    if h < 1 or w < 1:
        raise ValueError("raster has an empty grid")
    payload = data[_HEADER.size :]
    if len(payload) != 8 * h * w:
        raise ValueError(f"raster payload holds {len(payload)} bytes, expected {8 * h * w}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(h, w)


def write_raster(path, img):
    data = raster_to_bytes(img)
    with open(path, "wb") as f:
        f.write(data)
    return data


def read_raster(path):
    with open(path, "rb") as f:
        return raster_from_bytes(f.read())


def write_pgm(path, img):
    """Min-max scaled 16-bit binary PGM; returns the ``(low, high)`` used."""
    img = check_image(img)
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    scaled = np.zeros(img.shape) if span == 0 else (img - lo) / span
    pixels = np.round(scaled * 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(pixels.tobytes())
    return lo, hi


def read_pgm(path):
    """Read a 16-bit binary PGM written by :func:`write_pgm`."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5" or parts[2] != b"65535":
        raise ValueError("not a 16-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.int64)
