"""Image, depth-map and table I/O.

Formats:

* PNG (via Pillow), 8-bit, for colour images.  Float images in [0, 1] are
  quantised with round-to-nearest.
* PFM for float depth maps: header ``Pf``, little-endian (scale -1.0),
  rows bottom-to-top as the format prescribes.
* CSV via the stdlib ``csv`` module.

All writers go through :func:`atomic_write`, which writes to a sibling
temp file and renames it into place so readers never observe a partial
file.
"""

from __future__ import annotations

import contextlib
import csv
import os
import tempfile

import numpy as np
from PIL import Image

from .errors import InputError


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    """Open a temp file in path's directory; rename over path on success."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=os.path.basename(path) + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


# -- PNG ----------------------------------------------------------------------


def write_png(img: np.ndarray, path):
    """Write an (H, W, 3) image; float arrays are assumed in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) image, got {img.shape}")
    if img.dtype != np.uint8:
        img = quantize_u8(img)
    with atomic_write(path) as f:
        Image.fromarray(img, mode="RGB").save(f, format="PNG")


def read_png(path) -> np.ndarray:
    """Read an image as float32 in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def quantize_u8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# -- PFM ----------------------------------------------------------------------


def write_pfm(data: np.ndarray, path):
    """Write a single-channel float32 map as grayscale PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise InputError(f"PFM writer expects a 2-d map, got shape {data.shape}")
    h, w = data.shape
    with atomic_write(path) as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian payload
        f.write(data[::-1].astype("<f4").tobytes())  # rows bottom-to-top


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise InputError(f"{path}: not a grayscale PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dt).reshape(h, w)
    return np.ascontiguousarray(data[::-1]).astype(np.float32)


# -- false colour -------------------------------------------------------------

# Five-anchor perceptually ordered palette (dark violet to yellow),
# interpolated linearly in RGB.  Chosen to keep the package free of any
# plotting dependency while producing legible depth maps.
_PALETTE = np.array([
    [0x0D, 0x08, 0x87],
    [0x7E, 0x03, 0xA8],
    [0xCC, 0x47, 0x78],
    [0xF8, 0x95, 0x40],
    [0xF0, 0xF9, 0x21],
], dtype=np.float64) / 255.0


def falsecolor(values: np.ndarray, vmin=None, vmax=None) -> np.ndarray:
    """Map a scalar array to RGB float in [0, 1] via the built-in palette."""
    v = np.asarray(values, dtype=np.float64)
    vmin = float(np.nanmin(v)) if vmin is None else float(vmin)
    vmax = float(np.nanmax(v)) if vmax is None else float(vmax)
    if vmax <= vmin:
        u = np.zeros_like(v)
    else:
        u = np.clip((v - vmin) / (vmax - vmin), 0.0, 1.0)
    x = u * (len(_PALETTE) - 1)
    lo = np.clip(np.floor(x).astype(int), 0, len(_PALETTE) - 2)
    frac = (x - lo)[..., None]
    return _PALETTE[lo] * (1.0 - frac) + _PALETTE[lo + 1] * frac


def write_depth_falsecolor(depth: np.ndarray, path, vmin=None, vmax=None):
    write_png(falsecolor(depth, vmin, vmax), path)


# -- CSV ----------------------------------------------------------------------


def write_csv(path, header, rows):
    """Write rows (iterable of sequences) with a header line."""
    with atomic_write(path, mode="w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_csv(path):
    """Read a CSV written by write_csv: (header list, list of row lists)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]
