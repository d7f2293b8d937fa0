"""Raster and table IO: PNG, PFM, falsecolor, CSV, atomic writes."""
import os

import numpy as np
import pytest

from radscale import InputError
from radscale.io import (atomic_write, falsecolor, quantize_u8, read_csv,
                         read_pfm, read_png, write_csv, write_depth_falsecolor,
                         write_pfm, write_png)


def test_png_roundtrip_is_quantization(tmp_path, rng):
    img = rng.random((9, 13, 3)).astype(np.float32)
    p = tmp_path / "img.png"
    write_png(img, p)
    back = read_png(p)
    assert back.shape == img.shape
    # exact at the 8-bit lattice
    assert np.array_equal(quantize_u8(back), quantize_u8(img))
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7


def test_quantize_u8_rounds_half_up():
    vals = np.array([0.0, 0.5 / 255, 1.49 / 255, 1.0, 2.0, -1.0])
    q = quantize_u8(vals)
    assert list(q) == [0, 1, 1, 255, 255, 0]
    assert q.dtype == np.uint8


def test_png_rejects_bad_shape(tmp_path):
    with pytest.raises(InputError):
        write_png(np.zeros((4, 4)), tmp_path / "x.png")


def test_pfm_roundtrip_exact(tmp_path, rng):
    data = rng.normal(size=(7, 11)).astype(np.float32) * 40
    p = tmp_path / "d.pfm"
    write_pfm(data, p)
    back = read_pfm(p)
    assert back.dtype == np.float32
    assert np.array_equal(back, data)


def test_pfm_header_grayscale_little_endian(tmp_path):
    p = tmp_path / "d.pfm"
    write_pfm(np.ones((2, 3), dtype=np.float32), p)
    blob = p.read_bytes()
    assert blob.startswith(b"Pf\n3 2\n-1.0\n")


def test_falsecolor_monotone_and_endpoints():
    v = np.linspace(0.0, 1.0, 64)
    c = falsecolor(v, vmin=0.0, vmax=1.0)
    assert c.shape == (64, 3)
    assert c.min() >= 0.0 and c.max() <= 1.0
    # dark blue-violet start, bright yellow end
    assert c[0, 2] > c[0, 0] * 5 or c[0, 2] > 0.4
    assert c[-1, 0] > 0.8 and c[-1, 1] > 0.8 and c[-1, 2] < 0.3
    # constant input does not blow up on degenerate range
    flat = falsecolor(np.full(5, 3.0))
    assert np.isfinite(flat).all()


def test_write_depth_falsecolor(tmp_path, rng):
    d = rng.random((8, 8))
    p = tmp_path / "depth.png"
    write_depth_falsecolor(d, p)
    img = read_png(p)
    assert img.shape == (8, 8, 3)


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["a", "b"], [[1, 2.5], [3, -0.125]])
    header, rows = read_csv(p)
    assert header == ["a", "b"]
    # reader stays untyped; numeric meaning is the caller's business
    assert [[float(x) for x in r] for r in rows] == [[1.0, 2.5], [3.0, -0.125]]


def test_atomic_write_leaves_no_temp_on_error(tmp_path):
    target = tmp_path / "out.bin"
    with pytest.raises(RuntimeError):
        with atomic_write(target) as fh:
            fh.write(b"partial")
            raise RuntimeError("boom")
    assert not target.exists()
    assert os.listdir(tmp_path) == []


def test_atomic_write_replaces_existing(tmp_path):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")
    with atomic_write(target) as fh:
        fh.write(b"new")
    assert target.read_bytes() == b"new"
    assert os.listdir(tmp_path) == ["out.bin"]
