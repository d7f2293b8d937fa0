"""Trainable voxel grid of density and colour.

The grid stores *raw* (pre-activation) values at lattice nodes.  A query
first trilinearly interpolates the raw values at the sample point, then
applies the activation: softplus for density, sigmoid for each colour
channel.  Interpolating before activating keeps the interpolant linear in
the parameters, which makes the exact adjoint a plain weighted scatter.

Grid layout: ``resolution = (nx, ny, nz)`` node counts per axis, nodes at
``bounds_min + index * spacing`` with ``spacing = (bounds_max - bounds_min)
/ (resolution - 1)``.  Queries outside the bounds return zero density and
black, and receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

RSVF_MAGIC = b"RSVF"
RSVF_VERSION = 1

# Raw value whose softplus is 0.0 in both float32 and float64; used for
# "exactly empty" regions of ground-truth scenes.
RAW_EMPTY = -1000.0


def softplus(x):
    """log(1 + exp(x)), numerically stable for large |x|."""
    x = np.asarray(x)
    return np.logaddexp(np.zeros((), dtype=x.dtype), x)


def softplus_inverse(y: float) -> float:
    """Raw value r with softplus(r) == y (y > 0)."""
    if y <= 0:
        raise InputError("softplus_inverse needs y > 0")
    return float(np.log(np.expm1(y)))


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class FieldSample:
    """Result of querying the field at one point."""

    sigma: float
    rgb: np.ndarray  # (3,)
    inside: bool


class VoxelField:
    """Vertex-centred voxel grid with gradient buffers.

    ``version`` counts parameter updates; consumers that cache per-sample
    state (see renderer) use it to detect replay against changed weights.
    """

    def __init__(self, resolution, bounds_min, bounds_max, dtype=np.float32,
                 density_init: float | None = None, color_init: float = 0.0):
        self.resolution = tuple(int(r) for r in resolution)
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise InputError(f"resolution must be three counts >= 2, got {resolution}")
        self.bounds_min = np.array(bounds_min, dtype=np.float64)
        self.bounds_max = np.array(bounds_max, dtype=np.float64)
        if self.bounds_min.shape != (3,) or self.bounds_max.shape != (3,):
            raise InputError("bounds must be 3-vectors")
        if not np.all(self.bounds_max > self.bounds_min):
            raise InputError("bounds_max must exceed bounds_min on every axis")
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise InputError("dtype must be float32 or float64")
        if density_init is None:
            density_init = softplus_inverse(0.01)
        nx, ny, nz = self.resolution
        self.density_raw = np.full((nx, ny, nz), density_init, dtype=self.dtype)
        self.color_raw = np.full((nx, ny, nz, 3), color_init, dtype=self.dtype)
        self.density_grad = np.zeros_like(self.density_raw)
        self.color_grad = np.zeros_like(self.color_raw)
        self.version = 0

    # -- derived geometry -------------------------------------------------

    @property
    def spacing(self) -> np.ndarray:
        return (self.bounds_max - self.bounds_min) / (np.array(self.resolution) - 1)

    def node_positions(self) -> np.ndarray:
        """World positions of all lattice nodes, shape (nx, ny, nz, 3)."""
        axes = [
            np.linspace(self.bounds_min[k], self.bounds_max[k], self.resolution[k])
            for k in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def randomize(self, rng: np.random.Generator, density_scale=0.1, color_scale=0.1):
        """Add small zero-mean noise to the raw values (training init)."""
        self.density_raw += rng.normal(0.0, density_scale, self.density_raw.shape).astype(self.dtype)
        self.color_raw += rng.normal(0.0, color_scale, self.color_raw.shape).astype(self.dtype)
        self.version += 1

    # -- interpolation helpers --------------------------------------------

    def _locate(self, pts: np.ndarray):
        """Cell indices, weights and inside-mask for points (M, 3).

        Returns (inside (M,), idx (M, 3) int, frac (M, 3)).  idx/frac are
        only meaningful where inside is True.
        """
        g = (pts - self.bounds_min) / self.spacing
        res = np.array(self.resolution)
        inside = np.all((g >= 0.0) & (g <= res - 1), axis=1)
        idx = np.clip(np.floor(g).astype(np.int64), 0, res - 2)
        frac = g - idx
        return inside, idx, frac

    def _corner_flat(self, idx: np.ndarray) -> np.ndarray:
        """Flat node indices of the 8 cell corners, shape (M, 8)."""
        nx, ny, nz = self.resolution
        ix, iy, iz = idx[:, 0], idx[:, 1], idx[:, 2]
        base = (ix * ny + iy) * nz + iz
        return np.stack([
            base,
            base + 1,
            base + nz,
            base + nz + 1,
            base + ny * nz,
            base + ny * nz + 1,
            base + ny * nz + nz,
            base + ny * nz + nz + 1,
        ], axis=1)

    @staticmethod
    def _corner_weights(frac: np.ndarray) -> np.ndarray:
        """Trilinear weights matching _corner_flat order, shape (M, 8)."""
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        return np.stack([
            gx * gy * gz,
            gx * gy * fz,
            gx * fy * gz,
            gx * fy * fz,
            fx * gy * gz,
            fx * gy * fz,
            fx * fy * gz,
            fx * fy * fz,
        ], axis=1)

    # -- queries ------------------------------------------------------------

    def query_many(self, pts: np.ndarray):
        """Activated (sigma (M,), rgb (M, 3)) at world points (M, 3)."""
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"points must be (M, 3), got {pts.shape}")
        inside, idx, frac = self._locate(pts)
        sigma = np.zeros(pts.shape[0], dtype=self.dtype)
        rgb = np.zeros((pts.shape[0], 3), dtype=self.dtype)
        if np.any(inside):
            flat = self._corner_flat(idx[inside])
            w = self._corner_weights(frac[inside]).astype(self.dtype)
            draw = self.density_raw.reshape(-1)[flat]
            craw = self.color_raw.reshape(-1, 3)[flat]
            sigma[inside] = softplus(np.sum(w * draw, axis=1))
            rgb[inside] = sigmoid(np.sum(w[:, :, None] * craw, axis=1))
        return sigma, rgb

    def query(self, p) -> FieldSample:
        """Field value at a single world point."""
        p = np.asarray(p, dtype=np.float64).reshape(1, 3)
        sigma, rgb = self.query_many(p)
        inside = bool(self._locate(p)[0][0])
        return FieldSample(float(sigma[0]), rgb[0], inside)

    def query_backward(self, pts: np.ndarray, d_sigma: np.ndarray, d_rgb: np.ndarray):
        """Accumulate gradients for activated outputs at given points.

        ``d_sigma`` (M,) and ``d_rgb`` (M, 3) are derivatives of some scalar
        loss w.r.t. the activated sigma/rgb this field returned at ``pts``.
        Adds the exact chain-rule contribution onto the grad buffers.
        Points outside the bounds contribute nothing.
        """
        pts = np.asarray(pts, dtype=np.float64)
        d_sigma = np.asarray(d_sigma)
        d_rgb = np.asarray(d_rgb)
        if pts.shape != (d_sigma.shape[0], 3) or d_rgb.shape != (d_sigma.shape[0], 3):
            raise InputError("query_backward: mismatched point / gradient shapes")
        inside, idx, frac = self._locate(pts)
        if not np.any(inside):
            return
        flat = self._corner_flat(idx[inside])
        w = self._corner_weights(frac[inside]).astype(self.dtype)
        draw = self.density_raw.reshape(-1)[flat]
        craw = self.color_raw.reshape(-1, 3)[flat]
        raw_d = np.sum(w * draw, axis=1)
        raw_c = np.sum(w[:, :, None] * craw, axis=1)
        # Activation chain: d softplus = sigmoid(raw); d sigmoid = s (1 - s).
        dd = d_sigma[inside].astype(self.dtype) * sigmoid(raw_d)
        s = sigmoid(raw_c)
        dc = d_rgb[inside].astype(self.dtype) * s * (1.0 - s)
        ncell = self.density_raw.size
        dflat = np.zeros(ncell, dtype=self.dtype)
        cflat = np.zeros((ncell, 3), dtype=self.dtype)
        for corner in range(8):
            f = flat[:, corner]
            wc = w[:, corner]
            dflat += np.bincount(f, weights=wc * dd, minlength=ncell).astype(self.dtype)
            for ch in range(3):
                cflat[:, ch] += np.bincount(f, weights=wc * dc[:, ch], minlength=ncell).astype(self.dtype)
        self.density_grad += dflat.reshape(self.resolution)
        self.color_grad += cflat.reshape(self.resolution + (3,))

    # -- parameter updates --------------------------------------------------

    def zero_gradients(self):
        self.density_grad[:] = 0
        self.color_grad[:] = 0

    def bump_version(self):
        """Mark the parameters as changed (call after any direct edit)."""
        self.version += 1

    def clone(self) -> "VoxelField":
        out = VoxelField(self.resolution, self.bounds_min, self.bounds_max, dtype=self.dtype)
        out.density_raw = self.density_raw.copy()
        out.color_raw = self.color_raw.copy()
        out.version = self.version
        return out

    def astype(self, dtype) -> "VoxelField":
        out = VoxelField(self.resolution, self.bounds_min, self.bounds_max, dtype=dtype)
        out.density_raw = self.density_raw.astype(dtype)
        out.color_raw = self.color_raw.astype(dtype)
        return out


# -- checkpoint format ------------------------------------------------------
#
# Binary layout (all little-endian):
#   bytes 0..3   magic "RSVF"
#   u32          format version (currently 1)
#   3 x u32      resolution nx, ny, nz
#   6 x f64      bounds_min xyz, bounds_max xyz
#   f32 block    raw density, x-fastest order, nx*ny*nz values
#   f32 block    raw colour, x-fastest order, channel-interleaved (r,g,b)
#
# Raw (pre-activation) values are stored so save/load round-trips training
# state exactly for float32 fields.


def save_rsvf(field: VoxelField, path):
    nx, ny, nz = field.resolution
    with open(path, "wb") as f:
        f.write(RSVF_MAGIC)
        np.array([RSVF_VERSION, nx, ny, nz], dtype="<u4").tofile(f)
        np.concatenate([field.bounds_min, field.bounds_max]).astype("<f8").tofile(f)
        # In-memory order is z-fastest; the file wants x-fastest.
        field.density_raw.transpose(2, 1, 0).astype("<f4").tofile(f)
        field.color_raw.transpose(2, 1, 0, 3).astype("<f4").tofile(f)


def load_rsvf(path) -> VoxelField:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RSVF_MAGIC:
            raise InputError(f"{path}: not a voxel-field checkpoint (magic {magic!r})")
        head = np.fromfile(f, dtype="<u4", count=4)
        if head.size != 4:
            raise InputError(f"{path}: truncated header")
        version, nx, ny, nz = (int(v) for v in head)
        if version != RSVF_VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {version}")
        bounds = np.fromfile(f, dtype="<f8", count=6)
        n = nx * ny * nz
        dens = np.fromfile(f, dtype="<f4", count=n)
        cols = np.fromfile(f, dtype="<f4", count=3 * n)
        if bounds.size != 6 or dens.size != n or cols.size != 3 * n:
            raise InputError(f"{path}: truncated payload")
    out = VoxelField((nx, ny, nz), bounds[:3], bounds[3:], dtype=np.float32)
    out.density_raw = np.ascontiguousarray(dens.reshape(nz, ny, nx).transpose(2, 1, 0))
    out.color_raw = np.ascontiguousarray(cols.reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3))
    return out
