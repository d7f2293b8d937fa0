"""Fused numba kernels for the rendering hot path.

These implement exactly the model documented in :mod:`radscale.renderer`
(which also hosts the reference numpy implementation used to validate
them), fused into per-ray loops so no (rays x samples) temporaries hit
memory.  Internal arithmetic runs in float64 regardless of the field dtype.

Determinism: the backward scatter is race-free by construction.  Rays are
split into ``threads`` contiguous chunks, each chunk accumulates into its
own private gradient buffer, and the buffers are reduced in fixed order
afterwards, so results are independent of thread scheduling.

The backward kernel evaluates gradient scaling inline for the built-in
modes and mappings; configurations it cannot express (user-supplied
mapping callables) report as unhandled and the caller falls back to the
numpy path.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .scaler import ContractionMapping, GradScaleMode, IdentityMapping

_MODE_IDS = {
    GradScaleMode.NONE: 0,
    GradScaleMode.QUADRATIC: 1,
    GradScaleMode.CLAMPED: 2,
    GradScaleMode.CLAMPED_SIGMA: 3,
    GradScaleMode.JACOBIAN: 4,
}
_MAP_IDENTITY = 0
_MAP_CONTRACT = 1


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _query(dens, cols, b0, b1, b2, h0, h1, h2, px, py, pz):
    """Activated (sigma, r, g, b) at one world point; zeros outside."""
    nx, ny, nz = dens.shape
    g0 = (px - b0) * h0
    g1 = (py - b1) * h1
    g2 = (pz - b2) * h2
    if g0 < 0.0 or g0 > nx - 1.0 or g1 < 0.0 or g1 > ny - 1.0 or g2 < 0.0 or g2 > nz - 1.0:
        return 0.0, 0.0, 0.0, 0.0
    i0 = int(g0)
    i1 = int(g1)
    i2 = int(g2)
    if i0 > nx - 2:
        i0 = nx - 2
    if i1 > ny - 2:
        i1 = ny - 2
    if i2 > nz - 2:
        i2 = nz - 2
    f0 = g0 - i0
    f1 = g1 - i1
    f2 = g2 - i2
    e0 = 1.0 - f0
    e1 = 1.0 - f1
    e2 = 1.0 - f2
    w000 = e0 * e1 * e2
    w001 = e0 * e1 * f2
    w010 = e0 * f1 * e2
    w011 = e0 * f1 * f2
    w100 = f0 * e1 * e2
    w101 = f0 * e1 * f2
    w110 = f0 * f1 * e2
    w111 = f0 * f1 * f2
    raw_d = (w000 * dens[i0, i1, i2] + w001 * dens[i0, i1, i2 + 1]
             + w010 * dens[i0, i1 + 1, i2] + w011 * dens[i0, i1 + 1, i2 + 1]
             + w100 * dens[i0 + 1, i1, i2] + w101 * dens[i0 + 1, i1, i2 + 1]
             + w110 * dens[i0 + 1, i1 + 1, i2] + w111 * dens[i0 + 1, i1 + 1, i2 + 1])
    sigma = _softplus(raw_d)
    raw_r = (w000 * cols[i0, i1, i2, 0] + w001 * cols[i0, i1, i2 + 1, 0]
             + w010 * cols[i0, i1 + 1, i2, 0] + w011 * cols[i0, i1 + 1, i2 + 1, 0]
             + w100 * cols[i0 + 1, i1, i2, 0] + w101 * cols[i0 + 1, i1, i2 + 1, 0]
             + w110 * cols[i0 + 1, i1 + 1, i2, 0] + w111 * cols[i0 + 1, i1 + 1, i2 + 1, 0])
    raw_g = (w000 * cols[i0, i1, i2, 1] + w001 * cols[i0, i1, i2 + 1, 1]
             + w010 * cols[i0, i1 + 1, i2, 1] + w011 * cols[i0, i1 + 1, i2 + 1, 1]
             + w100 * cols[i0 + 1, i1, i2, 1] + w101 * cols[i0 + 1, i1, i2 + 1, 1]
             + w110 * cols[i0 + 1, i1 + 1, i2, 1] + w111 * cols[i0 + 1, i1 + 1, i2 + 1, 1])
    raw_b = (w000 * cols[i0, i1, i2, 2] + w001 * cols[i0, i1, i2 + 1, 2]
             + w010 * cols[i0, i1 + 1, i2, 2] + w011 * cols[i0, i1 + 1, i2 + 1, 2]
             + w100 * cols[i0 + 1, i1, i2, 2] + w101 * cols[i0 + 1, i1, i2 + 1, 2]
             + w110 * cols[i0 + 1, i1 + 1, i2, 2] + w111 * cols[i0 + 1, i1 + 1, i2 + 1, 2])
    return sigma, _sigmoid(raw_r), _sigmoid(raw_g), _sigmoid(raw_b)


@njit(parallel=True, cache=True)
def _forward(dens, cols, bmin, invh, origins, dirs, ts, delta, bg,
             sigma_out, rgb_out, weight_out, tfin_out, crgb_out, depth_out, opac_out):
    B, N = ts.shape
    b0, b1, b2 = bmin[0], bmin[1], bmin[2]
    h0, h1, h2 = invh[0], invh[1], invh[2]
    g0, g1, g2 = float(bg[0]), float(bg[1]), float(bg[2])
    for r in prange(B):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        dt = float(delta[r])
        T = 1.0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        dnum = 0.0
        osum = 0.0
        for j in range(N):
            t = float(ts[r, j])
            sig, c0, c1, c2 = _query(dens, cols, b0, b1, b2, h0, h1, h2,
                                     ox + t * dx, oy + t * dy, oz + t * dz)
            sigma_out[r, j] = sig
            rgb_out[r, j, 0] = c0
            rgb_out[r, j, 1] = c1
            rgb_out[r, j, 2] = c2
            a = -math.expm1(-sig * dt)
            w = T * a
            weight_out[r, j] = w
            acc0 += w * c0
            acc1 += w * c1
            acc2 += w * c2
            dnum += w * t
            osum += w
            T *= 1.0 - a
        tfin_out[r] = T
        crgb_out[r, 0] = acc0 + T * g0
        crgb_out[r, 1] = acc1 + T * g1
        crgb_out[r, 2] = acc2 + T * g2
        opac_out[r] = osum
        om = osum
        if om < 1e-6:
            om = 1e-6
        depth_out[r] = dnum / om


@njit(parallel=True, cache=True)
def _backward(dens, cols, bmin, invh, origins, dirs, ts, delta, sigma, rgb,
              tfin, bg, dout, mode_id, sig2, map_id, chunks, dgrad, cgrad):
    nx, ny, nz = dens.shape
    b0, b1, b2 = bmin[0], bmin[1], bmin[2]
    h0, h1, h2 = invh[0], invh[1], invh[2]
    g0, g1, g2 = float(bg[0]), float(bg[1]), float(bg[2])
    B, N = ts.shape
    C = chunks.shape[0] - 1
    for c in prange(C):
        tbuf = np.empty(N + 1, np.float64)
        for r in range(chunks[c], chunks[c + 1]):
            ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            dt = float(delta[r])
            d0 = float(dout[r, 0])
            d1 = float(dout[r, 1])
            d2 = float(dout[r, 2])
            # transmittance reaching each sample (recomputed, not stored)
            T = 1.0
            for j in range(N):
                tbuf[j] = T
                a = -math.expm1(-float(sigma[r, j]) * dt)
                T *= 1.0 - a
            tbuf[N] = T
            # sdot = d_rgb_out . (colour composited behind sample j)
            sdot = T * (d0 * g0 + d1 * g1 + d2 * g2)
            for j in range(N - 1, -1, -1):
                sig = float(sigma[r, j])
                a = -math.expm1(-sig * dt)
                w = tbuf[j] * a
                c0 = float(rgb[r, j, 0])
                c1 = float(rgb[r, j, 1])
                c2 = float(rgb[r, j, 2])
                dotc = d0 * c0 + d1 * c1 + d2 * c2
                dsig = dt * (tbuf[j + 1] * dotc - sdot)
                sdot += w * dotc
                t = float(ts[r, j])
                px = ox + t * dx
                py = oy + t * dy
                pz = oz + t * dz
                # per-sample gradient scale
                if mode_id == 0:
                    s = 1.0
                elif mode_id == 1:
                    s = t * t
                elif mode_id == 2:
                    s = min(1.0, t * t)
                elif mode_id == 3:
                    s = min(1.0, t * t / sig2)
                else:
                    det = 1.0
                    if map_id == _MAP_CONTRACT:
                        rr = math.sqrt(px * px + py * py + pz * pz)
                        if rr > 1.0:
                            r2 = rr * rr
                            det = (2.0 * rr - 1.0) ** 2 / (r2 * r2 * r2)
                    s = min(1.0, t * t / det)
                dsig *= s
                dr0 = w * d0 * s
                dr1 = w * d1 * s
                dr2 = w * d2 * s
                # chain through activations; sigmoid(raw_d) == 1 - exp(-sigma)
                draw_d = dsig * (-math.expm1(-sig))
                drc0 = dr0 * c0 * (1.0 - c0)
                drc1 = dr1 * c1 * (1.0 - c1)
                drc2 = dr2 * c2 * (1.0 - c2)
                # trilinear scatter
                q0 = (px - b0) * h0
                q1 = (py - b1) * h1
                q2 = (pz - b2) * h2
                if q0 < 0.0 or q0 > nx - 1.0 or q1 < 0.0 or q1 > ny - 1.0 or q2 < 0.0 or q2 > nz - 1.0:
                    continue
                i0 = int(q0)
                i1 = int(q1)
                i2 = int(q2)
                if i0 > nx - 2:
                    i0 = nx - 2
                if i1 > ny - 2:
                    i1 = ny - 2
                if i2 > nz - 2:
                    i2 = nz - 2
                f0 = q0 - i0
                f1 = q1 - i1
                f2 = q2 - i2
                e0 = 1.0 - f0
                e1 = 1.0 - f1
                e2 = 1.0 - f2
                w000 = e0 * e1 * e2
                w001 = e0 * e1 * f2
                w010 = e0 * f1 * e2
                w011 = e0 * f1 * f2
                w100 = f0 * e1 * e2
                w101 = f0 * e1 * f2
                w110 = f0 * f1 * e2
                w111 = f0 * f1 * f2
                dgrad[c, i0, i1, i2] += w000 * draw_d
                dgrad[c, i0, i1, i2 + 1] += w001 * draw_d
                dgrad[c, i0, i1 + 1, i2] += w010 * draw_d
                dgrad[c, i0, i1 + 1, i2 + 1] += w011 * draw_d
                dgrad[c, i0 + 1, i1, i2] += w100 * draw_d
                dgrad[c, i0 + 1, i1, i2 + 1] += w101 * draw_d
                dgrad[c, i0 + 1, i1 + 1, i2] += w110 * draw_d
                dgrad[c, i0 + 1, i1 + 1, i2 + 1] += w111 * draw_d
                cgrad[c, i0, i1, i2, 0] += w000 * drc0
                cgrad[c, i0, i1, i2, 1] += w000 * drc1
                cgrad[c, i0, i1, i2, 2] += w000 * drc2
                cgrad[c, i0, i1, i2 + 1, 0] += w001 * drc0
                cgrad[c, i0, i1, i2 + 1, 1] += w001 * drc1
                cgrad[c, i0, i1, i2 + 1, 2] += w001 * drc2
                cgrad[c, i0, i1 + 1, i2, 0] += w010 * drc0
                cgrad[c, i0, i1 + 1, i2, 1] += w010 * drc1
                cgrad[c, i0, i1 + 1, i2, 2] += w010 * drc2
                cgrad[c, i0, i1 + 1, i2 + 1, 0] += w011 * drc0
                cgrad[c, i0, i1 + 1, i2 + 1, 1] += w011 * drc1
                cgrad[c, i0, i1 + 1, i2 + 1, 2] += w011 * drc2
                cgrad[c, i0 + 1, i1, i2, 0] += w100 * drc0
                cgrad[c, i0 + 1, i1, i2, 1] += w100 * drc1
                cgrad[c, i0 + 1, i1, i2, 2] += w100 * drc2
                cgrad[c, i0 + 1, i1, i2 + 1, 0] += w101 * drc0
                cgrad[c, i0 + 1, i1, i2 + 1, 1] += w101 * drc1
                cgrad[c, i0 + 1, i1, i2 + 1, 2] += w101 * drc2
                cgrad[c, i0 + 1, i1 + 1, i2, 0] += w110 * drc0
                cgrad[c, i0 + 1, i1 + 1, i2, 1] += w110 * drc1
                cgrad[c, i0 + 1, i1 + 1, i2, 2] += w110 * drc2
                cgrad[c, i0 + 1, i1 + 1, i2 + 1, 0] += w111 * drc0
                cgrad[c, i0 + 1, i1 + 1, i2 + 1, 1] += w111 * drc1
                cgrad[c, i0 + 1, i1 + 1, i2 + 1, 2] += w111 * drc2


# -- python-side wrappers -------------------------------------------------------


def forward_bundle(field, origins, dirs, ts, delta, bg):
    B, N = ts.shape
    dt = field.dtype
    sigma = np.empty((B, N), dtype=dt)
    rgb = np.empty((B, N, 3), dtype=dt)
    weight = np.empty((B, N), dtype=dt)
    tfin = np.empty(B, dtype=dt)
    crgb = np.empty((B, 3), dtype=dt)
    depth = np.empty(B, dtype=dt)
    opac = np.empty(B, dtype=dt)
    invh = 1.0 / field.spacing
    _forward(field.density_raw, field.color_raw, field.bounds_min, invh,
             origins, dirs, ts, delta, np.asarray(bg, dtype=np.float64),
             sigma, rgb, weight, tfin, crgb, depth, opac)
    return sigma, rgb, weight, tfin, crgb, depth, opac


def backward_bundle(field, batch, d_rgb_out, scale_cfg, threads: int = 1) -> bool:
    """Run the fused backward pass; returns False when the scaling config
    needs the numpy fallback (user-defined mapping callables)."""
    mode_id = _MODE_IDS[scale_cfg.mode]
    map_id = _MAP_IDENTITY
    if scale_cfg.mode is GradScaleMode.JACOBIAN:
        if isinstance(scale_cfg.mapping, IdentityMapping):
            map_id = _MAP_IDENTITY
        elif isinstance(scale_cfg.mapping, ContractionMapping):
            map_id = _MAP_CONTRACT
        else:
            return False
    B = batch.n_rays
    nchunks = max(1, min(int(threads) if threads else 1, B))
    chunks = np.linspace(0, B, nchunks + 1).astype(np.int64)
    res = field.resolution
    dgrad = np.zeros((nchunks,) + res, dtype=np.float64)
    cgrad = np.zeros((nchunks,) + res + (3,), dtype=np.float64)
    invh = 1.0 / field.spacing
    sig2 = float(scale_cfg.sigma) ** 2
    _backward(field.density_raw, field.color_raw, field.bounds_min, invh,
              batch.origins, batch.directions, batch.ts, batch.delta_per_ray,
              batch.sigma, batch.rgb, batch.trans_final,
              batch.background.astype(np.float64), d_rgb_out,
              mode_id, sig2, map_id, chunks, dgrad, cgrad)
    field.density_grad += dgrad.sum(axis=0).astype(field.dtype)
    field.color_grad += cgrad.sum(axis=0).astype(field.dtype)
    return True


def warmup(dtype=np.float32):
    """Compile the kernels on a miniature problem (so timings exclude JIT)."""
    from .field import VoxelField
    from .renderer import RenderConfig, render_rays, render_rays_backward
    from .scaler import GradScaleConfig

    f = VoxelField((2, 2, 2), (-1, -1, -1), (1, 1, 1), dtype=dtype)
    o = np.zeros((2, 3))
    d = np.tile(np.array([0.0, 0.0, 1.0]), (2, 1))
    out, batch = render_rays(f, o, d, 0.1, 1.0, 4, RenderConfig(engine="numba"))
    for mode in ("none", "clamped", "quadratic", "clamped-sigma"):
        render_rays_backward(f, batch, np.ones((2, 3), dtype=f.dtype),
                             GradScaleConfig(mode=mode), engine="numba")
    render_rays_backward(f, batch, np.ones((2, 3), dtype=f.dtype),
                         GradScaleConfig(mode="jacobian", mapping="contract"),
                         engine="numba")
