"""Differentiable emission-absorption volume rendering.

A ray is split into ``n`` equal segments between its t-range; the field is
queried at one point per segment (segment midpoint, or a jittered point
when stratified).  With sigma_j and colour c_j at sample j, segment length
D_j, the piecewise-constant transport model gives

    alpha_j = 1 - exp(-sigma_j D_j)          segment opacity
    T_j     = prod_{k<j} (1 - alpha_k)       transmittance reaching j
    w_j     = T_j alpha_j                    sample weight
    rgb     = sum_j w_j c_j + T_final * background
    opacity = sum_j w_j
    depth   = sum_j w_j t_j / max(opacity, 1e-6)

The backward pass is exact.  Writing S_j for the colour composited behind
sample j (everything at k > j plus the background term), the adjoints are

    d c_j     = w_j * d_rgb
    d sigma_j = D_j * (T_{j+1} (d_rgb . c_j) - d_rgb . S_j)

which follows from d alpha_j / d sigma_j = D_j (1 - alpha_j) and
d log T_k / d sigma_j = -D_j for k > j.  The suffix form avoids dividing
by 1 - alpha_j, so it stays finite for fully opaque samples.

Before gradients enter the field they pass through the per-sample scaling
of :mod:`radscale.scaler`; the forward pass never depends on the scaling
mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, StaleBatchError
from .field import VoxelField
from .geometry import Camera, Ray, camera_ray_grid
from .scaler import GradScaleConfig, scale_sample_gradients

DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class RenderConfig:
    """Options shared by all render entry points."""

    background: tuple = (0.0, 0.0, 0.0)
    stratified: bool = False
    engine: str = "auto"  # "auto" | "numpy" | "numba"

    def background_array(self, dtype) -> np.ndarray:
        bg = np.asarray(self.background, dtype=dtype)
        if bg.shape != (3,):
            raise InputError("background must be an rgb triple")
        return bg


@dataclass
class RenderOutput:
    rgb: np.ndarray      # (..., 3)
    depth: np.ndarray    # (...)
    opacity: np.ndarray  # (...)


@dataclass
class RaySampleBatch:
    """Everything the backward pass needs about one forward render.

    Stored per sample: t-values, field outputs.  Derived quantities
    (positions, alphas, transmittances, weights) are exposed as properties
    and recomputed from the stored state, which is exact because the
    forward model is deterministic given (ts, sigma).
    """

    origins: np.ndarray       # (B, 3)
    directions: np.ndarray    # (B, 3) unit
    ts: np.ndarray            # (B, n) sample distances along each ray
    delta_per_ray: np.ndarray  # (B,) segment length of each ray
    sigma: np.ndarray         # (B, n) activated densities
    rgb: np.ndarray           # (B, n, 3) activated colours
    weight: np.ndarray        # (B, n) compositing weights
    trans_final: np.ndarray   # (B,) transmittance after the last sample
    background: np.ndarray    # (3,)
    field_ref: VoxelField
    field_version: int

    @property
    def n_rays(self) -> int:
        return self.ts.shape[0]

    @property
    def n_samples(self) -> int:
        return self.ts.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.origins[:, None, :] + self.ts[:, :, None] * self.directions[:, None, :]

    @property
    def cam_dist(self) -> np.ndarray:
        # Ray directions are unit vectors, so t is Euclidean distance
        # from the ray origin (the camera centre).
        return self.ts

    @property
    def deltas_seg(self) -> np.ndarray:
        return np.broadcast_to(self.delta_per_ray[:, None], self.ts.shape)

    @property
    def alpha(self) -> np.ndarray:
        return -np.expm1(-self.sigma * self.delta_per_ray[:, None].astype(self.sigma.dtype))

    @property
    def trans(self) -> np.ndarray:
        """Transmittance T_j reaching each sample, shape (B, n)."""
        a = self.alpha
        t = np.ones_like(a)
        t[:, 1:] = np.cumprod(1.0 - a[:, :-1], axis=1)
        return t

    def check_current(self, field: VoxelField):
        if field is not self.field_ref or field.version != self.field_version:
            raise StaleBatchError(
                "sample batch does not match this field's current parameters; "
                "re-render before calling backward"
            )


# -- sampling -----------------------------------------------------------------


def sample_ray(ray: Ray, n: int, stratified: bool = False,
               rng: np.random.Generator | None = None):
    """Sample points of one ray: (ts (n,), positions (n, 3), deltas_seg (n,))."""
    ts, delta = _sample_ts(
        np.array([ray.t_near]), np.array([ray.t_far]), n, stratified, rng
    )
    positions = ray.at(ts[0])
    return ts[0], positions, np.full(n, delta[0])


def _sample_ts(t_near, t_far, n, stratified, rng):
    """t-values for a bundle: (ts (B, n), delta (B,))."""
    if n < 1:
        raise InputError("need at least one sample per ray")
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    delta = (t_far - t_near) / n
    if np.any(delta <= 0):
        raise InputError("t_far must exceed t_near for every ray")
    if stratified:
        if rng is None:
            raise InputError("stratified sampling needs an rng")
        u = rng.random((t_near.shape[0], n))
    else:
        u = 0.5
    ts = t_near[:, None] + (np.arange(n)[None, :] + u) * delta[:, None]
    return ts, delta


# -- forward ------------------------------------------------------------------


def render_rays(field: VoxelField, origins, directions, t_near, t_far, n: int,
                cfg: RenderConfig = RenderConfig(),
                rng: np.random.Generator | None = None):
    """Render a bundle of rays.  Returns (RenderOutput, RaySampleBatch).

    ``origins``/``directions`` are (B, 3); ``t_near``/``t_far`` are scalars
    or (B,).  Directions must be unit length.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    directions = np.ascontiguousarray(directions, dtype=np.float64)
    if origins.ndim != 2 or origins.shape[1] != 3 or origins.shape != directions.shape:
        raise InputError("origins/directions must both be (B, 3)")
    norms = np.einsum("ij,ij->i", directions, directions)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        # sample distance doubles as camera distance only for unit directions
        raise InputError("ray directions must be unit length")
    B = origins.shape[0]
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (B,))
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (B,))
    ts, delta = _sample_ts(t_near, t_far, n, cfg.stratified, rng)
    ts = ts.astype(field.dtype)
    delta = delta.astype(field.dtype)
    bg = cfg.background_array(field.dtype)

    engine = _pick_engine(cfg.engine)
    if engine == "numba":
        from . import kernels

        sigma, rgb, weight, trans_final, out_rgb, out_depth, out_opac = kernels.forward_bundle(
            field, origins, directions, ts, delta, bg
        )
    else:
        sigma, rgb, weight, trans_final, out_rgb, out_depth, out_opac = _forward_numpy(
            field, origins, directions, ts, delta, bg
        )
    batch = RaySampleBatch(
        origins=origins, directions=directions, ts=ts, delta_per_ray=delta,
        sigma=sigma, rgb=rgb, weight=weight, trans_final=trans_final,
        background=bg, field_ref=field, field_version=field.version,
    )
    return RenderOutput(out_rgb, out_depth, out_opac), batch


def render_ray(field: VoxelField, ray: Ray, n: int,
               cfg: RenderConfig = RenderConfig(),
               rng: np.random.Generator | None = None):
    """Render a single ray; output arrays are squeezed to scalars/(3,)."""
    out, batch = render_rays(
        field, ray.origin[None, :], ray.direction[None, :],
        ray.t_near, ray.t_far, n, cfg, rng,
    )
    return RenderOutput(out.rgb[0], out.depth[0], out.opacity[0]), batch


def _forward_numpy(field, origins, directions, ts, delta, bg):
    B, n = ts.shape
    pts = origins[:, None, :] + ts[:, :, None].astype(np.float64) * directions[:, None, :]
    sigma, rgb = field.query_many(pts.reshape(-1, 3))
    sigma = sigma.reshape(B, n)
    rgb = rgb.reshape(B, n, 3)
    alpha = -np.expm1(-sigma * delta[:, None])
    trans = np.ones_like(alpha)
    trans[:, 1:] = np.cumprod(1.0 - alpha[:, :-1], axis=1)
    weight = trans * alpha
    trans_final = trans[:, -1] * (1.0 - alpha[:, -1])
    out_rgb = np.sum(weight[:, :, None] * rgb, axis=1) + trans_final[:, None] * bg
    opacity = np.sum(weight, axis=1)
    depth = np.sum(weight * ts, axis=1) / np.maximum(opacity, DEPTH_EPS)
    return sigma, rgb, weight, trans_final, out_rgb, depth, opacity


# -- backward -----------------------------------------------------------------


def render_rays_backward(field: VoxelField, batch: RaySampleBatch, d_rgb_out,
                         scale_cfg: GradScaleConfig = GradScaleConfig(),
                         engine: str = "auto", threads: int = 1):
    """Accumulate field gradients for a rendered bundle.

    ``d_rgb_out`` (B, 3) holds the loss derivative w.r.t. each composited
    ray colour.  Gradients are scaled per sample according to ``scale_cfg``
    before entering the field; the result adds onto the field's gradient
    buffers.  Raises StaleBatchError when the field changed since the
    forward pass.
    """
    batch.check_current(field)
    d_rgb_out = np.ascontiguousarray(d_rgb_out, dtype=field.dtype)
    if d_rgb_out.shape != (batch.n_rays, 3):
        raise InputError(f"d_rgb_out must be ({batch.n_rays}, 3)")
    eng = _pick_engine(engine)
    if eng == "numba":
        from . import kernels

        if kernels.backward_bundle(field, batch, d_rgb_out, scale_cfg, threads):
            return
        # fall through for scaling configs the kernels cannot express
    _backward_numpy(field, batch, d_rgb_out, scale_cfg)


def render_ray_backward(field: VoxelField, batch: RaySampleBatch, d_rgb_out,
                        scale_cfg: GradScaleConfig = GradScaleConfig(),
                        engine: str = "auto"):
    """Single-ray convenience wrapper over render_rays_backward."""
    d = np.asarray(d_rgb_out, dtype=field.dtype).reshape(1, 3)
    render_rays_backward(field, batch, d, scale_cfg, engine=engine)


def _backward_numpy(field, batch, d_rgb_out, scale_cfg):
    ts = batch.ts
    delta = batch.delta_per_ray
    sigma, rgb, weight = batch.sigma, batch.rgb, batch.weight
    trans = batch.trans
    trans_next = trans * (1.0 - batch.alpha)  # T_{j+1}

    dot_c = np.einsum("bc,bnc->bn", d_rgb_out, rgb)
    wc = weight * dot_c
    # d_rgb . S_j: suffix of composited colour strictly behind sample j.
    suffix = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc
    bg_dot = batch.trans_final * (d_rgb_out @ batch.background)
    d_sigma = delta[:, None] * (trans_next * dot_c - (suffix + bg_dot[:, None]))
    d_rgb = weight[:, :, None] * d_rgb_out[:, None, :]

    pts = batch.positions
    d_sigma, d_rgb = scale_sample_gradients(d_sigma, d_rgb, batch.cam_dist, scale_cfg, pts)
    field.query_backward(
        pts.reshape(-1, 3),
        d_sigma.reshape(-1).astype(field.dtype),
        d_rgb.reshape(-1, 3).astype(field.dtype),
    )


# -- image rendering ----------------------------------------------------------


def render_image(field: VoxelField, camera: Camera, n: int,
                 cfg: RenderConfig = RenderConfig(), chunk: int = 8192) -> RenderOutput:
    """Deterministic full-frame render (pixel-centre rays, no jitter)."""
    if cfg.stratified:
        raise InputError("render_image is deterministic; use render_rays for jittered sampling")
    origins, dirs = camera_ray_grid(camera)
    H, W = camera.height, camera.width
    rgb = np.empty((H * W, 3), dtype=field.dtype)
    depth = np.empty(H * W, dtype=field.dtype)
    opac = np.empty(H * W, dtype=field.dtype)
    for s in range(0, H * W, chunk):
        e = min(s + chunk, H * W)
        out, _ = render_rays(field, origins[s:e], dirs[s:e],
                             camera.near, camera.far, n, cfg)
        rgb[s:e] = out.rgb
        depth[s:e] = out.depth
        opac[s:e] = out.opacity
    return RenderOutput(rgb.reshape(H, W, 3), depth.reshape(H, W), opac.reshape(H, W))


# -- engine selection ---------------------------------------------------------

_NUMBA_OK: bool | None = None


def _numba_available() -> bool:
    global _NUMBA_OK
    if _NUMBA_OK is None:
        try:
            from . import kernels  # noqa: F401

            _NUMBA_OK = True
        except Exception:
            _NUMBA_OK = False
    return _NUMBA_OK


def _pick_engine(engine: str) -> str:
    if engine == "auto":
        return "numba" if _numba_available() else "numpy"
    if engine in ("numpy", "numba"):
        if engine == "numba" and not _numba_available():
            raise InputError("numba engine requested but numba is not importable")
        return engine
    raise InputError(f"unknown engine {engine!r}")
