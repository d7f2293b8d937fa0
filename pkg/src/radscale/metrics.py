"""Quality and diagnostic metrics.

Besides PSNR, two metrics target the failure mode this package exists to
study: ``near_camera_mass`` integrates compositing weight within a small
distance of each camera (direct evidence of density parked in front of
lenses), and ``depth_error`` compares expected ray termination depth with
the ground-truth field on pixels the ground truth actually covers (a
collapsed reconstruction can keep good PSNR while its geometry sits in the
wrong place; depth shows it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import DensityProfile
from .errors import InputError
from .field import VoxelField, softplus
from .renderer import RenderConfig, render_image, render_rays
from .rng import rng_for


def psnr(img: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical inputs."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise InputError(f"psnr: shape mismatch {img.shape} vs {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def mse_to_psnr(mse: float, peak: float = 1.0) -> float:
    if mse <= 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


@dataclass
class NearMassReport:
    radius: float
    per_camera: np.ndarray  # (n_cameras,) mean over probe rays
    mean: float
    max: float


def near_camera_mass(field: VoxelField, cameras, radius: float,
                     rays_per_camera: int = 64, n_samples: int = 128,
                     seed: int = 0, cfg: RenderConfig = RenderConfig()) -> NearMassReport:
    """Compositing weight accumulated within ``radius`` of each camera.

    Probe rays go through random pixels (seeded, independent of training
    streams) and always start at t = 0 regardless of the camera's near
    bound, so mass hiding inside a non-zero near range is still seen.
    For a field with no content near the lens the value is ~0; floaters
    push it towards 1 (fully opaque within the radius).
    """
    if radius <= 0:
        raise InputError("near_camera_mass needs radius > 0")
    if len(cameras) == 0:
        raise InputError("near_camera_mass needs at least one camera")
    rng = rng_for(seed, "probes")
    per_cam = np.empty(len(cameras))
    for k, cam in enumerate(cameras):
        pix = rng.random((rays_per_camera, 2)) * [cam.width, cam.height]
        dirs = cam.pixel_directions(pix)
        origins = np.broadcast_to(cam.position, dirs.shape)
        _, batch = render_rays(field, np.ascontiguousarray(origins), dirs,
                               0.0, cam.far, n_samples, cfg)
        mass = np.sum(batch.weight * (batch.ts < radius), axis=1)
        per_cam[k] = mass.mean()
    return NearMassReport(radius, per_cam, float(per_cam.mean()), float(per_cam.max()))


@dataclass
class DepthErrorReport:
    mean_abs: float          # over all covered pixels of all cameras
    per_camera: np.ndarray   # (n_cameras,)
    coverage: float          # fraction of pixels with ground-truth opacity


def depth_error(field: VoxelField, gt_field: VoxelField, cameras,
                n_samples: int = 128, opacity_threshold: float = 0.5,
                cfg: RenderConfig = RenderConfig()) -> DepthErrorReport:
    """Mean absolute difference of expected depth against the ground truth.

    Only pixels whose ground-truth opacity exceeds ``opacity_threshold``
    count; elsewhere depth is undefined (background).  Both fields must
    cover the same world-space bounds.
    """
    if len(cameras) == 0:
        raise InputError("depth_error needs at least one camera")
    if not (np.allclose(field.bounds_min, gt_field.bounds_min)
            and np.allclose(field.bounds_max, gt_field.bounds_max)):
        raise InputError("depth_error: fields must share world bounds")
    per_cam = np.zeros(len(cameras))
    total_err = 0.0
    total_pix = 0
    covered = 0
    for k, cam in enumerate(cameras):
        out = render_image(field, cam, n_samples, cfg)
        ref = render_image(gt_field, cam, n_samples, cfg)
        mask = ref.opacity > opacity_threshold
        total_pix += mask.size
        covered += int(mask.sum())
        if mask.any():
            err = np.abs(out.depth - ref.depth)[mask]
            per_cam[k] = float(err.mean())
            total_err += float(err.sum())
    if covered == 0:
        raise InputError("depth_error: ground truth is empty in every view")
    return DepthErrorReport(total_err / covered, per_cam, covered / total_pix)


def field_density_profile(field: VoxelField, cameras, bins_per_decade: int = 16,
                          d_min: float | None = None, d_max: float | None = None) -> DensityProfile:
    """Mean activated density of field nodes vs distance to nearest camera.

    The diagnostic view of background collapse: a collapsed field shows a
    density spike at small distances that a healthy one lacks.
    """
    if len(cameras) == 0:
        raise InputError("field_density_profile needs at least one camera")
    nodes = field.node_positions().reshape(-1, 3)
    sigma = softplus(field.density_raw.astype(np.float64)).reshape(-1)
    cam_pos = np.stack([c.position for c in cameras])
    dmin_per_node = np.full(nodes.shape[0], np.inf)
    for p in cam_pos:
        np.minimum(dmin_per_node, np.linalg.norm(nodes - p, axis=1), out=dmin_per_node)
    lo = float(dmin_per_node.min()) if d_min is None else float(d_min)
    hi = float(dmin_per_node.max()) if d_max is None else float(d_max)
    lo = max(lo, 1e-6)
    if hi <= lo:
        raise InputError("field_density_profile: empty distance range")
    nbins = max(1, int(np.ceil(np.log10(hi / lo) * bins_per_decade)))
    edges = np.geomspace(lo, hi * (1 + 1e-12), nbins + 1)
    which = np.clip(np.searchsorted(edges, dmin_per_node, side="right") - 1, -1, nbins)
    centres = []
    means = []
    for b in range(nbins):
        sel = which == b
        if sel.any():
            centres.append(np.sqrt(edges[b] * edges[b + 1]))
            means.append(float(sigma[sel].mean()))
    return DensityProfile(np.array(centres), np.array(means))
