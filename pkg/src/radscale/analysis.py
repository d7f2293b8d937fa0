"""Sampling-density analysis.

Training samples a field along camera rays, so the density of samples per
unit volume is highly non-uniform: points close to a camera are crossed by
a whole image's worth of rays.  For one camera at c with unit view axis f,
uniform pixel coverage and uniform t-sampling, the expected sample density
at a visible point p works out to

    rho(p)  proportional to  (1 / cos theta) * 1 / |p - c|^2

with theta the angle between f and p - c: an inverse-square falloff with a
mild field-of-view correction.  ``density_exact`` evaluates that expression
per camera (zero where the camera does not see p), ``density_approx`` drops
the cosine term, and ``density_monte_carlo`` measures the same quantity by
actually casting rays and histogramming samples into voxels, which is the
ground truth the closed forms are validated against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, SingularityError
from .geometry import Camera, visible
from .io import write_csv
from .rng import rng_for

# Points closer to a camera centre than this are singular for the 1/d^2 law.
SINGULARITY_RADIUS = 1e-9


@dataclass
class DensityProfile:
    """A scalar quantity sampled against distance (both 1-d arrays)."""

    distances: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.distances.shape != self.values.shape or self.distances.ndim != 1:
            raise InputError("profile needs matching 1-d distance/value arrays")
        if np.any(np.diff(self.distances) <= 0):
            raise InputError("profile distances must be strictly increasing")

    def to_csv(self, path):
        write_csv(path, ["distance", "value"], zip(self.distances, self.values))


def _per_camera_terms(points: np.ndarray, camera: Camera, with_cosine: bool) -> np.ndarray:
    q = points - camera.position
    dist2 = np.sum(q * q, axis=1)
    if np.any(dist2 < SINGULARITY_RADIUS**2):
        raise SingularityError("sampling density diverges at a camera centre")
    vis = visible(camera, points)
    out = np.zeros(points.shape[0])
    if not np.any(vis):
        return out
    if with_cosine:
        along = q[vis] @ camera.forward  # = dist * cos(theta), > 0 for visible points
        out[vis] = np.sqrt(dist2[vis]) / along / dist2[vis]
    else:
        out[vis] = 1.0 / dist2[vis]
    return out


def density_exact(points: np.ndarray, cameras) -> np.ndarray:
    """Closed-form relative sample density at world points (M, 3).

    Sums the per-camera inverse-square law with the 1/cos(theta)
    field-of-view correction; cameras that do not see a point contribute
    zero.  Raises SingularityError within SINGULARITY_RADIUS of a camera.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(points.shape[0])
    for cam in cameras:
        out += _per_camera_terms(points, cam, with_cosine=True)
    return out


def density_approx(points: np.ndarray, cameras) -> np.ndarray:
    """Inverse-square-only approximation of :func:`density_exact`."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(points.shape[0])
    for cam in cameras:
        out += _per_camera_terms(points, cam, with_cosine=False)
    return out


# -- Monte-Carlo measurement ----------------------------------------------------


def density_monte_carlo(cameras, region_min, region_max, resolution,
                        rays_per_camera: int, samples_per_ray: int,
                        seed: int = 0) -> np.ndarray:
    """Measure sample density by casting rays and counting hits per voxel.

    Rays go through uniformly random pixels of each camera; each ray takes
    ``samples_per_ray`` stratified t-samples in [near, far].  The returned
    histogram is counts / (voxel volume * rays_per_camera * samples_per_ray),
    i.e. sample density up to one constant shared by all voxels and cameras,
    directly comparable in *shape* with :func:`density_exact`.
    """
    region_min = np.asarray(region_min, dtype=np.float64)
    region_max = np.asarray(region_max, dtype=np.float64)
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != 3 or min(resolution) < 1:
        raise InputError("histogram resolution must be three positive counts")
    if not np.all(region_max > region_min):
        raise InputError("region_max must exceed region_min on every axis")
    if rays_per_camera < 1 or samples_per_ray < 1:
        raise InputError("need at least one ray and one sample")
    rng = rng_for(seed, "analysis")
    size = region_max - region_min
    res = np.array(resolution)
    hist = np.zeros(resolution, dtype=np.float64).reshape(-1)
    ncell = hist.size
    chunk = max(1, int(2e6 // max(samples_per_ray, 1)))
    for cam in cameras:
        for s in range(0, rays_per_camera, chunk):
            m = min(chunk, rays_per_camera - s)
            pix = rng.random((m, 2)) * [cam.width, cam.height]
            dirs = cam.pixel_directions(pix)
            u = rng.random((m, samples_per_ray))
            dt = (cam.far - cam.near) / samples_per_ray
            ts = cam.near + (np.arange(samples_per_ray)[None, :] + u) * dt
            pts = cam.position[None, None, :] + ts[:, :, None] * dirs[:, None, :]
            g = (pts.reshape(-1, 3) - region_min) / size * res
            inside = np.all((g >= 0) & (g < res), axis=1)
            idx = g[inside].astype(np.int64)
            flat = (idx[:, 0] * res[1] + idx[:, 1]) * res[2] + idx[:, 2]
            hist += np.bincount(flat, minlength=ncell)
    voxel_vol = float(np.prod(size / res))
    norm = voxel_vol * rays_per_camera * samples_per_ray
    return hist.reshape(resolution) / norm


def on_axis_profile(hist: np.ndarray, region_min, region_max, camera: Camera,
                    tol_frac: float = 0.51):
    """Extract voxels whose centres lie on the camera's view axis.

    Returns (distances (K,), values (K,), centres (K, 3)) sorted by
    distance from the camera.  A centre counts as on-axis when its
    perpendicular distance to the axis is below ``tol_frac`` of the
    smallest voxel edge.
    """
    region_min = np.asarray(region_min, dtype=np.float64)
    region_max = np.asarray(region_max, dtype=np.float64)
    res = np.array(hist.shape)
    h = (region_max - region_min) / res
    axes = [region_min[k] + h[k] * (np.arange(res[k]) + 0.5) for k in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    centres = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    q = centres - camera.position
    along = q @ camera.forward
    perp = np.linalg.norm(q - along[:, None] * camera.forward[None, :], axis=1)
    mask = (along > 0) & (perp < tol_frac * h.min())
    dist = np.linalg.norm(q[mask], axis=1)
    order = np.argsort(dist)
    return dist[order], hist.reshape(-1)[mask][order], centres[mask][order]


def fit_power_slope(distances, values) -> float:
    """Least-squares slope of log10(value) against log10(distance)."""
    d = np.asarray(distances, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    keep = (d > 0) & (v > 0)
    if keep.sum() < 2:
        raise InputError("need at least two positive points to fit a slope")
    return float(np.polyfit(np.log10(d[keep]), np.log10(v[keep]), 1)[0])


# -- visibility ------------------------------------------------------------------


def visibility_curve(cameras, probe_rays, distances) -> DensityProfile:
    """Mean camera count seeing the point at each distance along probe rays.

    For each d in ``distances`` the point ``origin + d * direction`` of every
    probe ray is tested against every camera's field of view; the value is
    the camera count averaged over rays.  For an inward-facing rig probed
    from its own cameras the curve rises to a maximum near the subject
    distance (where all views overlap) and falls beyond it.
    """
    if len(cameras) == 0:
        raise InputError("visibility_curve needs at least one camera")
    if len(probe_rays) == 0:
        raise InputError("visibility_curve needs at least one probe ray")
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 1 or np.any(distances < 0):
        raise InputError("distances must be a 1-d array of non-negative values")
    origins = np.stack([r.origin for r in probe_rays])      # (R, 3)
    dirs = np.stack([r.direction for r in probe_rays])
    pts = origins[None, :, :] + distances[:, None, None] * dirs[None, :, :]
    flat = pts.reshape(-1, 3)
    count = np.zeros(flat.shape[0])
    for cam in cameras:
        count += visible(cam, flat)
    values = count.reshape(distances.shape[0], -1).mean(axis=1)
    return DensityProfile(distances, values)


def central_rays(cameras):
    """The centre-pixel ray of each camera (convenient probe-ray set)."""
    from .geometry import generate_ray

    return [generate_ray(c, (c.width // 2, c.height // 2)) for c in cameras]
