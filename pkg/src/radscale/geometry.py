"""Cameras, rays, and camera rigs.

Conventions, fixed across the package:

* World and camera frames are right-handed.  The columns of a camera's
  rotation matrix are its right / up / backward axes expressed in world
  coordinates, so the camera looks along ``-rotation[:, 2]``.
* Pixels index as (x, y) with x growing right and y growing down.  The
  continuous image point of pixel (i, j) with jitter (jx, jy) in [0, 1)^2
  is (i + jx, j + jy); the default jitter (0.5, 0.5) is the pixel centre.
* A point at camera coordinates q projects to
  u = cx + f * qx / (-qz),  v = cy - f * qy / (-qz),  valid for qz < 0.
* Ray directions are unit length in world space; ray t-values therefore
  measure Euclidean distance from the camera centre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

_ORTHO_TOL = 1e-9


def _as_f64(a, shape, name: str) -> np.ndarray:
    out = np.array(a, dtype=np.float64)  # copy: instances freeze their arrays
    if out.shape != shape:
        raise InputError(f"{name} must have shape {shape}, got {out.shape}")
    return out


@dataclass(frozen=True)
class Camera:
    """A pinhole camera with square pixels.

    ``focal`` and ``principal_point`` are in pixel units.  ``near``/``far``
    bound the t-range of generated rays; ``near`` may be exactly 0, in which
    case rays start at the camera centre.
    """

    rotation: np.ndarray          # (3, 3) world-from-camera
    position: np.ndarray          # (3,)
    focal: float
    width: int
    height: int
    far: float
    near: float = 0.0
    principal_point: np.ndarray | None = None  # (cx, cy); default image centre

    def __post_init__(self):
        rot = _as_f64(self.rotation, (3, 3), "rotation")
        pos = _as_f64(self.position, (3,), "position")
        if self.principal_point is None:
            pp = np.array([self.width / 2.0, self.height / 2.0])
        else:
            pp = _as_f64(self.principal_point, (2,), "principal_point")
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > _ORTHO_TOL or abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise InputError(f"rotation is not a proper orthonormal matrix (max residual {err:.3g})")
        if self.focal <= 0:
            raise InputError("focal must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InputError("image size must be positive")
        if not (0.0 <= self.near < self.far):
            raise InputError(f"need 0 <= near < far, got near={self.near} far={self.far}")
        for name, val in (("rotation", rot), ("position", pos), ("principal_point", pp)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def forward(self) -> np.ndarray:
        """Unit view direction (world space)."""
        return -self.rotation[:, 2]

    def pixel_directions(self, points_img: np.ndarray) -> np.ndarray:
        """Unit world-space ray directions for continuous image points (M, 2)."""
        pts = np.atleast_2d(np.asarray(points_img, dtype=np.float64))
        cx, cy = self.principal_point
        d_cam = np.empty((pts.shape[0], 3))
        d_cam[:, 0] = (pts[:, 0] - cx) / self.focal
        d_cam[:, 1] = -(pts[:, 1] - cy) / self.focal
        d_cam[:, 2] = -1.0
        d_world = d_cam @ self.rotation.T
        return d_world / np.linalg.norm(d_world, axis=1, keepdims=True)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray     # (3,)
    direction: np.ndarray  # (3,) unit
    t_near: float
    t_far: float

    def __post_init__(self):
        o = _as_f64(self.origin, (3,), "origin")
        d = _as_f64(self.direction, (3,), "direction")
        n = np.linalg.norm(d)
        if not np.isclose(n, 1.0, atol=1e-9):
            raise InputError(f"direction must be unit length, |d| = {n}")
        if not (0.0 <= self.t_near < self.t_far):
            raise InputError(f"need 0 <= t_near < t_far, got {self.t_near}, {self.t_far}")
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


def generate_ray(camera: Camera, px, jitter=None) -> Ray:
    """Ray through pixel ``px = (i, j)`` of ``camera``.

    ``jitter`` is an offset in [0, 1)^2 within the pixel footprint; None
    means the pixel centre.  Raises InputError when the pixel index is
    outside the sensor.
    """
    i, j = int(px[0]), int(px[1])
    if not (0 <= i < camera.width and 0 <= j < camera.height):
        raise InputError(f"pixel {px} outside {camera.width}x{camera.height} sensor")
    off = (0.5, 0.5) if jitter is None else (float(jitter[0]), float(jitter[1]))
    if not (0.0 <= off[0] <= 1.0 and 0.0 <= off[1] <= 1.0):
        raise InputError(f"jitter must lie in [0, 1]^2, got {jitter}")
    d = camera.pixel_directions(np.array([[i + off[0], j + off[1]]]))[0]
    return Ray(camera.position, d, camera.near, camera.far)


def camera_ray_grid(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Centre-ray directions for every pixel, row-major over (y, x).

    Returns (origins (H*W, 3), directions (H*W, 3)); ray index r maps to
    pixel (x, y) = (r % W, r // W).
    """
    xs, ys = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    dirs = camera.pixel_directions(pts)
    origins = np.broadcast_to(camera.position, dirs.shape)
    return np.ascontiguousarray(origins), dirs


def project(camera: Camera, points: np.ndarray):
    """Project world points (M, 3) or (3,).

    Returns (uv (M, 2), depth (M,)); depth is the distance along the view
    axis and is <= 0 for points beside or behind the image plane, in which
    case uv holds NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    q = (pts - camera.position) @ camera.rotation  # camera coords
    depth = -q[:, 2]
    uv = np.full((pts.shape[0], 2), np.nan)
    frontal = depth > 0
    cx, cy = camera.principal_point
    uv[frontal, 0] = cx + camera.focal * q[frontal, 0] / depth[frontal]
    uv[frontal, 1] = cy - camera.focal * q[frontal, 1] / depth[frontal]
    return uv, depth


def visible(camera: Camera, points: np.ndarray) -> np.ndarray:
    """Boolean field-of-view test for world points (M, 3) or (3,).

    A point is visible when it projects in front of the camera and inside
    the sensor rectangle [0, W] x [0, H] (edges inclusive).  Distance along
    the ray is not checked: the test is a pure frustum test so that
    visibility counts match rays actually cast through the sensor.
    """
    uv, depth = project(camera, points)
    ok = depth > 0
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] <= camera.width)
    ok &= (uv[:, 1] >= 0) & (uv[:, 1] <= camera.height)
    if np.asarray(points).ndim == 1:
        return ok[0]
    return ok


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rotation for a camera at ``position`` looking at ``target``.

    ``up`` is a hint; the true up axis is re-orthogonalised.  Falls back to
    the z axis as hint when the view direction is (anti)parallel to ``up``.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    backward = position - target
    dist = np.linalg.norm(backward)
    if dist == 0:
        raise InputError("camera position coincides with look-at target")
    backward = backward / dist
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, backward)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(np.array([0.0, 0.0, 1.0]), backward)
    right = right / np.linalg.norm(right)
    true_up = np.cross(backward, right)
    return np.stack([right, true_up, backward], axis=1)


def ring_rig(n: int, radius: float, height: float, target, template: Camera) -> list[Camera]:
    """``n`` cameras on a horizontal circle of ``radius`` around ``target``.

    Cameras sit at height ``height`` above the target plane, spaced at equal
    azimuth, all aimed at ``target``.  Intrinsics and near/far are copied
    from ``template``.
    """
    if n < 1:
        raise InputError("ring_rig needs n >= 1")
    if radius <= 0:
        raise InputError("ring_rig needs radius > 0")
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for k in range(n):
        theta = 2.0 * np.pi * k / n
        pos = target + np.array([radius * np.cos(theta), height, radius * np.sin(theta)])
        cams.append(
            Camera(
                rotation=look_at(pos, target),
                position=pos,
                focal=template.focal,
                width=template.width,
                height=template.height,
                near=template.near,
                far=template.far,
                principal_point=template.principal_point,
            )
        )
    return cams
