"""Procedural ground-truth scenes and posed-image datasets.

Ground truth is itself a voxel field (built analytically, never trained),
so a trained field can be compared against it voxel for voxel and through
renders.  Empty space uses a raw density whose softplus is exactly zero in
both float precisions, making "vacuum" genuinely transparent.

Datasets pair a camera rig with images rendered from the ground truth.
In memory the images are the float renders (bit-exact self-consistency);
on disk they are 8-bit PNGs, so a reloaded dataset carries quantisation of
at most half a grey level per channel, identically for every view.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .field import RAW_EMPTY, VoxelField, load_rsvf, save_rsvf
from .geometry import Camera
from .io import atomic_write, quantize_u8, read_png, write_png
from .renderer import RenderConfig, render_image

# Raw density of solid matter: softplus(60) = 60, opaque within ~a voxel
# at the scales used here.
RAW_SOLID = 60.0

SCENE_KINDS = ("textured_box", "sphere_cluster", "checker_plane")


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "textured_box"
    center: tuple = (0.0, 0.0, 0.0)
    extent: float = 0.6
    texture_seed: int = 0
    gt_resolution: tuple = (64, 64, 64)
    bounds_min: tuple = (-1.0, -1.0, -1.0)
    bounds_max: tuple = (1.0, 1.0, 1.0)
    # cells per box edge; high values give texture finer than a trainee
    # voxel, i.e. detail a trained field can never fully absorb
    texture_cells: int = 4

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise InputError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if not self.extent > 0:
            raise InputError("scene extent must be positive")
        if self.texture_cells < 1:
            raise InputError("texture_cells must be >= 1")
        lo = np.asarray(self.bounds_min, dtype=np.float64)
        hi = np.asarray(self.bounds_max, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64)
        if np.any(c - self.extent / 2 < lo) or np.any(c + self.extent / 2 > hi):
            raise InputError("scene content does not fit inside the field bounds")


def _logit(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 1e-4, 1.0 - 1e-4)
    return np.log(c / (1.0 - c))


def make_scene(spec: SceneSpec, rng: np.random.Generator | None = None) -> VoxelField:
    """Build the ground-truth field for ``spec``.

    Deterministic: the default rng is seeded from ``spec.texture_seed``,
    so the same spec always produces a bit-identical field.
    """
    if rng is None:
        rng = np.random.default_rng(spec.texture_seed)
    gt = VoxelField(spec.gt_resolution, spec.bounds_min, spec.bounds_max,
                    dtype=np.float32, density_init=RAW_EMPTY, color_init=0.0)
    pos = gt.node_positions()
    center = np.asarray(spec.center)
    rel = pos - center
    half = spec.extent / 2.0

    if spec.kind == "textured_box":
        mask = np.all(np.abs(rel) <= half, axis=-1)
        # independent palette draw per texture cell
        cells = spec.texture_cells
        palette = rng.uniform(0.08, 0.92, size=(6, 3))
        lut = rng.integers(0, len(palette), size=(cells, cells, cells))
        u = np.clip((rel + half) / spec.extent, 0.0, 1.0 - 1e-6)
        cell = np.floor(u * cells).astype(int)
        color = palette[lut[cell[..., 0], cell[..., 1], cell[..., 2]]]
    elif spec.kind == "sphere_cluster":
        n = int(rng.integers(4, 9))
        centers = center + rng.uniform(-0.3, 0.3, size=(n, 3)) * half
        radii = rng.uniform(0.18, 0.38, size=n) * half
        palette = rng.uniform(0.08, 0.92, size=(n, 3))
        mask = np.zeros(pos.shape[:3], dtype=bool)
        color = np.zeros(pos.shape)
        for k in range(n):
            inside = np.linalg.norm(pos - centers[k], axis=-1) <= radii[k]
            # later spheres overwrite earlier ones where they overlap
            mask |= inside
            color[inside] = palette[k]
    else:  # checker_plane
        thickness = max(spec.extent * 0.06, 2.5 * float(gt.spacing.max()))
        mask = (np.abs(rel[..., 1]) <= thickness / 2) \
            & (np.abs(rel[..., 0]) <= half) & (np.abs(rel[..., 2]) <= half)
        c1, c2 = rng.uniform(0.08, 0.92, size=(2, 3))
        u = np.clip((rel + half) / spec.extent, 0.0, 1.0 - 1e-6)
        cell = np.floor(u * 8).astype(int)
        even = (cell[..., 0] + cell[..., 2]) % 2 == 0
        color = np.where(even[..., None], c1, c2)

    gt.density_raw[mask] = RAW_SOLID
    craw = np.full(pos.shape, _logit(np.zeros(3)), dtype=np.float32)
    craw[mask] = _logit(color[mask]).astype(np.float32)
    gt.color_raw[:] = craw
    gt.bump_version()
    return gt


# -- datasets -------------------------------------------------------------------


@dataclass
class Dataset:
    cameras: list
    images: np.ndarray            # (n, H, W, 3) float32 in [0, 1]
    train_idx: list
    test_idx: list
    background: np.ndarray        # (3,)
    n_samples: int                # samples per ray used to render the images
    gt_field: VoxelField | None = None

    @property
    def train_cameras(self):
        return [self.cameras[i] for i in self.train_idx]

    @property
    def test_cameras(self):
        return [self.cameras[i] for i in self.test_idx]


def split_train_test(n: int, split_ratio: float):
    """Deterministic split: every k-th camera is a test view, k = round(1/ratio).

    ``split_ratio`` is the test fraction; 0 puts everything in train.
    """
    if not 0 <= split_ratio < 1:
        raise InputError("split_ratio must be in [0, 1)")
    if split_ratio == 0:
        return list(range(n)), []
    k = max(2, int(round(1.0 / split_ratio)))
    test = list(range(k - 1, n, k))
    train = [i for i in range(n) if i not in set(test)]
    return train, test


def render_dataset(gt_field: VoxelField, cameras, n_samples: int,
                   split_ratio: float = 0.2,
                   cfg: RenderConfig = RenderConfig()) -> Dataset:
    """Render every camera against the ground truth and split the views."""
    if len(cameras) == 0:
        raise InputError("render_dataset needs at least one camera")
    sizes = {(c.width, c.height) for c in cameras}
    if len(sizes) != 1:
        raise InputError("all dataset cameras must share one image size")
    images = np.stack([
        render_image(gt_field, cam, n_samples, cfg).rgb.astype(np.float32)
        for cam in cameras
    ])
    train, test = split_train_test(len(cameras), split_ratio)
    return Dataset(list(cameras), images, train, test,
                   cfg.background_array(np.float32), n_samples, gt_field)


# -- disk layout ------------------------------------------------------------------
#
#   <dir>/cameras.json   rig and render metadata
#   <dir>/split.json     train/test camera indices
#   <dir>/images/cam_0000.png ...
#   <dir>/gt.rsvf        ground-truth field checkpoint


def _camera_to_dict(cam: Camera) -> dict:
    return {
        "rotation": cam.rotation.tolist(),
        "position": cam.position.tolist(),
        "focal": cam.focal,
        "width": cam.width,
        "height": cam.height,
        "near": cam.near,
        "far": cam.far,
        "principal_point": cam.principal_point.tolist(),
    }


def _camera_from_dict(d: dict) -> Camera:
    try:
        return Camera(
            rotation=np.array(d["rotation"]),
            position=np.array(d["position"]),
            focal=float(d["focal"]),
            width=int(d["width"]),
            height=int(d["height"]),
            near=float(d["near"]),
            far=float(d["far"]),
            principal_point=np.array(d["principal_point"]),
        )
    except KeyError as e:
        raise ConfigError(f"camera entry is missing key {e}") from None


def save_dataset(ds: Dataset, out_dir):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    meta = {
        "cameras": [_camera_to_dict(c) for c in ds.cameras],
        "background": np.asarray(ds.background, dtype=float).tolist(),
        "n_samples": ds.n_samples,
    }
    with atomic_write(os.path.join(out_dir, "cameras.json"), "w") as f:
        json.dump(meta, f, indent=2)
    with atomic_write(os.path.join(out_dir, "split.json"), "w") as f:
        json.dump({"train": list(ds.train_idx), "test": list(ds.test_idx)}, f,
                  indent=2)
    for i, img in enumerate(ds.images):
        write_png(img, os.path.join(out_dir, "images", f"cam_{i:04d}.png"))
    if ds.gt_field is not None:
        save_rsvf(ds.gt_field, os.path.join(out_dir, "gt.rsvf"))


def load_dataset(in_dir) -> Dataset:
    meta_path = os.path.join(in_dir, "cameras.json")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ConfigError(f"{meta_path}: invalid JSON ({e})") from None
    split_path = os.path.join(in_dir, "split.json")
    try:
        with open(split_path) as f:
            split = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{split_path}: invalid JSON ({e})") from None
    cameras = [_camera_from_dict(d) for d in meta["cameras"]]
    images = np.stack([
        read_png(os.path.join(in_dir, "images", f"cam_{i:04d}.png"))
        for i in range(len(cameras))
    ])
    gt_path = os.path.join(in_dir, "gt.rsvf")
    gt = load_rsvf(gt_path) if os.path.exists(gt_path) else None
    return Dataset(cameras, images, list(split["train"]), list(split["test"]),
                   np.asarray(meta["background"], dtype=np.float32),
                   int(meta["n_samples"]), gt)
