"""Training loop and mode-comparison experiments.

The loop is deliberately plain: sample a batch of rays from random train
pixels, render, take the mean-squared photometric error, run the exact
backward pass (with the configured per-sample gradient scaling), and apply
Adam to the raw grids.  All stochastic choices come from purpose-keyed
streams of one seed, so two runs that differ only in scaling mode see the
very same rays, jitters and initialisation; any difference in outcome is
attributable to the scaling alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .errors import DivergenceError, InputError
from .field import VoxelField, save_rsvf, softplus_inverse
from .geometry import camera_ray_grid
from .io import write_csv
from .metrics import depth_error, mse_to_psnr, near_camera_mass, psnr
from .optim import AdamState, adam_step
from .renderer import RenderConfig, render_image, render_rays, render_rays_backward
from .rng import rng_for
from .scaler import GradScaleConfig
from .scenes import Dataset


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 4000
    batch_rays: int = 4096
    samples_per_ray: int = 192
    field_resolution: tuple = (64, 64, 64)
    init_density: float = 0.01          # activated density at init
    init_noise: float = 0.0             # stddev of raw-value init noise
    lr_density: float = 0.05
    lr_color: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_scale: GradScaleConfig = GradScaleConfig()
    near_override: float | None = None  # force ray start distance (else camera near)
    seed: int = 42
    log_every: int = 100
    log_near_radius: float = 0.25       # radius for the logged near-mass diagnostic
    engine: str = "auto"
    threads: int = 0                    # gradient-buffer chunks; 0 = cpu count

    def resolved_threads(self) -> int:
        import os

        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


@dataclass
class TrainLog:
    """Per-interval training diagnostics."""

    iterations: list = dc_field(default_factory=list)
    loss: list = dc_field(default_factory=list)
    train_psnr: list = dc_field(default_factory=list)
    near_mass: list = dc_field(default_factory=list)
    wall_clock_s: list = dc_field(default_factory=list)
    backward_ms: list = dc_field(default_factory=list)

    def append(self, it, loss, tpsnr, nmass, wall, bwd_ms):
        self.iterations.append(int(it))
        self.loss.append(float(loss))
        self.train_psnr.append(float(tpsnr))
        self.near_mass.append(float(nmass))
        self.wall_clock_s.append(float(wall))
        self.backward_ms.append(float(bwd_ms))

    def to_csv(self, path):
        write_csv(
            path,
            ["iteration", "loss", "train_psnr", "near_mass_mean",
             "wall_clock_s", "backward_ms"],
            zip(self.iterations, self.loss, self.train_psnr,
                self.near_mass, self.wall_clock_s, self.backward_ms),
        )


def make_trainee_field(dataset: Dataset, cfg: TrainConfig) -> VoxelField:
    """Fresh field matching the dataset's world bounds, seeded init."""
    if dataset.gt_field is not None:
        lo, hi = dataset.gt_field.bounds_min, dataset.gt_field.bounds_max
    else:
        lo, hi = (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)
    field = VoxelField(cfg.field_resolution, lo, hi, dtype=np.float32,
                       density_init=softplus_inverse(cfg.init_density))
    if cfg.init_noise > 0:
        field.randomize(rng_for(cfg.seed, "init"), cfg.init_noise, cfg.init_noise)
    return field


class _BatchSampler:
    """Uniform pixel sampler over the train views (one flat pool)."""

    def __init__(self, dataset: Dataset, near_override):
        cams = dataset.train_cameras
        if not cams:
            raise InputError("dataset has no training cameras")
        self.positions = np.stack([c.position for c in cams])
        dirs = []
        for cam in cams:
            _, d = camera_ray_grid(cam)
            dirs.append(d)
        self.dirs = np.stack(dirs)                      # (nt, H*W, 3)
        self.images = dataset.images[dataset.train_idx].reshape(len(cams), -1, 3)
        self.t_near = np.array([
            near_override if near_override is not None else c.near for c in cams
        ])
        self.t_far = np.array([c.far for c in cams])
        self.n_pix = self.dirs.shape[1]

    def draw(self, rng: np.random.Generator, batch: int):
        cam = rng.integers(0, self.dirs.shape[0], batch)
        pix = rng.integers(0, self.n_pix, batch)
        return (np.ascontiguousarray(self.positions[cam]),
                np.ascontiguousarray(self.dirs[cam, pix]),
                self.t_near[cam], self.t_far[cam],
                self.images[cam, pix])


def train(dataset: Dataset, field: VoxelField, cfg: TrainConfig,
          run_dir=None, checkpoint_iters=(), on_checkpoint=None) -> TrainLog:
    """Optimise ``field`` against ``dataset`` in place; returns the log.

    ``on_checkpoint(iteration, field)`` fires after the parameter update of
    each iteration listed in ``checkpoint_iters``.  On a non-finite loss
    the field is snapshotted to ``run_dir`` (when given) and
    DivergenceError is raised.
    """
    if cfg.iterations < 1:
        raise InputError("iterations must be >= 1")
    sampler = _BatchSampler(dataset, cfg.near_override)
    rng_rays = rng_for(cfg.seed, "rays")
    rng_strat = rng_for(cfg.seed, "stratify")
    render_cfg = RenderConfig(background=tuple(np.asarray(dataset.background, dtype=float)),
                              stratified=True, engine=cfg.engine)
    opt_d = AdamState.like(field.density_raw)
    opt_c = AdamState.like(field.color_raw)
    threads = cfg.resolved_threads()
    checkpoints = set(int(i) for i in checkpoint_iters)
    log = TrainLog()
    inv_n = 1.0 / (cfg.batch_rays * 3)
    t_start = time.perf_counter()
    bwd_acc = 0.0
    bwd_count = 0
    for it in range(1, cfg.iterations + 1):
        origins, dirs, t0, t1, target = sampler.draw(rng_rays, cfg.batch_rays)
        out, batch = render_rays(field, origins, dirs, t0, t1,
                                 cfg.samples_per_ray, render_cfg, rng_strat)
        resid = out.rgb.astype(np.float64) - target
        loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            if run_dir is not None:
                save_rsvf(field, _join(run_dir, "diverged.rsvf"))
            raise DivergenceError(f"non-finite loss at iteration {it}")
        d_rgb_out = (2.0 * inv_n) * resid
        field.zero_gradients()
        tb = time.perf_counter()
        render_rays_backward(field, batch, d_rgb_out.astype(field.dtype),
                             cfg.grad_scale, engine=cfg.engine, threads=threads)
        bwd_acc += time.perf_counter() - tb
        bwd_count += 1
        adam_step(field.density_raw, field.density_grad, opt_d, cfg.lr_density,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        adam_step(field.color_raw, field.color_grad, opt_c, cfg.lr_color,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        field.bump_version()
        if it % cfg.log_every == 0 or it == cfg.iterations:
            nm = near_camera_mass(field, dataset.train_cameras, cfg.log_near_radius,
                                  rays_per_camera=16, n_samples=64,
                                  cfg=RenderConfig(engine=cfg.engine))
            log.append(it, loss, mse_to_psnr(loss), nm.mean,
                       time.perf_counter() - t_start,
                       1000.0 * bwd_acc / max(bwd_count, 1))
            bwd_acc = 0.0
            bwd_count = 0
        if it in checkpoints and on_checkpoint is not None:
            on_checkpoint(it, field)
    return log


def _join(d, name):
    import os

    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


# -- mode comparison --------------------------------------------------------------


@dataclass
class ModeResult:
    mode: str
    log: TrainLog
    field: VoxelField
    rows: list                      # metrics.csv rows for this mode
    depth_maps: dict                # iteration -> (H, W) depth of first test view
    final_renders: dict             # test cam index -> (H, W, 3) rgb


METRICS_HEADER = ["mode", "iteration", "psnr_test_mean", "near_mass_mean",
                  "near_mass_max", "depth_err", "wall_clock_s"]


def run_experiment_matrix(dataset: Dataset, cfg: TrainConfig, modes,
                          checkpoint_iters=(500, 1250, 2000, 4000),
                          collapse_radius: float = 0.25,
                          eval_n_samples: int | None = None) -> dict:
    """Train one field per scaling mode under otherwise identical conditions.

    ``modes`` is a list of mode names or GradScaleConfig.  Checkpoints
    are evaluated on the held-out views: test PSNR, near-camera mass (on
    the train cameras, where floaters form), and depth error against the
    ground truth.  Returns {mode_name: ModeResult}.
    """
    if dataset.gt_field is None:
        raise InputError("mode comparison needs a dataset with ground truth")
    if not dataset.test_idx:
        raise InputError("mode comparison needs held-out test views")
    eval_n = eval_n_samples or cfg.samples_per_ray
    eval_cfg = RenderConfig(background=tuple(np.asarray(dataset.background, dtype=float)),
                            engine=cfg.engine)
    checkpoint_iters = sorted(set(int(i) for i in checkpoint_iters if i <= cfg.iterations))
    results = {}
    for mode in modes:
        scale_cfg = mode if isinstance(mode, GradScaleConfig) else GradScaleConfig(mode=mode)
        name = scale_cfg.mode.value
        mode_cfg = replace(cfg, grad_scale=scale_cfg)
        field = make_trainee_field(dataset, mode_cfg)
        rows = []
        depth_maps = {}
        t0 = time.perf_counter()

        def evaluate(iteration, f):
            test_cams = dataset.test_cameras
            psnrs = []
            for k, ci in enumerate(dataset.test_idx):
                out = render_image(f, dataset.cameras[ci], eval_n, eval_cfg)
                psnrs.append(psnr(out.rgb, dataset.images[ci]))
                if k == 0:
                    depth_maps[iteration] = out.depth.copy()
            nm = near_camera_mass(f, dataset.train_cameras, collapse_radius,
                                  cfg=RenderConfig(engine=cfg.engine))
            derr = depth_error(f, dataset.gt_field, test_cams, n_samples=eval_n,
                               cfg=eval_cfg)
            rows.append([name, iteration, float(np.mean(psnrs)), nm.mean, nm.max,
                         derr.mean_abs, time.perf_counter() - t0])

        log = train(dataset, field, mode_cfg,
                    checkpoint_iters=checkpoint_iters, on_checkpoint=evaluate)
        if cfg.iterations not in checkpoint_iters:
            evaluate(cfg.iterations, field)
        finals = {}
        for ci in dataset.test_idx:
            finals[ci] = render_image(field, dataset.cameras[ci], eval_n, eval_cfg).rgb
        results[name] = ModeResult(name, log, field, rows, depth_maps, finals)
    return results


def matrix_rows(results: dict) -> list:
    rows = []
    for res in results.values():
        rows.extend(res.rows)
    return rows


# -- backward-overhead benchmark ---------------------------------------------------


def benchmark_backward(field: VoxelField, modes, batch_rays: int = 2048,
                       samples_per_ray: int = 160, reps: int = 20,
                       seed: int = 0, engine: str = "auto", threads: int = 1) -> dict:
    """Median backward wall time per scaling mode on one fixed batch.

    Rays start outside the field bounds aimed through it, so samples do real
    interpolation work.  Returns {mode_name: seconds} plus "n_samples".
    """
    rng = rng_for(seed, "probes")
    radius = 1.5 * float(np.max(field.bounds_max - field.bounds_min))
    centre = (field.bounds_min + field.bounds_max) / 2
    u = rng.normal(size=(batch_rays, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    origins = centre + radius * u
    targets = centre + rng.uniform(-0.3, 0.3, (batch_rays, 3)) * (field.bounds_max - field.bounds_min)
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cfg = RenderConfig(engine=engine)
    _, batch = render_rays(field, origins, dirs, 0.0, 2.0 * radius,
                           samples_per_ray, cfg)
    dout = rng.normal(size=(batch_rays, 3)).astype(field.dtype)
    out = {"n_samples": batch_rays * samples_per_ray}
    for mode in modes:
        scale_cfg = mode if isinstance(mode, GradScaleConfig) else GradScaleConfig(mode=mode)
        for _ in range(3):  # warm the code path
            field.zero_gradients()
            render_rays_backward(field, batch, dout, scale_cfg, engine=engine, threads=threads)
        times = []
        for _ in range(reps):
            field.zero_gradients()
            t0 = time.perf_counter()
            render_rays_backward(field, batch, dout, scale_cfg, engine=engine, threads=threads)
            times.append(time.perf_counter() - t0)
        out[scale_cfg.mode.value] = float(np.median(times))
    return out
