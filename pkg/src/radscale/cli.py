"""Command-line front end.

    radscale gen     <config.json>   render a ground-truth dataset
    radscale train   <config.json>   train one field
    radscale compare <config.json>   train one field per scaling mode
    radscale analyze <config.json>   sampling-density / visibility analysis

Shared flags: --seed, --threads, --out; train/compare also accept --mode
and --iterations.  Exit codes: 0 success, 2 training divergence, 64 bad
usage or configuration, 74 I/O failure.

One JSON file configures everything; all sections have defaults, so
``{"schema_version": 1}`` is a valid (small demo) configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .analysis import (
    central_rays,
    density_approx,
    density_exact,
    fit_power_slope,
    on_axis_profile,
    density_monte_carlo,
    visibility_curve,
)
from .errors import ConfigError, DivergenceError, InputError, RadscaleError
from .field import save_rsvf
from .geometry import Camera, ring_rig
from .io import atomic_write, write_csv, write_depth_falsecolor, write_pfm, write_png
from .renderer import RenderConfig, render_image
from .scaler import GradScaleConfig, GradScaleMode, estimate_sigma, make_mapping
from .scenes import SceneSpec, load_dataset, make_scene, render_dataset, save_dataset
from .trainer import (
    METRICS_HEADER,
    TrainConfig,
    make_trainee_field,
    matrix_rows,
    run_experiment_matrix,
    train,
)
from .metrics import depth_error, near_camera_mass, psnr

SCHEMA_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(64, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="radscale", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, op in [("gen", cmd_gen), ("train", cmd_train),
                     ("compare", cmd_compare), ("analyze", cmd_analyze)]:
        q = sub.add_parser(name, help=op.__doc__)
        q.set_defaults(func=op)
        q.add_argument("config", help="path to the experiment JSON")
        q.add_argument("--seed", type=int, default=None, help="override config seed")
        q.add_argument("--threads", type=int, default=None, help="override worker count")
        q.add_argument("--out", default=None, help="override output directory")
        if name in ("train", "compare"):
            q.add_argument("--iterations", type=int, default=None,
                           help="override training iterations")
        if name == "train":
            q.add_argument("--mode", default=None,
                           choices=[m.value for m in GradScaleMode],
                           help="override gradient-scaling mode")
    return p


# -- configuration ---------------------------------------------------------------


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def load_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    return cfg


def build_scene_spec(cfg: dict) -> SceneSpec:
    sec = _section(cfg, "scene")
    try:
        return SceneSpec(
            kind=sec.get("kind", "textured_box"),
            center=tuple(sec.get("center", (0.0, 0.0, 0.0))),
            extent=float(sec.get("extent", 0.6)),
            texture_seed=int(sec.get("texture_seed", cfg.get("seed", 42))),
            gt_resolution=tuple(sec.get("gt_resolution", (64, 64, 64))),
            bounds_min=tuple(sec.get("bounds_min", (-1.0, -1.0, -1.0))),
            bounds_max=tuple(sec.get("bounds_max", (1.0, 1.0, 1.0))),
            texture_cells=int(sec.get("texture_cells", 4)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"scene section: {e}") from None


def build_cameras(cfg: dict, scene: SceneSpec) -> list[Camera]:
    sec = _section(cfg, "rig")
    rings = sec.get("rings", [
        {"n": 5, "radius": 0.55, "height": 0.1},
        {"n": 5, "radius": 0.8, "height": 0.3},
        {"n": 5, "radius": 1.1, "height": 0.55},
        {"n": 5, "radius": 1.6, "height": 0.9},
    ])
    target = np.asarray(sec.get("target", scene.center), dtype=np.float64)
    width = int(sec.get("width", 64))
    height_px = int(sec.get("height", 64))
    focal = float(sec.get("focal", width))
    near = float(sec.get("near", 0.0))
    far = sec.get("far")
    cams: list[Camera] = []
    box_c = (np.asarray(scene.bounds_min) + np.asarray(scene.bounds_max)) / 2
    half_diag = float(np.linalg.norm(np.asarray(scene.bounds_max) - np.asarray(scene.bounds_min))) / 2
    try:
        for ring in rings:
            radius = float(ring["radius"])
            height = float(ring.get("height", 0.0))
            if far is not None:
                this_far = float(far)
            else:
                # covers every box corner from any azimuth of this ring
                this_far = float(np.hypot(radius, height) + np.linalg.norm(target - box_c) + half_diag)
            template = Camera(rotation=np.eye(3), position=(0, 0, 0), focal=focal,
                              width=width, height=height_px, near=near, far=this_far)
            cams.extend(ring_rig(int(ring["n"]), radius, height, target, template))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"rig section: {e}") from None
    if not cams:
        raise ConfigError("rig section produced no cameras")
    return cams


def build_grad_scale(sec: dict, cameras=None) -> GradScaleConfig:
    mode = GradScaleMode.parse(sec.get("mode", "none"))
    sigma = float(sec.get("sigma", 1.0))
    if sec.get("auto_sigma", False):
        if not cameras:
            raise ConfigError("auto_sigma needs a camera rig (run against a dataset)")
        sigma = estimate_sigma(cameras)
    mapping = sec.get("mapping")
    return GradScaleConfig(mode=mode,
                           sigma=sigma,
                           mapping=make_mapping(mapping) if mapping else None)


def build_train_config(cfg: dict, args, cameras=None) -> TrainConfig:
    sec = _section(cfg, "train")
    gs = sec.get("grad_scale", {})
    if args is not None and getattr(args, "mode", None):
        gs = dict(gs, mode=args.mode)
    try:
        tc = TrainConfig(
            iterations=int(sec.get("iterations", 2000)),
            batch_rays=int(sec.get("batch_rays", 4096)),
            samples_per_ray=int(sec.get("samples_per_ray", 192)),
            field_resolution=tuple(sec.get("field_resolution", (64, 64, 64))),
            init_density=float(sec.get("init_density", 0.01)),
            init_noise=float(sec.get("init_noise", 0.0)),
            lr_density=float(sec.get("lr_density", 0.05)),
            lr_color=float(sec.get("lr_color", 0.02)),
            adam_beta1=float(sec.get("adam_beta1", 0.9)),
            adam_beta2=float(sec.get("adam_beta2", 0.999)),
            adam_eps=float(sec.get("adam_eps", 1e-8)),
            grad_scale=build_grad_scale(gs, cameras),
            near_override=(None if sec.get("near_override") is None
                           else float(sec["near_override"])),
            seed=int(cfg.get("seed", 42)),
            log_every=int(sec.get("log_every", 100)),
            threads=int(cfg.get("threads", 0)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train section: {e}") from None
    if args is not None and args.iterations is not None:
        from dataclasses import replace

        tc = replace(tc, iterations=int(args.iterations))
    return tc


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.threads is not None:
        cfg["threads"] = int(args.threads)
    if args.out is not None:
        cfg["output_dir"] = args.out
    return cfg


def _out_dir(cfg: dict) -> str:
    return cfg.get("output_dir", "runs/radscale")


def _dataset_dir(cfg: dict) -> str:
    return os.path.join(_out_dir(cfg), _section(cfg, "dataset").get("dir", "dataset"))


def _render_cfg(cfg: dict) -> RenderConfig:
    bg = _section(cfg, "dataset").get("background", (0.0, 0.0, 0.0))
    return RenderConfig(background=tuple(bg))


# -- subcommands -----------------------------------------------------------------


def cmd_gen(cfg: dict, args) -> int:
    """Render the ground-truth dataset for the configured scene and rig."""
    scene = build_scene_spec(cfg)
    cams = build_cameras(cfg, scene)
    sec = _section(cfg, "dataset")
    gt = make_scene(scene)
    ds = render_dataset(gt, cams, int(sec.get("n_samples", 512)),
                        float(sec.get("split_ratio", 0.2)), _render_cfg(cfg))
    out = _dataset_dir(cfg)
    save_dataset(ds, out)
    print(f"gen: wrote {len(cams)} views ({len(ds.train_idx)} train / "
          f"{len(ds.test_idx)} test) to {out}")
    return 0


def _write_eval_artifacts(run_dir, field, ds, eval_n, render_cfg):
    os.makedirs(run_dir, exist_ok=True)
    for ci in ds.test_idx:
        out = render_image(field, ds.cameras[ci], eval_n, render_cfg)
        write_png(out.rgb, os.path.join(run_dir, f"test_{ci:04d}.png"))
        write_pfm(out.depth, os.path.join(run_dir, f"test_{ci:04d}_depth.pfm"))
        write_depth_falsecolor(out.depth, os.path.join(run_dir, f"test_{ci:04d}_depth.png"),
                               vmin=0.0, vmax=ds.cameras[ci].far)


def cmd_train(cfg: dict, args) -> int:
    """Train a field on an existing dataset (run ``gen`` first)."""
    ds = load_dataset(_dataset_dir(cfg))
    tc = build_train_config(cfg, args, ds.train_cameras)
    field = make_trainee_field(ds, tc)
    mode = tc.grad_scale.mode.value
    run_dir = os.path.join(_out_dir(cfg), f"train_{mode}")
    os.makedirs(run_dir, exist_ok=True)
    log = train(ds, field, tc, run_dir=run_dir)
    save_rsvf(field, os.path.join(run_dir, "final.rsvf"))
    log.to_csv(os.path.join(run_dir, "train_log.csv"))
    sec = _section(cfg, "metrics")
    eval_n = int(sec.get("eval_n_samples", tc.samples_per_ray))
    render_cfg = _render_cfg(cfg)
    _write_eval_artifacts(run_dir, field, ds, eval_n, render_cfg)
    # final-quality row, mirroring the compare command's metrics file
    rows = []
    if ds.test_idx:
        p = float(np.mean([
            psnr(render_image(field, ds.cameras[ci], eval_n, render_cfg).rgb, ds.images[ci])
            for ci in ds.test_idx
        ]))
        nm = near_camera_mass(field, ds.train_cameras, float(sec.get("collapse_radius", 0.25)))
        derr = (depth_error(field, ds.gt_field, ds.test_cameras, eval_n, cfg=render_cfg).mean_abs
                if ds.gt_field is not None else float("nan"))
        rows.append([mode, tc.iterations, p, nm.mean, nm.max, derr,
                     log.wall_clock_s[-1] if log.wall_clock_s else 0.0])
    write_csv(os.path.join(run_dir, "metrics.csv"), METRICS_HEADER, rows)
    print(f"train[{mode}]: {tc.iterations} iterations, final loss "
          f"{log.loss[-1]:.3e}, artifacts in {run_dir}")
    return 0


def cmd_compare(cfg: dict, args) -> int:
    """Train one field per gradient-scaling mode and tabulate the outcome."""
    ds = load_dataset(_dataset_dir(cfg))
    tc = build_train_config(cfg, args, ds.train_cameras)
    sec = _section(cfg, "compare")
    modes = [GradScaleMode.parse(m) for m in sec.get("modes", ["none", "quadratic", "clamped"])]
    checkpoints = sec.get("checkpoints", (500, 1250, 2000, 4000))
    results = run_experiment_matrix(
        ds, tc, modes,
        checkpoint_iters=checkpoints,
        collapse_radius=float(sec.get("collapse_radius", 0.25)),
        eval_n_samples=sec.get("eval_n_samples"),
    )
    run_dir = os.path.join(_out_dir(cfg), "compare")
    os.makedirs(run_dir, exist_ok=True)
    write_csv(os.path.join(run_dir, "metrics.csv"), METRICS_HEADER, matrix_rows(results))
    for name, res in results.items():
        res.log.to_csv(os.path.join(run_dir, f"train_log_{name}.csv"))
        save_rsvf(res.field, os.path.join(run_dir, f"final_{name}.rsvf"))
        far = ds.cameras[ds.test_idx[0]].far if ds.test_idx else 1.0
        for it, depth in res.depth_maps.items():
            write_pfm(depth, os.path.join(run_dir, f"depth_{name}_{it:05d}.pfm"))
            write_depth_falsecolor(depth, os.path.join(run_dir, f"depth_{name}_{it:05d}.png"),
                                   vmin=0.0, vmax=far)
        for ci, rgb in res.final_renders.items():
            write_png(rgb, os.path.join(run_dir, f"final_{name}_view{ci:04d}.png"))
    for row in matrix_rows(results):
        print("compare:", ",".join(str(v) for v in row))
    print(f"compare: artifacts in {run_dir}")
    return 0


def cmd_analyze(cfg: dict, args) -> int:
    """Sampling-density and visibility analysis for the configured rig."""
    scene = build_scene_spec(cfg)
    cams = build_cameras(cfg, scene)
    sec = _section(cfg, "analyze")
    out_dir = os.path.join(_out_dir(cfg), "analysis")
    os.makedirs(out_dir, exist_ok=True)

    # visibility along each camera's central ray
    centroid = np.mean([c.position for c in cams], axis=0)
    rig_radius = float(np.median([np.linalg.norm(c.position - centroid) for c in cams]))
    dsec = sec.get("distances", {})
    dists = np.geomspace(float(dsec.get("min", 0.05 * rig_radius)),
                         float(dsec.get("max", 3.0 * rig_radius)),
                         int(dsec.get("count", 64)))
    curve = visibility_curve(cams, central_rays(cams), dists)
    curve.to_csv(os.path.join(out_dir, "visibility.csv"))
    peak_d = float(curve.distances[np.argmax(curve.values)])

    # Monte-Carlo sampling density along a camera axis.  The histogram is a
    # voxel grid, so the probe camera is placed axis-aligned (looking down
    # -z at the rig target from the first camera's stand-off distance); the
    # inverse-square law is isotropic, so orientation does not matter.
    cam0 = cams[0]
    target = np.asarray(_section(cfg, "rig").get("target", scene.center), dtype=np.float64)
    stand_off = float(np.linalg.norm(cam0.position - target))
    cam = Camera(rotation=np.eye(3), position=target + [0.0, 0.0, stand_off],
                 focal=cam0.focal, width=cam0.width, height=cam0.height,
                 near=cam0.near, far=cam0.far)
    axis_lo = float(sec.get("axis_min", 0.05 * cam.far))
    axis_hi = float(sec.get("axis_max", 0.7 * cam.far))
    n_axis = int(sec.get("axis_voxels", 30))
    h = (axis_hi - axis_lo) / n_axis
    half_req = float(sec.get("region_halfwidth", 5.5 * h))
    k = max(3, 2 * int(np.ceil(half_req / h - 0.5)) + 1)  # odd: centres a column on the axis
    half = k * h / 2.0
    region_min = np.array([target[0] - half, target[1] - half,
                           cam.position[2] - axis_hi])
    region_max = np.array([target[0] + half, target[1] + half,
                           cam.position[2] - axis_lo])
    resolution = (k, k, n_axis)
    hist = density_monte_carlo([cam], region_min, region_max, resolution,
                               int(sec.get("rays_per_camera", 200_000)),
                               int(sec.get("samples_per_ray", 128)),
                               seed=int(cfg.get("seed", 42)))
    d_axis, mc_vals, centres = on_axis_profile(hist, region_min, region_max, cam)
    keep = (d_axis >= axis_lo) & (d_axis <= axis_hi) & (mc_vals > 0)
    d_axis, mc_vals, centres = d_axis[keep], mc_vals[keep], centres[keep]
    exact = density_exact(centres, [cam])
    approx = density_approx(centres, [cam])
    write_csv(os.path.join(out_dir, "density_axis.csv"),
              ["distance", "mc", "exact", "approx"],
              zip(d_axis, mc_vals, exact, approx))
    slope = fit_power_slope(d_axis, mc_vals) if d_axis.size >= 2 else float("nan")
    summary = {
        "visibility_peak_distance": peak_d,
        "rig_radius": rig_radius,
        "mc_slope_loglog": slope,
        "n_axis_voxels": int(d_axis.size),
    }
    with atomic_write(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    print(f"analyze: visibility peak at {peak_d:.3f} (rig radius {rig_radius:.3f}), "
          f"MC log-log slope {slope:.3f}; artifacts in {out_dir}")
    return 0


# -- entry point -----------------------------------------------------------------


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        threads = int(cfg.get("threads", 0))
        if threads > 0:
            try:
                import numba

                numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
            except ImportError:
                pass
        return args.func(cfg, args)
    except DivergenceError as e:
        print(f"radscale: training diverged: {e}", file=sys.stderr)
        return 2
    except (ConfigError, InputError) as e:
        print(f"radscale: {e}", file=sys.stderr)
        return 64
    except OSError as e:
        print(f"radscale: i/o error: {e}", file=sys.stderr)
        return 74
    except RadscaleError as e:
        print(f"radscale: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
