"""Differentiable voxel radiance fields with sampling-aware gradient scaling.

The package trains an emission-absorption voxel field from posed images,
reproduces the near-camera density build-up ("floaters") caused by uneven
ray sampling, and removes it by rescaling per-sample gradients with a
clamped quadratic of camera distance.  An analysis toolkit quantifies the
sampling density itself, both in closed form and by Monte-Carlo counting.
"""

from .errors import (
    ConfigError,
    DivergenceError,
    InputError,
    RadscaleError,
    SingularityError,
    StaleBatchError,
)
from .field import (RAW_EMPTY, VoxelField, load_rsvf, save_rsvf, sigmoid,
                    softplus, softplus_inverse)
from .geometry import Camera, Ray, camera_ray_grid, generate_ray, look_at, project, ring_rig, visible
from .io import (
    atomic_write,
    falsecolor,
    quantize_u8,
    read_csv,
    read_pfm,
    read_png,
    write_csv,
    write_depth_falsecolor,
    write_pfm,
    write_png,
)
from .optim import AdamState, adam_step
from .renderer import (
    RenderConfig,
    RenderOutput,
    RaySampleBatch,
    render_image,
    render_ray,
    render_ray_backward,
    render_rays,
    render_rays_backward,
    sample_ray,
)
from .analysis import (
    DensityProfile,
    density_approx,
    density_exact,
    central_rays,
    fit_power_slope,
    on_axis_profile,
    density_monte_carlo,
    visibility_curve,
)
from .metrics import (
    DepthErrorReport,
    NearMassReport,
    depth_error,
    field_density_profile,
    mse_to_psnr,
    near_camera_mass,
    psnr,
)
from .rng import rng_for
from .scaler import (
    ContractionMapping,
    GradScaleConfig,
    GradScaleMode,
    IdentityMapping,
    Mapping,
    estimate_sigma,
    make_mapping,
    numerical_jacobian_det,
    scale_factor,
    scale_sample_gradients,
)
from .scenes import (
    Dataset,
    SceneSpec,
    load_dataset,
    make_scene,
    render_dataset,
    save_dataset,
    split_train_test,
)
from .trainer import (
    ModeResult,
    TrainConfig,
    TrainLog,
    benchmark_backward,
    make_trainee_field,
    matrix_rows,
    run_experiment_matrix,
    train,
)

__version__ = "0.1.0"
