"""The scaling laws themselves, and what they cost in the backward pass."""
import numpy as np

from radscale import (ContractionMapping, GradScaleConfig, GradScaleMode,
                      VoxelField, benchmark_backward, scale_factor, write_csv)

# Per-sample factor as a function of camera distance, one column per mode
deltas = np.linspace(0.01, 3.0, 300)
cols = {}
for mode in ("none", "quadratic", "clamped", "clamped-sigma"):
    cfg = GradScaleConfig(mode=GradScaleMode.parse(mode), sigma=1.5)
    cols[mode] = scale_factor(deltas, cfg)
write_csv("demo_scale_laws.csv", ["delta"] + list(cols),
          zip(deltas, *cols.values()))
print("wrote demo_scale_laws.csv")
print("  quadratic keeps growing past delta=1 (over-weights far samples);")
print("  clamped caps at 1; clamped-sigma moves the cap to sigma=1.5")

# The jacobian mode generalizes the clamp to warped domains: with a
# contraction mapping the factor is |det J| of the warp at the sample.
cm = ContractionMapping()
pts = np.array([[0.5, 0.0, 0.0], [1.5, 0.0, 0.0], [3.0, 0.0, 0.0]])
print("contraction |det J| at r = 0.5, 1.5, 3.0:",
      np.round(np.abs(cm.jacobian_det(pts)), 4),
      "(identity inside the unit ball, strong squeeze far out)")

# Overhead: clamped vs none on ~330k samples, median of 20 reps
field = VoxelField((64, 64, 64), (-1, -1, -1), (1, 1, 1))
field.randomize(np.random.default_rng(0), 0.5, 0.5)
bench = benchmark_backward(field, ["none", "clamped"], batch_rays=2048,
                           samples_per_ray=160, reps=20)
t0, t1 = bench["none"], bench["clamped"]
print(f"backward, {bench['n_samples']} samples: none {1e3 * t0:.1f} ms, "
      f"clamped {1e3 * t1:.1f} ms ({100 * (t1 / t0 - 1):+.1f}%)")
