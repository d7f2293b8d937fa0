import numpy as np
import pytest

from radscale import Camera, VoxelField, look_at


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_field():
    """8^3 field with random but reproducible contents, unit-ish bounds."""
    f = VoxelField((8, 8, 8), (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0),
                   dtype=np.float64)
    f.randomize(np.random.default_rng(7), density_scale=1.0, color_scale=2.0)
    return f


@pytest.fixture
def simple_camera():
    """Camera at +2z looking at the origin, 32x32 px."""
    rot = look_at((0.0, 0.0, 2.0), (0.0, 0.0, 0.0))
    return Camera(rotation=rot, position=(0.0, 0.0, 2.0), focal=40.0,
                  width=32, height=32, near=0.0, far=5.0)
