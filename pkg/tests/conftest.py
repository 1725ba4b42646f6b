import numpy as np
import pytest

from plantrecon import synth
from plantrecon.geometry import Camera, PotModel, Scene


@pytest.fixture
def rig():
    """Standard 4-camera synthetic ring rig."""
    return synth.make_rig(synth.RenderConfig())


@pytest.fixture
def small_rig():
    """Compact 2-camera rig with 64x64 images for fast tests."""
    cfg = synth.RenderConfig(image_size=64, camera_count=2,
                             ring_radius=600.0, focal_px=80.0)
    return synth.make_rig(cfg)


def make_simple_scene(n_cameras=2, size=256, focal=200.0, radius=800.0):
    cfg = synth.RenderConfig(image_size=size, camera_count=n_cameras,
                             ring_radius=radius, focal_px=focal)
    return synth.make_rig(cfg)


def random_points_above_pot(rng, n, spread=250.0, z_range=(30.0, 350.0)):
    pts = np.empty((n, 3))
    pts[:, 0] = rng.uniform(-spread, spread, n)
    pts[:, 1] = rng.uniform(-spread, spread, n)
    pts[:, 2] = rng.uniform(*z_range, size=n)
    return pts
