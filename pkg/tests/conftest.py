import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `support` importable

from langfield.geometry import CameraIntrinsics
from langfield.synthetic import default_scene, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """3-frame 32x24 synthetic dataset with 16-d features."""
    spec = default_scene(feature_dim=16, seed=3)
    intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
    train, _, catalog, class_maps, _ = generate_dataset(spec, 3, 0, intr)
    return train, catalog, class_maps
