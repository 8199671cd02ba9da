"""Pytest configuration and shared fixtures."""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add nrsfm directory to path
nrsfm_path = Path(__file__).parent.parent / "nrsfm"
sys.path.insert(0, str(nrsfm_path))

from camera import Intrinsics  # noqa: E402
from graph import build_neighbor_graph  # noqa: E402
from synth import generate_cylinder_bend  # noqa: E402


@pytest.fixture(scope="session")
def camera():
    """Ground-truth camera of the small scenes."""
    return Intrinsics(fx=500.0, fy=500.0, skew=0.0, cx=320.0, cy=240.0, width=640.0, height=480.0)


@pytest.fixture(scope="session")
def cylinder(camera):
    """5 x 6 grid bent onto four cylinders, noise free, fully visible."""
    return generate_cylinder_bend(rows=5, cols=6, spacing=0.05, radii=[0.4, 0.6, 0.9, 1.4],
                                  intrinsics=camera, seed=3)


@pytest.fixture(scope="session")
def cylinder_graph(cylinder):
    """6-nearest-neighbor graph of the cylinder tracks."""
    _, tracks, _ = cylinder
    return build_neighbor_graph(tracks, k=6)


@pytest.fixture(scope="session")
def flat_scene(camera):
    """Fronto-parallel 4 x 5 plane at depth 1.5, single view."""
    pose = (np.eye(3), np.array([0.0, 0.0, 1.5]))
    return generate_cylinder_bend(rows=4, cols=5, spacing=0.05, radii=[np.inf],
                                  intrinsics=camera, poses=[pose], seed=0)
