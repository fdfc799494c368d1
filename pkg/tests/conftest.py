import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from drokit import SamplingConfig, sample_link_clouds, sample_object_cloud

import hands
from geometry import icosphere


@pytest.fixture(scope="session")
def three_finger():
    """(model-with-clouds, meshes, object cloud) for the 9-DoF hand."""
    return _embodiment(hands.three_finger_hand)


@pytest.fixture(scope="session")
def five_finger():
    """(model-with-clouds, meshes, object cloud) for the 22-DoF hand."""
    return _embodiment(hands.five_finger_hand)


def _embodiment(builder, seed=7):
    urdf_text, meshes = builder()
    from drokit import load_model
    model = load_model(urdf_text)
    cfg = SamplingConfig(seed=seed)
    canonical = sample_link_clouds(model, meshes, cfg)
    model = model.with_clouds(canonical)
    object_cloud = sample_object_cloud(icosphere(radius=0.04), cfg)
    return model, meshes, object_cloud
