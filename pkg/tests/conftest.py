import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere_volume_file(tmp_path_factory):
    """The 64^3, r=20 mm sphere phantom written as a raw volume."""
    from cranioforge.phantoms import sphere_phantom
    from cranioforge.volume import write_raw_volume

    d = tmp_path_factory.mktemp("phantom")
    sidecar, _ = write_raw_volume(sphere_phantom(64, 20.0, 1.0), d / "sphere.vol.json")
    return sidecar
