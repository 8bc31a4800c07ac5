import numpy as np
import pytest

from altalloc.config import parse_config_text
from altalloc.dynamics import mean_matrices, steady_state_gains
from altalloc.latent import LatentDistribution

# single illiquid asset calibration used across the suite (yearly periods);
# covariance pre-symmetrized
SINGLE_MEAN = np.array([-0.700, -0.423, 0.158])
SINGLE_COV = np.array([
    [0.068, 0.0725, 0.006],
    [0.0725, 0.271, 0.043],
    [0.006, 0.043, 0.079],
])


@pytest.fixture(scope="session")
def single_dist():
    return LatentDistribution(mean=SINGLE_MEAN, covariance=SINGLE_COV, n_ill=1, n_liq=0)


@pytest.fixture(scope="session")
def mm_single(single_dist):
    return mean_matrices(single_dist, 10**6, 12345, layout="illiquid")


@pytest.fixture(scope="session")
def gains_single(mm_single):
    return steady_state_gains(mm_single)


def _preset_text(name):
    from importlib import resources

    return (resources.files("altalloc") / "presets" / f"{name}.cfg").read_text()


@pytest.fixture(scope="session")
def frontier_cfg():
    return parse_config_text(_preset_text("frontier-20"), "preset:frontier-20")


@pytest.fixture(scope="session")
def joint_dist(frontier_cfg):
    return frontier_cfg.model.to_distribution()


@pytest.fixture(scope="session")
def mm_joint(joint_dist):
    return mean_matrices(joint_dist, 10**6, 12345, layout="joint")


@pytest.fixture(scope="session")
def mm_joint_ill(joint_dist):
    return mean_matrices(joint_dist, 10**6, 12345, layout="illiquid")
