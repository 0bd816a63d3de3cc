import numpy as np
import pytest

from qake.channel import ChannelConfig, SourceConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


@pytest.fixture
def paper_source():
    return SourceConfig()


@pytest.fixture
def toy_source():
    # bright source so small sessions have plenty of detections
    return SourceConfig(intensities=(0.9, 0.4, 0.0), intensity_probs=(0.5, 0.3, 0.2))


@pytest.fixture
def toy_channel():
    return ChannelConfig(transmittance=0.8, qber=0.02)
