import warnings

import numpy as np
import pytest

from tobesim import ArrayConfig

# numba's threading-layer probe warning is environment noise
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

DESK = dict(center_freq_hz=5e6, sampling_freq_hz=20e6, sound_speed_m_s=1540.0)


@pytest.fixture
def cfg8():
    return ArrayConfig(n=8, **DESK)


@pytest.fixture
def cfg16():
    return ArrayConfig(n=16, **DESK)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
