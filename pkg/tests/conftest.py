import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from recurseg import NetworkConfig, SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_config() -> NetworkConfig:
    """Smallest legal network: fast enough for per-test forward passes."""
    return NetworkConfig(levels=2, base_channels=4, input_size=16)


@pytest.fixture(scope="session")
def small_config() -> NetworkConfig:
    return NetworkConfig(levels=3, base_channels=4, input_size=32)


@pytest.fixture(scope="session")
def synth_small():
    """Eight small clean-ish cases for fast pipeline tests."""
    cfg = SynthConfig(
        image_size=64,
        tumor_radius_range=(5.0, 9.0),
        recurrence_offset_range=(3.0, 6.0),
        noise_std=0.02,
        seed=101,
    )
    return generate_dataset(cfg, 8)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_single_thread():
    # keep runs deterministic and cheap on the test box
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield
