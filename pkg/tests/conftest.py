import sys
from pathlib import Path

import pytest
import torch

from mitoadapt import dataio

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def blob_dataset():
    return dataio.make_blob_fixture(4, 64, 64, 3, rng_seed=7)


@pytest.fixture(scope="session")
def domain_pair():
    """Two blob domains differing by a monotone intensity remap and texture."""
    source = dataio.make_blob_fixture(
        6, 96, 96, 4, rng_seed=11, name="domain-a",
        fg_level=0.28, bg_level=0.62, noise_sigma=0.03, texture_period=24.0,
    )
    target = dataio.make_blob_fixture(
        4, 96, 96, 4, rng_seed=22, name="domain-b",
        fg_level=0.60, bg_level=0.88, noise_sigma=0.02, texture_period=13.0,
    )
    return source, target
