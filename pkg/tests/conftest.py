import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coarsepair.synthdata import AdverseTransform, SynthConfig, SynthDataset, generate_dataset


def small_synth_config(**overrides) -> SynthConfig:
    defaults = dict(
        image_size=(32, 32),
        n_scenes=12,
        shift_max=1,
        sprite_count_range=(1, 2),
        jitter_amplitude=0.1,
        adverse=AdverseTransform(),
        route_spacing=2.0,
        gps_noise_std=0.1,
        seed=7,
    )
    defaults.update(overrides)
    return SynthConfig(**defaults)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> SynthDataset:
    root = tmp_path_factory.mktemp("smallds")
    generate_dataset(small_synth_config(), root)
    return SynthDataset.open(root)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
