import numpy as np
import pytest
from hypothesis import settings

from srctrace.synth import flat_config, generate, reference_config

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def flat_dataset():
    return generate(flat_config(seed=3, noise_sigma=0.3))


@pytest.fixture(scope="session")
def reference_dataset():
    return generate(reference_config(seed=5, utts_per_attack=60))
