import numpy as np
import pytest

from reflpose.synth import SynthConfig, generate


@pytest.fixture
def make_instance():
    def _make(n_pixel=20, n_normal=20, n_reflection=20, seed=0, **kw):
        return generate(SynthConfig(n_pixel, n_normal, n_reflection, rng_seed=seed, **kw))
    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
