import os

import numpy as np
import pytest

from tensor_denoise.models import GridSettings, ReflectorSpec, SolverConfig, WaveletSpec
from tensor_denoise.patches import PatchGrid, Volume
from tensor_denoise.pipeline import add_noise
from tensor_denoise.synth import make_model
from tensor_denoise.tensor_core import Tensor3


@pytest.fixture(autouse=True)
def testing_environment(monkeypatch):
    """Keep the global environment out of configuration under test"""
    for name in ("ENVIRONMENT", "LOG_LEVEL", "LOG_FILE"):
        monkeypatch.delenv(name, raising=False)
    for name in list(os.environ):
        if name.startswith("TDN_"):
            monkeypatch.delenv(name)


@pytest.fixture
def rng():
    """Seeded generator for reproducible random instances"""
    return np.random.default_rng(1234)


@pytest.fixture
def small_wavelet():
    return WaveletSpec(central_frequency=60.0, sample_interval=0.001, half_length=16)


@pytest.fixture
def small_reflectors():
    return [
        ReflectorSpec(depth=12.0, dip_inline=0.5, dip_crossline=0.25, amplitude=1.0),
        ReflectorSpec(depth=34.0, dip_inline=-0.5, dip_crossline=0.5, amplitude=0.8),
    ]


@pytest.fixture
def small_clean(small_wavelet, small_reflectors):
    """48 x 8 x 8 synthetic volume with two dipping events"""
    return make_model((48, 8, 8), 1.0, small_reflectors, small_wavelet)


@pytest.fixture
def small_noisy(small_clean):
    return add_noise(small_clean, 5.0, seed=3)


@pytest.fixture
def small_grid_settings():
    return GridSettings(patch_shape=(8, 4, 4), stride=(4, 2, 2))


@pytest.fixture
def small_grid(small_grid_settings, small_clean):
    return PatchGrid.build(small_grid_settings, small_clean.dims)


@pytest.fixture
def small_solver():
    """Solver settings sized for sub-second runs"""
    return SolverConfig(atoms=8, max_outer=3, max_inner=60, seed=7)


@pytest.fixture
def random_volume(rng):
    return Volume(rng.standard_normal((10, 7, 6)))


@pytest.fixture
def planted_dictionary(rng):
    """Feasible dictionary (5 x 4 x 3) with lateral-slice norms 0.9"""
    D = rng.standard_normal((5, 4, 3))
    D *= 0.9 / np.sqrt(np.sum(D ** 2, axis=(0, 2)))[None, :, None]
    return Tensor3(D)


@pytest.fixture
def write_config(tmp_path):
    """Write a run-config file and return its path"""

    def _write(text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write
