"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from endnet import SynthSpec, dmaxd
from endnet.data_io import normalize_cube, synth_scene

# The frozen acceptance scene: spectrally distinct endmembers (stratified
# generator), sparse mixing, 5% pure pixels.  See README for the rationale.
ACCEPT_SPEC = dict(k=4, bands=100, n_pixels=2500,
                   pure_pixel_fraction=0.05, dirichlet_alpha=0.2, seed=6)
TRAIN_SEED = 0


@pytest.fixture(scope="session")
def noiseless_scene():
    cube, endm, abund = synth_scene(SynthSpec(snr_db=np.inf, **ACCEPT_SPEC))
    return normalize_cube(cube), endm, abund


@pytest.fixture(scope="session")
def noisy_scene():
    cube, endm, abund = synth_scene(SynthSpec(snr_db=40.0, **ACCEPT_SPEC))
    return normalize_cube(cube), endm, abund


@pytest.fixture(scope="session")
def small_scene():
    """A fast scene for training smoke tests (few pixels, few bands)."""
    cube, endm, abund = synth_scene(SynthSpec(
        k=3, bands=30, n_pixels=400, snr_db=30.0,
        pure_pixel_fraction=0.1, dirichlet_alpha=0.3, seed=5))
    return normalize_cube(cube), endm, abund


@pytest.fixture(scope="session")
def small_init(small_scene):
    cube, _, _ = small_scene
    return dmaxd(cube, 3)
