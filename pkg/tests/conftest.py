import os

import numpy as np
import pytest

os.environ.setdefault("PEBM_THREADS", "1")

from pebm import bundled_card
from pebm.experiments import reference_trajectory
from pebm.loading import keypoint_program


@pytest.fixture(scope="session")
def aa_params():
    return bundled_card("aa5754o")


@pytest.fixture(scope="session")
def steel_params():
    return bundled_card("42crmo4")


@pytest.fixture(scope="session")
def steel_ri_params(steel_params):
    # the rate-independent configuration used by the accuracy studies
    return steel_params.with_overrides(eta=0.0, m=1.0)


@pytest.fixture(scope="session")
def keypoint():
    return keypoint_program()


def _reference(params, dt=0.0025):
    prog = keypoint_program()
    return reference_trajectory(prog, params, int(round(prog.duration / dt)))


@pytest.fixture(scope="session")
def reference_aa(aa_params):
    """Ground-truth trajectory on the key-point program, AA card (slow)."""
    return _reference(aa_params)


@pytest.fixture(scope="session")
def reference_steel(steel_ri_params):
    """Ground-truth trajectory on the key-point program, steel card (slow)."""
    return _reference(steel_ri_params)


@pytest.fixture(scope="session")
def rng_factory():
    def make(seed):
        return np.random.default_rng(seed)
    return make
