import numpy as np
import pytest

from bpnet.tqwt import build_q_lookup


@pytest.fixture(scope="session")
def q_table():
    # Shared 41-row lookup at the nominal sampling rate; building it runs the
    # dense-grid cutoff search for every row, so do it once per session.
    return build_q_lookup(fs=125.0, level=10)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
