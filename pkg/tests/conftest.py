import itertools

import numpy as np
import pytest

from resqlab.model import ChannelSpec, Constellation, DetectionInstance, generate_instance


def all_states(n):
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8)


def make_instance(H, v, constellation, sigma2=0.0, noise=None, snr_db=None):
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    v = np.asarray(v, dtype=complex)
    c = Constellation.from_name(constellation)
    n = np.zeros(H.shape[0], complex) if noise is None else np.asarray(noise, dtype=complex)
    if snr_db is None:
        snr_db = np.inf if sigma2 == 0 else 10 * np.log10(H.shape[1] * c.mean_energy / sigma2)
    from resqlab.ising import SpinMapping
    bits = SpinMapping.to_bits(SpinMapping(len(v), c).from_symbols(v))
    return DetectionInstance(H, H @ v + n, c, snr_db, sigma2, v, bits, n)


@pytest.fixture
def iid():
    return ChannelSpec.iid()


@pytest.fixture
def qpsk_4x4(iid):
    return [generate_instance(iid, 4, 4, "QPSK", 20.0, seed) for seed in range(5)]
