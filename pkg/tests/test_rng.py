import numpy as np
import pytest

from radscale import InputError, rng_for
from radscale.rng import PURPOSES


def test_streams_reproducible():
    a = rng_for(42, "rays").random(10)
    b = rng_for(42, "rays").random(10)
    assert np.array_equal(a, b)


def test_purposes_are_independent_streams():
    draws = {p: rng_for(42, p).random(4).tobytes() for p in PURPOSES}
    assert len(set(draws.values())) == len(PURPOSES)


def test_different_seeds_differ():
    assert not np.array_equal(rng_for(1, "init").random(8),
                              rng_for(2, "init").random(8))


def test_unknown_purpose_rejected():
    with pytest.raises(InputError):
        rng_for(0, "lottery")
