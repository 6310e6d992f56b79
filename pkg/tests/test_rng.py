import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from fragmatch.rng import GOLDEN, run_rng, run_stream_id, splitmix64


def test_splitmix64_reference_outputs():
    # first two outputs of the reference generator started from state 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(GOLDEN) == 0x6E789E6AA1B965F4


def test_stream_ids():
    assert run_stream_id(0, 0) == splitmix64(0)
    assert run_stream_id(5, 1) == splitmix64(5 ^ GOLDEN)
    assert len({run_stream_id(7, k) for k in range(1000)}) == 1000


@given(st.integers(min_value=0, max_value=2**64 - 1), st.integers(min_value=0, max_value=10**6))
def test_run_streams_are_reproducible(seed, k):
    assert 0 <= run_stream_id(seed, k) < 2**64
    a = run_rng(seed, k).random(4)
    b = run_rng(seed, k).random(4)
    assert np.array_equal(a, b)
