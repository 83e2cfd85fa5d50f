import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifecycle_obpi.rng import STREAMS, block_ranges, generator, map_blocks, stream_key


def test_same_key_same_draws():
    a = generator(7, "wealth", 3).standard_normal(10)
    b = generator(7, "wealth", 3).standard_normal(10)
    assert np.array_equal(a, b)


def test_streams_and_blocks_are_distinct():
    draws = {(s, blk): generator(7, s, blk).standard_normal(4).tobytes() for s in STREAMS for blk in (0, 1)}
    assert len(set(draws.values())) == len(draws)


def test_unknown_stream_rejected():
    with pytest.raises(KeyError):
        stream_key(1, "nope")


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 20000), bs=st.integers(1, 5000))
def test_block_ranges_cover_exactly(n, bs):
    ranges = block_ranges(n, bs)
    assert ranges[0][1] == 0 and ranges[-1][2] == n
    assert all(a[2] == b[1] for a, b in zip(ranges, ranges[1:]))
    assert [r[0] for r in ranges] == list(range(len(ranges)))


def test_results_independent_of_thread_count():
    def fn(block, start, stop):
        return generator(3, "factor", block).standard_normal(64)[: stop - start]

    one = np.concatenate(map_blocks(fn, 1000, 64, threads=1))
    four = np.concatenate(map_blocks(fn, 1000, 64, threads=4))
    assert np.array_equal(one, four)
