import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynrel.baselines import (InLinkIndex, deepwalk_relatedness, rank_by_deepwalk, rank_by_wlm, wlm,
                              wlm_counts)
from dynrel.graph import GraphEmbedding, LinkGraph
from tests import oracles


def test_worked_example():
    expected = 1 - (math.log(10) - math.log(3)) / (math.log(100) - math.log(5))
    assert wlm_counts(10, 5, 3, 100) == pytest.approx(expected, abs=1e-12)
    assert wlm_counts(10, 5, 3, 100) == pytest.approx(0.598, abs=5e-4)


def test_log_base_cancels():
    # the same ratio in base 10 gives the same value
    num = math.log10(10) - math.log10(3)
    den = math.log10(100) - math.log10(5)
    assert wlm_counts(10, 5, 3, 100) == pytest.approx(1 - num / den, abs=1e-12)


def graph_with_inlinks(sets, total):
    edges = [(src, node) for node, srcs in sets.items() for src in srcs]
    return InLinkIndex(LinkGraph(range(total), edges))


def test_identical_inlinks_give_one():
    index = graph_with_inlinks({0: [5, 6, 7], 1: [5, 6, 7]}, 20)
    assert wlm(0, 1, index) == 1.0


def test_disjoint_inlinks_give_zero():
    index = graph_with_inlinks({0: [5, 6], 1: [7, 8]}, 20)
    assert wlm(0, 1, index) == 0.0


def test_no_inlinks_gives_zero():
    index = graph_with_inlinks({0: [5]}, 10)
    assert wlm(0, 1, index) == 0.0


def test_total_too_small():
    with pytest.raises(ValueError):
        wlm_counts(1, 1, 1, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 100))
def test_wlm_matches_set_oracle_and_is_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    edges = [tuple(int(v) for v in rng.integers(0, n, 2)) for _ in range(int(rng.integers(1, 4 * n)))]
    g = LinkGraph(range(n), edges)
    index = InLinkIndex(g)
    for _ in range(10):
        a, b = (int(v) for v in rng.integers(0, n, 2))
        ours = wlm(a, b, index)
        assert ours == pytest.approx(oracles.wlm(g.in_links[a], g.in_links[b], n), abs=1e-12)
        assert ours == wlm(b, a, index)
        assert 0.0 <= ours <= 1.0


def test_deepwalk_relatedness():
    emb = GraphEmbedding([1, 2, 3], np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]]))
    assert deepwalk_relatedness(emb, 1, 1) == pytest.approx(1.0)
    assert deepwalk_relatedness(emb, 1, 2) == pytest.approx(0.0)
    assert deepwalk_relatedness(emb, 1, 3) == pytest.approx(1.0)
    assert deepwalk_relatedness(emb, 1, 99) is None


def test_rank_by_wlm_orders_by_overlap():
    index = graph_with_inlinks({0: [5, 6, 7, 8], 1: [5, 6, 7, 8], 2: [5, 9], 3: [10]}, 20)
    rl = rank_by_wlm(index, 0, [3, 2, 1])
    assert rl.candidates == [1, 2, 3]
    assert rl.scores[0] == 1.0 and rl.scores[-1] == 0.0


def test_rank_by_deepwalk_missing_last():
    emb = GraphEmbedding([1, 2, 3], np.array([[1.0, 0.0], [0.6, 0.8], [1.0, 0.1]]))
    rl = rank_by_deepwalk(emb, 1, [2, 7, 3])
    assert rl.candidates == [3, 2, 7]
    assert rl.scores[-1] == -1.0
