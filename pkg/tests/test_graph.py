import io

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from come import _kernels
from come.graph import (GraphFormatError, build_negative_sampler, from_edges, load_edge_list,
                        sample_negative, save_edge_list)


def test_path_graph_degrees():
    g = load_edge_list("0 1\n1 2\n")
    assert (g.node_count, g.edge_count) == (3, 2)
    assert g.degrees.tolist() == [1, 2, 1]


def test_duplicates_and_reversed_pairs_collapse():
    assert load_edge_list("0 1\n1 0\n0 1\n").edge_count == 1


def test_karate_size(karate):
    assert (karate.node_count, karate.edge_count) == (34, 78)


def test_karate_matches_networkx(karate):
    ref = nx.karate_club_graph()
    ours = {frozenset((int(karate.node_ids[a]), int(karate.node_ids[b]))) for a, b in karate.edges}
    assert ours == {frozenset(e) for e in ref.edges()}


def test_sparse_ids_remapped_in_first_seen_order():
    g = load_edge_list("# comment\n\n100 7\n7 42\n")
    assert g.node_ids.tolist() == [100, 7, 42]
    assert g.dense_id(42) == 2
    assert g.neighbors(g.dense_id(7)).tolist() == [0, 2]


def test_self_loops_dropped_and_counted():
    g = load_edge_list("0 0\n0 1\n")
    assert g.self_loops_dropped == 1
    assert g.edge_count == 1


@pytest.mark.parametrize("text, fragment", [
    ("0 1\n1\n", "line 2"),
    ("0 1\n1 x\n", "line 2"),
    ("0 1 0.5\n", "weighted"),
    ("-1 2\n", "negative"),
    ("# only a comment\n", "empty"),
    ("", "empty"),
])
def test_malformed_input(text, fragment):
    with pytest.raises(GraphFormatError, match=fragment):
        load_edge_list(text)


def test_isolated_nodes_kept():
    g = from_edges([(0, 1)], num_nodes=4)
    assert g.node_count == 4
    assert g.degrees.tolist() == [1, 1, 0, 0]


@st.composite
def edge_lists(draw):
    n = draw(st.integers(2, 30))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=120))
    return pairs


@settings(max_examples=100, deadline=None)
@given(edge_lists())
def test_adjacency_symmetric_and_degree_sum(pairs):
    text = "".join(f"{a} {b}\n" for a, b in pairs)
    if all(a == b for a, b in pairs):
        return
    g = load_edge_list(text)
    adj = g.adjacency()
    for i, row in enumerate(adj):
        assert row == sorted(set(row))
        assert i not in row
        for j in row:
            assert i in adj[j]
    assert g.degrees.sum() == 2 * g.edge_count
    assert [len(r) for r in adj] == g.degrees.tolist()


@settings(max_examples=50, deadline=None)
@given(edge_lists())
def test_serialisation_idempotent(pairs):
    if all(a == b for a, b in pairs):
        return
    once = io.StringIO()
    save_edge_list(load_edge_list("".join(f"{a} {b}\n" for a, b in pairs)), once)
    twice = io.StringIO()
    save_edge_list(load_edge_list(once.getvalue()), twice)
    assert once.getvalue() == twice.getvalue()


# -- noise distribution -------------------------------------------------------

def test_ratio_of_degree_powers():
    nd = build_negative_sampler(np.array([1, 16]))
    assert nd.probs[1] / nd.probs[0] == pytest.approx(8.0, rel=1e-12)


def test_equal_degrees_uniform():
    nd = build_negative_sampler(np.array([4, 4, 4]))
    np.testing.assert_allclose(nd.probs, 1 / 3, rtol=1e-12)


def test_hand_normalised_probabilities():
    nd = build_negative_sampler(np.array([1, 2, 3]))
    z = 1 + 2 ** 0.75 + 3 ** 0.75
    np.testing.assert_allclose(nd.probs, [1 / z, 2 ** 0.75 / z, 3 ** 0.75 / z], rtol=1e-12)
    assert abs(nd.probs.sum() - 1) < 1e-12


def test_alias_table_reproduces_probabilities(karate):
    nd = build_negative_sampler(karate)
    n = nd.size
    # probability mass each node receives from the table, summed over slots
    mass = nd.alias_prob / n
    np.add.at(mass, nd.alias_idx, (1 - nd.alias_prob) / n)
    np.testing.assert_allclose(mass, nd.probs, atol=1e-12)


def test_zero_degree_nodes_never_sampled():
    nd = build_negative_sampler(np.array([0, 3, 0, 1]))
    draws = nd.sample(np.random.default_rng(0), 20000)
    assert set(np.unique(draws)) == {1, 3}


def test_all_zero_degrees_rejected():
    with pytest.raises(ValueError):
        build_negative_sampler(np.zeros(3, dtype=int))


def test_uniform_frequencies_within_one_percent():
    nd = build_negative_sampler(np.array([2, 2, 2]))
    counts = np.bincount(nd.sample(np.random.default_rng(1), 300_000), minlength=3)
    np.testing.assert_allclose(counts / 300_000, 1 / 3, rtol=0.01)


def test_monte_carlo_ratio_within_three_percent():
    nd = build_negative_sampler(np.array([1, 16]))
    counts = np.bincount(nd.sample(np.random.default_rng(2), 1_000_000), minlength=2)
    assert counts[1] / counts[0] == pytest.approx(8.0, rel=0.03)


def test_exclusion_resamples():
    nd = build_negative_sampler(np.array([1, 1, 1]))
    rng = np.random.default_rng(3)
    assert all(sample_negative(nd, rng, exclude=0) != 0 for _ in range(500))


def test_exclusion_of_the_only_supported_node_fails():
    nd = build_negative_sampler(np.array([0, 5, 0]))
    with pytest.raises(ValueError):
        sample_negative(nd, np.random.default_rng(0), exclude=1)


def test_exclusion_falls_back_when_excluded_node_dominates():
    # node 0 carries almost all the mass; retries rarely escape it
    nd = build_negative_sampler(np.array([10 ** 8, 1]))
    assert sample_negative(nd, np.random.default_rng(0), exclude=0) == 1


@pytest.mark.parametrize("seed", [11, 12])
def test_kernel_draws_follow_the_law(karate, seed):
    nd = build_negative_sampler(karate)
    draws = _kernels.draw_many(nd.alias_prob, nd.alias_idx, np.uint64(seed), 200_000)
    counts = np.bincount(draws, minlength=nd.size)
    assert stats.chisquare(counts, nd.probs * draws.size).pvalue > 0.001
