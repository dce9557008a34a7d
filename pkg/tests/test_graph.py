import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobinfer.graph import (
    EmptyPersonError, build_graph, global_clustering, graph_from_counts, mean_local_clustering,
    node_descriptors, project, trip_entropy, trip_gini,
)

from conftest import chain, make_trip
from oracles import all_simple_graphs, brute_clustering

TRIANGLE = [("a", "b"), ("b", "c"), ("c", "a")]
TRI_PENDANT = TRIANGLE + [("a", "d")]


def test_edge_counts_from_trips():
    g = build_graph(chain(["home", "work", "home", "work"]))
    assert g.edge_counts == {("home", "work"): 2, ("work", "home"): 1}
    assert (g.N, g.T) == (2, 3)


def test_single_trip_graph():
    g = build_graph([make_trip("home", "gym")])
    assert (g.N, g.T) == (1, 1)


def test_day_with_side_loop_counts_arrows():
    # home -> work -> shopping -> home, then a gym loop
    g = build_graph(chain(["home", "work", "shopping", "home", "gym", "home"]))
    assert g.N == 5 and g.T == 5


def test_empty_person_raises():
    with pytest.raises(EmptyPersonError, match="empty_person"):
        build_graph([])


@pytest.mark.parametrize("x, h", [((4,), 0.0), ((1, 1, 1, 1), 2.0), ((1, 1, 2), 1.5)])
def test_entropy_examples(x, h):
    assert trip_entropy(np.array(x)) == pytest.approx(h, abs=1e-12)


@pytest.mark.parametrize("x, g", [((1, 1, 1), 0.0), ((1, 3), 0.25), ((1, 1, 6), 5 / 12)])
def test_gini_examples(x, g):
    assert trip_gini(np.array(x)) == pytest.approx(g, abs=1e-12)


@pytest.mark.parametrize("edges, glob, local", [
    (TRIANGLE, 1.0, 1.0),
    ([("c", "a"), ("c", "b"), ("c", "d")], 0.0, 0.0),
    ([("a", "b"), ("b", "c")], 0.0, 0.0),
    (TRI_PENDANT, 0.6, 7 / 12),
])
def test_clustering_examples(edges, glob, local):
    p = project(edges)
    assert global_clustering(p) == pytest.approx(glob, abs=1e-12)
    assert mean_local_clustering(p) == pytest.approx(local, abs=1e-12)


def test_projection_drops_direction_multiplicity_and_self_loops():
    g = graph_from_counts({("a", "b"): 3, ("b", "a"): 1, ("a", "a"): 2, ("b", "c"): 1})
    p = project(g)
    assert p.adjacency == {"a": {"b"}, "b": {"a", "c"}, "c": {"b"}}
    assert g.N == 4 and g.T == 7


def test_clustering_matches_triplet_enumeration_on_small_graphs():
    n = 0
    for nodes, edges in all_simple_graphs(5):
        p = project(edges, nodes)
        glob, local = brute_clustering(nodes, edges)
        assert global_clustering(p) == pytest.approx(glob, abs=1e-12)
        assert mean_local_clustering(p) == pytest.approx(local, abs=1e-12)
        n += 1
    assert n == 1 + 2 + 8 + 64 + 1024


counts = st.lists(st.integers(1, 50), min_size=1, max_size=20)


@given(counts)
def test_entropy_bounds(x):
    h = trip_entropy(np.array(x))
    assert -1e-12 <= h <= math.log2(len(x)) + 1e-12


@given(counts, st.integers(1, 7), st.randoms())
def test_gini_is_permutation_and_scale_invariant(x, k, rnd):
    g = trip_gini(np.array(x))
    y = list(x)
    rnd.shuffle(y)
    assert trip_gini(np.array(y)) == pytest.approx(g, abs=1e-12)
    assert trip_gini(k * np.array(x)) == pytest.approx(g, abs=1e-12)
    assert 0.0 <= g + 1e-12 and g < 1.0


def test_descriptors_are_deterministic():
    rnd = random.Random(3)
    purposes = ["home", "work", "shopping", "gym", "school"]
    trips = [make_trip(rnd.choice(purposes), rnd.choice(purposes)) for _ in range(40)]
    assert node_descriptors(trips) == node_descriptors(list(trips))
