import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netdid.graph import (
    INFINITE,
    average_degree,
    average_path_length,
    bfs_distances,
    boundary,
    build_from_edges,
    default_radius,
    graph_stats,
    k_neighborhood,
    random_geometric_graph,
    read_edges_csv,
    rgg_from_positions,
    sample_positions,
    shortest_path_distance,
    stats_json,
    within_distance,
    write_edges_csv,
)

from conftest import dense_adjacency, erdos_renyi, floyd_warshall


def test_build_dedups_and_drops_self_loops():
    g = build_from_edges(3, [(0, 1), (1, 0), (1, 1)])
    assert g.edge_count == 1
    np.testing.assert_array_equal(g.degrees, [1, 1, 0])
    assert list(g.edges()[0]) == [0, 1]


def test_build_empty_and_path():
    g = build_from_edges(2, [])
    np.testing.assert_array_equal(g.degrees, [0, 0])
    p = build_from_edges(4, [(0, 1), (1, 2), (2, 3)])
    np.testing.assert_array_equal(p.degrees, [1, 2, 2, 1])


def test_build_rejects_bad_input():
    with pytest.raises(IndexError, match=r"\(0, 3\)"):
        build_from_edges(3, [(0, 3)])
    with pytest.raises(ValueError):
        build_from_edges(-1, [])
    with pytest.raises(IndexError):
        build_from_edges(3, [(-1, 0)])


@given(st.integers(1, 25), st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24)), max_size=80))
def test_graph_invariants(n, pairs):
    pairs = [(a % n, b % n) for a, b in pairs]
    g = build_from_edges(n, pairs)
    A = dense_adjacency(g)
    assert np.all(np.diag(A) == 0)
    assert np.array_equal(A, A.T)
    np.testing.assert_array_equal(g.degrees, A.sum(axis=1))
    for i in range(n):
        nb = g.neighbors(i)
        assert np.all(np.diff(nb) > 0)


def test_sample_positions():
    p = sample_positions(5, 7)
    assert p.shape == (5, 2)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_array_equal(p, sample_positions(5, 7))
    big = sample_positions(10_000, 1)
    assert np.all(np.abs(big.mean(axis=0) - 0.5) < 0.02)


def test_rgg_small_cases():
    assert rgg_from_positions(np.array([[0, 0], [0.05, 0]]), 0.1).edge_count == 1
    assert rgg_from_positions(np.array([[0, 0], [1, 1]]), 0.1).edge_count == 0


def test_rgg_degree_matches_pair_count():
    n = 2000
    pts = sample_positions(n, 3)
    r = default_radius(n)
    g = rgg_from_positions(pts, r)
    # direct pair counting
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    A = (d2 <= r * r).astype(int)
    np.fill_diagonal(A, 0)
    np.testing.assert_array_equal(g.degrees, A.sum(1))
    assert abs(average_degree(g) - 5.0) <= 0.6


def test_rgg_permutation_invariance():
    pts = sample_positions(150, 11)
    r = 0.12
    perm = np.random.default_rng(0).permutation(150)
    g = rgg_from_positions(pts, r)
    h = rgg_from_positions(pts[perm], r)
    # node k of h is node perm[k] of g
    inv = np.empty_like(perm)
    inv[perm] = np.arange(150)
    np.testing.assert_array_equal(dense_adjacency(g.permute(inv)), dense_adjacency(h))


def test_shortest_path_distance(path4):
    assert shortest_path_distance(path4, 2, 2) == 0
    g = build_from_edges(3, [(0, 1), (1, 2)])
    assert shortest_path_distance(g, 0, 2) == 2
    iso = build_from_edges(2, [])
    assert shortest_path_distance(iso, 0, 1) is INFINITE


def test_infinite_refuses_arithmetic():
    with pytest.raises(TypeError):
        INFINITE + 1
    with pytest.raises(TypeError):
        INFINITE < 3


def test_neighborhoods_small(star5):
    assert list(k_neighborhood(star5, 2, 0)) == [2]
    assert list(k_neighborhood(star5, 0, 1)) == [0, 1, 2, 3, 4]
    g = build_from_edges(3, [(0, 1), (1, 2)])
    assert list(boundary(g, 0, 0)) == [0]
    assert list(boundary(g, 0, 2)) == [2]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.floats(0.02, 0.3), st.integers(0, 10_000))
def test_distances_match_all_pairs_oracle(n, p, seed):
    g = erdos_renyi(n, p, seed)
    D = floyd_warshall(dense_adjacency(g))
    for i in range(0, n, max(1, n // 6)):
        d = bfs_distances(g, i)
        fin = np.isfinite(D[i])
        np.testing.assert_array_equal(d[fin], D[i][fin])
        assert np.all(d[~fin] < 0)
        np.testing.assert_array_equal(k_neighborhood(g, i, 3), np.flatnonzero(D[i] <= 3))
        for s in range(4):
            np.testing.assert_array_equal(boundary(g, i, s), np.flatnonzero(D[i] == s))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.4), st.integers(0, 10_000))
def test_distance_is_metric(n, p, seed):
    g = erdos_renyi(n, p, seed)
    D = floyd_warshall(dense_adjacency(g))
    fin = np.isfinite(D)
    assert np.array_equal(D, D.T)
    assert np.all((D == 0) == np.eye(n, dtype=bool))
    # triangle inequality: via[i, j, k] = d(i, j) + d(j, k)
    via = D[:, :, None] + D[None, :, :]
    assert np.all(D[:, None, :] <= via)
    assert np.all(fin == fin.T)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 50), st.floats(0.03, 0.3), st.integers(0, 10_000))
def test_boundaries_partition_component(n, p, seed):
    g = erdos_renyi(n, p, seed)
    i = seed % n
    comp = np.flatnonzero(bfs_distances(g, i) >= 0)
    shells = [boundary(g, i, s) for s in range(n + 1)]
    allnodes = np.concatenate(shells)
    assert allnodes.size == np.unique(allnodes).size
    np.testing.assert_array_equal(np.sort(allnodes), comp)
    for K in range(4):
        np.testing.assert_array_equal(k_neighborhood(g, i, K), np.sort(np.concatenate(shells[: K + 1])))


def test_within_distance_matches_oracle():
    g = erdos_renyi(40, 0.08, 5)
    D = floyd_warshall(dense_adjacency(g))
    nodes = np.array([0, 3, 7, 8, 20, 39])
    for B in (0, 1, 2, 4):
        R = within_distance(g, B, nodes).toarray()
        np.testing.assert_array_equal(R, (D[np.ix_(nodes, nodes)] <= B).astype(R.dtype))


def test_average_degree_cases(triangle, path4):
    assert average_degree(triangle) == 2.0
    assert average_degree(build_from_edges(5, [])) == 0.0
    assert average_degree(path4) == 1.5


def test_average_path_length_cases(triangle, path4):
    assert average_path_length(build_from_edges(3, [(0, 1), (1, 2)])) == pytest.approx(4 / 3)
    k5 = build_from_edges(5, [(i, j) for i in range(5) for j in range(i + 1, 5)])
    assert average_path_length(k5) == 1.0
    assert average_path_length(path4) == pytest.approx(10 / 6)
    # isolated node is ignored
    g = build_from_edges(4, [(0, 1), (1, 2)])
    assert average_path_length(g) == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        average_path_length(build_from_edges(3, []))


def test_average_path_length_parallel_matches_serial():
    g, _ = random_geometric_graph(600, seed=2)
    a = average_path_length(g)
    h = build_from_edges(g.n, g.edges())
    assert average_path_length(h, jobs=2) == pytest.approx(a, rel=0, abs=1e-12)


def test_average_path_length_oracle():
    g = erdos_renyi(50, 0.06, 9)
    D = floyd_warshall(dense_adjacency(g))
    off = np.isfinite(D) & (D > 0)
    assert average_path_length(g) == pytest.approx(D[off].mean(), rel=1e-12)


def test_edges_csv_roundtrip(tmp_path):
    g = erdos_renyi(30, 0.1, 1)
    write_edges_csv(g, tmp_path / "e.csv")
    h, ids = read_edges_csv(tmp_path / "e.csv", {str(i): i for i in range(30)})
    np.testing.assert_array_equal(dense_adjacency(g), dense_adjacency(h))


def test_edges_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n0,1\n")
    with pytest.raises(ValueError, match="src,dst"):
        read_edges_csv(p)
    p.write_text("src,dst\n0,1\n0,9\n")
    with pytest.raises(ValueError, match="row 3"):
        read_edges_csv(p, {"0": 0, "1": 1})


def test_stats_json(triangle):
    d = json.loads(stats_json(triangle))
    assert d == {"n": 3, "edge_count": 3, "avg_degree": 2.0, "avg_path_length": 1.0, "max_degree": 2}
    assert graph_stats(build_from_edges(3, []))["avg_path_length"] is None
