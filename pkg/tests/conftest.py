import numpy as np
import pytest

from netdid.graph import build_from_edges


def dense_adjacency(g):
    return g.adjacency.toarray().astype(int)


def floyd_warshall(A):
    """All-pairs hop distances by dense relaxation; np.inf when unreachable."""
    n = A.shape[0]
    D = np.where(A > 0, 1.0, np.inf)
    np.fill_diagonal(D, 0.0)
    for k in range(n):
        D = np.minimum(D, D[:, k : k + 1] + D[k : k + 1, :])
    return D


def erdos_renyi(n, p, seed):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    return build_from_edges(n, np.column_stack([iu[0][keep], iu[1][keep]]))


@pytest.fixture
def path4():
    return build_from_edges(4, [(0, 1), (1, 2), (2, 3)])


@pytest.fixture
def triangle():
    return build_from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def star5():
    # center 0, leaves 1..4
    return build_from_edges(5, [(0, j) for j in range(1, 5)])
