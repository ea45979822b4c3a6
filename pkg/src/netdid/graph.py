"""Undirected simple graphs in CSR form, distance queries and random geometric graphs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

__all__ = [
    "INFINITE",
    "Graph",
    "build_from_edges",
    "sample_positions",
    "rgg_from_positions",
    "random_geometric_graph",
    "default_radius",
    "shortest_path_distance",
    "bfs_distances",
    "k_neighborhood",
    "boundary",
    "distance_shells",
    "within_distance",
    "average_degree",
    "average_path_length",
    "graph_stats",
    "read_edges_csv",
    "write_edges_csv",
]


class _Infinite:
    """Distance between disconnected nodes.

    Deliberately supports no arithmetic or ordering, so code that tries to
    add or compare an infinite distance raises ``TypeError``.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITE"

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph without self-loops.

    Neighbors of node ``i`` are ``indices[indptr[i]:indptr[i + 1]]``, sorted.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.diff(self.indptr)
        deg.setflags(write=False)
        return deg

    @property
    def edge_count(self) -> int:
        return int(self.indices.size // 2)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency matrix as ``float64`` CSR."""
        data = np.ones(self.indices.size)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def row_normalized(self) -> sp.csr_matrix:
        """Adjacency with rows divided by degree; isolated rows stay zero."""
        deg = self.degrees.astype(float)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return sp.diags(inv) @ self.adjacency

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Unordered edge list as an ``(m, 2)`` array with ``src < dst``."""
        src = np.repeat(np.arange(self.n), self.degrees)
        keep = src < self.indices
        return np.column_stack([src[keep], self.indices[keep]])

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        e = self.edges()
        return build_from_edges(self.n, perm[e] if e.size else e)


def build_from_edges(n: int, edges: Iterable[Sequence[int]]) -> Graph:
    """Build a symmetric, deduplicated, self-loop-free graph on ``n`` nodes."""
    if n < 0:
        raise ValueError(f"node count must be non-negative, got {n}")
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if e.size == 0:
        e = e.reshape(0, 2)
    if e.ndim != 2 or e.shape[1] != 2:
        raise ValueError("edges must be a sequence of index pairs")
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise IndexError(f"edge {tuple(int(v) for v in bad)} has an index outside [0, {n})")
    e = e[e[:, 0] != e[:, 1]]
    both = np.vstack([e, e[:, ::-1]])
    adj = sp.csr_matrix((np.ones(len(both), dtype=np.int8), (both[:, 0], both[:, 1])), shape=(n, n))
    adj.sum_duplicates()
    adj.sort_indices()
    return Graph(n, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))


def sample_positions(n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Draw ``n`` points uniformly from the unit square."""
    if n < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(n, 2))


def default_radius(n: int) -> float:
    """Connection radius giving an expected interior degree of five."""
    return math.sqrt(5.0 / (math.pi * n))


def rgg_from_positions(points: np.ndarray, radius: float) -> Graph:
    """Connect every pair of points at Euclidean distance at most ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = np.asarray(points, dtype=float)
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    return build_from_edges(len(pts), pairs)


def random_geometric_graph(n: int, seed, radius: float | None = None) -> tuple[Graph, np.ndarray]:
    pts = sample_positions(n, seed)
    return rgg_from_positions(pts, default_radius(n) if radius is None else radius), pts


def bfs_distances(g: Graph, source: int, max_depth: int | None = None) -> np.ndarray:
    """Hop distances from ``source``; ``-1`` marks nodes not reached."""
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source])
    depth = 0
    while frontier.size and (max_depth is None or depth < max_depth):
        depth += 1
        starts, stops = g.indptr[frontier], g.indptr[frontier + 1]
        nbrs = np.concatenate([g.indices[a:b] for a, b in zip(starts, stops)]) if frontier.size else frontier
        nbrs = np.unique(nbrs)
        nbrs = nbrs[dist[nbrs] < 0]
        dist[nbrs] = depth
        frontier = nbrs
    return dist


def shortest_path_distance(g: Graph, i: int, j: int):
    """BFS hop count between ``i`` and ``j``, or ``INFINITE``."""
    if i == j:
        return 0
    d = bfs_distances(g, i)[j]
    return INFINITE if d < 0 else int(d)


def k_neighborhood(g: Graph, i: int, K: int) -> np.ndarray:
    if K < 0:
        raise ValueError("K must be non-negative")
    d = bfs_distances(g, i, max_depth=K)
    return np.flatnonzero(d >= 0)


def boundary(g: Graph, i: int, s: int) -> np.ndarray:
    if s < 0:
        raise ValueError("s must be non-negative")
    d = bfs_distances(g, i, max_depth=s)
    return np.flatnonzero(d == s)


def distance_shells(g: Graph, max_s: int) -> list[sp.csr_matrix]:
    """Boolean matrices ``S[s]`` with ``S[s][i, j]`` true iff ``dist(i, j) == s``.

    Runs a truncated BFS from every node at once by sparse frontier expansion.
    """
    adj = g.adjacency.astype(np.int32)
    reached = sp.identity(g.n, dtype=np.int32, format="csr")
    shells = [reached.astype(bool)]
    frontier = reached
    for _ in range(max_s):
        step = (frontier @ adj).tocsr()
        step.data[:] = 1
        new = (step - step.multiply(reached)).tocsr()
        new.eliminate_zeros()
        shells.append(new.astype(bool))
        reached = (reached + new).tocsr()
        frontier = new
    return shells


def within_distance(g: Graph, B: int, nodes: np.ndarray | None = None) -> sp.csr_matrix:
    """Boolean matrix of pairs at graph distance at most ``B`` (diagonal included).

    With ``nodes`` given, rows and columns are restricted to those nodes, while
    distances are still measured in the full graph.
    """
    if B < 0:
        raise ValueError("B must be non-negative")
    key = ("within", int(B))
    if key not in g._cache:
        shells = distance_shells(g, B)
        total = shells[0]
        for s in shells[1:]:
            total = total + s
        g._cache[key] = total.astype(bool).tocsr()
    reach = g._cache[key]
    if nodes is None:
        return reach
    nodes = np.asarray(nodes)
    return reach[nodes][:, nodes].tocsr()


def average_degree(g: Graph) -> float:
    if g.n < 1:
        raise ValueError("average degree needs at least one node")
    return float(g.degrees.sum()) / g.n


def _sums_for_sources(args) -> tuple[float, int]:
    adj, idx = args
    d = shortest_path(adj, method="D", directed=False, unweighted=True, indices=idx)
    fin = np.isfinite(d) & (d > 0)
    return float(d[fin].sum()), int(fin.sum())


def _path_length_sums(g: Graph, chunk: int = 256, jobs: int = 1) -> tuple[float, int]:
    key = "path_sums"
    if key not in g._cache:
        adj = g.adjacency
        tasks = [(adj, np.arange(s, min(s + chunk, g.n))) for s in range(0, g.n, chunk)]
        if jobs > 1 and len(tasks) > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=jobs) as ex:
                parts = list(ex.map(_sums_for_sources, tasks))
        else:
            parts = [_sums_for_sources(t) for t in tasks]
        g._cache[key] = (sum(p[0] for p in parts), sum(p[1] for p in parts))
    return g._cache[key]


def average_path_length(g: Graph, jobs: int = 1) -> float:
    """Mean hop distance over connected pairs of distinct nodes.

    Disconnected pairs are left out of the average. ``jobs`` > 1 spreads the
    single-source searches over worker processes.
    """
    if g.n < 2:
        raise ValueError("average path length needs at least two nodes")
    total, count = _path_length_sums(g, jobs=jobs)
    if count == 0:
        raise ValueError("graph has no connected pair of distinct nodes")
    return total / count


def graph_stats(g: Graph, jobs: int = 1) -> dict:
    try:
        apl = average_path_length(g, jobs)
    except ValueError:
        apl = None
    return {
        "n": g.n,
        "edge_count": g.edge_count,
        "avg_degree": average_degree(g),
        "avg_path_length": apl,
        "max_degree": int(g.degrees.max()) if g.n else 0,
    }


def read_edges_csv(path, id_map: dict[str, int] | None = None) -> tuple[Graph, dict[str, int]]:
    """Read a ``src,dst`` edge list.

    Without ``id_map`` node IDs are assigned dense indices in first-seen order.
    With it, every ID must already be known.
    """
    path = Path(path)
    fixed = id_map is not None
    ids = dict(id_map) if fixed else {}
    pairs = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["src", "dst"]:
            raise ValueError(f"{path}: expected header 'src,dst', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: row {lineno} has {len(row)} column(s), expected 2")
            pair = []
            for col, raw in zip(("src", "dst"), row[:2]):
                key = raw.strip()
                if key not in ids:
                    if fixed:
                        raise ValueError(f"{path}: row {lineno}, column {col}: unknown node id {key!r}")
                    ids[key] = len(ids)
                pair.append(ids[key])
            pairs.append(pair)
    return build_from_edges(len(ids), pairs), ids


def write_edges_csv(g: Graph, path, labels: Sequence[str] | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        for a, b in g.edges():
            if labels is None:
                w.writerow([int(a), int(b)])
            else:
                w.writerow([labels[a], labels[b]])


def stats_json(g: Graph) -> str:
    return json.dumps(graph_stats(g), indent=2)
