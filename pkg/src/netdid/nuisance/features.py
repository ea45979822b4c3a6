"""Sieve feature matrices built from own covariates and neighborhood summaries.

Column layout, before polynomial expansion:

    x_1..x_p, nbr_x_1..nbr_x_p, [ring2_x_1..ring2_x_p, ..., ringL_x_*], degree

``nbr_*`` are means over direct neighbors and ``ring{s}_*`` means over nodes at
exact distance ``s`` (zero when that set is empty). The expansion then emits an
intercept followed by every monomial of total degree 1..k in those base
columns, ordered by degree and then lexicographically by column index.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp

from ..graph import Graph, distance_shells

__all__ = ["FeatureMatrix", "build_features", "base_columns", "polynomial_expand", "feature_count"]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray
    names: tuple[str, ...]

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _ring_means(g: Graph, X: np.ndarray, L: int) -> list[np.ndarray]:
    shells = distance_shells(g, L)
    out = []
    for s in range(1, L + 1):
        S = shells[s].astype(float)
        cnt = np.asarray(S.sum(axis=1)).ravel()
        inv = np.divide(1.0, cnt, out=np.zeros_like(cnt), where=cnt > 0)
        out.append(np.asarray(sp.diags(inv) @ S @ X))
    return out


def base_columns(g: Graph, X, L: int = 1, network: bool = True) -> tuple[np.ndarray, list[str]]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    cols, names = [X], [f"x{k + 1}" for k in range(p)]
    if network:
        if L < 1:
            raise ValueError("neighborhood order L must be at least 1")
        for s, M in enumerate(_ring_means(g, X, L), start=1):
            cols.append(M)
            tag = "nbr" if s == 1 else f"ring{s}"
            names += [f"{tag}_x{k + 1}" for k in range(p)]
        cols.append(g.degrees.astype(float)[:, None])
        names.append("degree")
    return np.hstack(cols), names


def polynomial_expand(B: np.ndarray, names: list[str], degree: int) -> tuple[np.ndarray, list[str]]:
    if degree not in (1, 2, 3):
        raise ValueError(f"poly_degree must be 1, 2 or 3, got {degree}")
    n, q = B.shape
    cols, out_names = [np.ones(n)], ["1"]
    for k in range(1, degree + 1):
        for combo in combinations_with_replacement(range(q), k):
            cols.append(np.prod(B[:, combo], axis=1))
            out_names.append("*".join(names[c] for c in combo))
    return np.column_stack(cols), out_names


def feature_count(p: int, L: int, degree: int, network: bool = True) -> int:
    from math import comb

    q = p * (1 + L) + 1 if network else p
    return comb(q + degree, degree)


def build_features(d, L: int = 1, poly_degree: int = 1, network: bool = True) -> FeatureMatrix:
    """Features for dataset ``d`` (anything with ``graph`` and ``X``)."""
    B, names = base_columns(d.graph, d.X, L, network)
    F, fnames = polynomial_expand(B, names, poly_degree)
    return FeatureMatrix(F, tuple(fnames))
