"""Exposure mappings and neighborhood covariate summaries.

Both mappings look only at a node's direct neighbors, so flipping the
treatment of anyone farther away never changes a node's exposure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

__all__ = [
    "ExposureMap",
    "ExposureVector",
    "exposure_count",
    "exposure_any",
    "exposure_vector",
    "treated_neighbor_counts",
    "neighbor_mean_covariates",
    "neighbor_means",
]


@dataclass(frozen=True)
class ExposureMap:
    """``kind`` is ``"any"`` (at least one treated neighbor) or ``"count"``.

    Counts at or above ``cap`` are pooled into level ``cap``.
    """

    kind: str = "any"
    cap: int = 3

    def __post_init__(self):
        if self.kind not in ("any", "count"):
            raise ValueError(f"unknown exposure kind {self.kind!r}; expected 'any' or 'count'")
        if self.kind == "count" and self.cap < 1:
            raise ValueError("count exposure cap must be at least 1")

    @property
    def levels(self) -> tuple[int, ...]:
        return (0, 1) if self.kind == "any" else tuple(range(self.cap + 1))

    @classmethod
    def from_config(cls, cfg: dict | None) -> "ExposureMap":
        cfg = cfg or {}
        return cls(kind=cfg.get("kind", "any"), cap=int(cfg.get("cap", 3)))

    def to_config(self) -> dict:
        return {"kind": self.kind, "cap": self.cap}


@dataclass(frozen=True)
class ExposureVector:
    G: np.ndarray
    levels: tuple[int, ...]

    def __post_init__(self):
        bad = ~np.isin(self.G, self.levels)
        if bad.any():
            raise ValueError(f"exposure value {self.G[bad][0]} not among levels {self.levels}")

    def __len__(self):
        return len(self.G)

    def realized(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unique(self.G))


def treated_neighbor_counts(g: Graph, D) -> np.ndarray:
    D = np.asarray(D, dtype=np.int64)
    return np.asarray(g.adjacency @ D).round().astype(np.int64)


def exposure_count(g: Graph, D, i: int) -> int:
    D = np.asarray(D)
    return int(D[g.neighbors(i)].sum())


def exposure_any(g: Graph, D, i: int) -> int:
    return int(exposure_count(g, D, i) >= 1)


def exposure_vector(g: Graph, D, emap: ExposureMap | None = None) -> ExposureVector:
    emap = emap or ExposureMap()
    c = treated_neighbor_counts(g, D)
    G = (c > 0).astype(np.int64) if emap.kind == "any" else np.minimum(c, emap.cap)
    return ExposureVector(G, emap.levels)


def neighbor_means(g: Graph, X) -> np.ndarray:
    """Row-normalized neighbor averages of ``X``; zero rows for isolated nodes."""
    X = np.asarray(X, dtype=float)
    return np.asarray(g.row_normalized @ X)


def neighbor_mean_covariates(g: Graph, X, i: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    nb = g.neighbors(i)
    if nb.size == 0:
        return np.zeros(X.shape[1])
    return X[nb].mean(axis=0)
