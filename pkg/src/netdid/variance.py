"""Network HAC variance for means of unit-level scores, bandwidth rule and intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .graph import Graph, average_degree, average_path_length, within_distance

__all__ = [
    "ScoreVector",
    "VarianceReport",
    "bandwidth",
    "bandwidth_rule",
    "hac_variance",
    "hac_pair_count",
    "iid_variance",
    "confidence_interval",
    "variance_report",
]


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Per-unit scores over the analysis set ``nodes`` (graph indices)."""

    g: int | None
    values: np.ndarray
    nodes: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        nodes = np.asarray(self.nodes, dtype=np.int64)
        if v.shape != nodes.shape:
            raise ValueError("scores and analysis nodes differ in length")
        if v.size < 2:
            raise ValueError(f"analysis set has {v.size} unit(s); need at least 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("scores contain non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "nodes", nodes)

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def bandwidth_rule(L: float, n: int, avg_deg: float, gamma: float = 1.0) -> tuple[int, str]:
    """Bandwidth from path length ``L``, size ``n`` and mean degree; returns (B, branch)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if avg_deg > 1 and L < 2.0 * math.log(n) / math.log(avg_deg):
        return max(1, math.ceil(L / (2.0 + gamma))), "linear"
    return max(1, math.ceil(L ** (1.0 / (2.0 + gamma)))), "root"


def bandwidth(g: Graph, gamma: float = 1.0) -> int:
    return bandwidth_details(g, gamma)[0]


def bandwidth_details(g: Graph, gamma: float = 1.0, jobs: int = 1) -> tuple[int, str, float | None]:
    try:
        L = average_path_length(g, jobs)
    except ValueError:
        return 1, "no-paths", None
    B, branch = bandwidth_rule(L, g.n, average_degree(g), gamma)
    return B, branch, L


def _centered(scores: ScoreVector) -> np.ndarray:
    v = scores.values
    return v - v.mean()


def iid_variance(scores: ScoreVector) -> float:
    c = _centered(scores)
    return float(np.dot(c, c)) / scores.m


def hac_variance(scores: ScoreVector, g: Graph, B: int) -> float:
    """Uniform-kernel double sum over analysis-set pairs within distance ``B``."""
    c = _centered(scores)
    R = within_distance(g, int(B), scores.nodes).astype(float)
    return float(np.dot(c, R @ c)) / scores.m


def hac_pair_count(scores: ScoreVector, g: Graph, B: int) -> int:
    """Ordered pairs (diagonal included) entering the double sum."""
    return int(within_distance(g, int(B), scores.nodes).nnz)


def confidence_interval(estimate: float, sigma2: float, m: int, level: float = 0.95) -> tuple[float, float]:
    if sigma2 < 0:
        raise ValueError(f"variance must be non-negative, got {sigma2}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    half = norm.ppf(0.5 + level / 2.0) * math.sqrt(sigma2 / m)
    return estimate - half, estimate + half


@dataclass(frozen=True)
class VarianceReport:
    sigma2_hac: float
    sigma2_iid: float
    bandwidth: int
    gamma: float
    negative_hac: bool
    pair_count: int
    branch: str
    avg_path_length: float | None
    m: int

    @property
    def se_hac(self) -> float | None:
        return None if self.negative_hac else math.sqrt(self.sigma2_hac / self.m)

    @property
    def se_iid(self) -> float:
        return math.sqrt(self.sigma2_iid / self.m)

    def to_dict(self) -> dict:
        return asdict(self)


def variance_report(scores: ScoreVector, g: Graph, B: int | None = None, gamma: float = 1.0) -> VarianceReport:
    if B is None:
        B, branch, L = bandwidth_details(g, gamma)
    else:
        branch, L = "given", None
    s_hac = hac_variance(scores, g, B)
    s_iid = iid_variance(scores)
    return VarianceReport(s_hac, s_iid, int(B), float(gamma), bool(s_hac < 0), hac_pair_count(scores, g, B),
                          branch, L, scores.m)
