"""Generalized propensity and outcome-change fits per exposure cell.

The joint probability ``p_dg = P(D=d, G=g | X, A)`` is fit one-vs-rest on all
units with target ``1{D=d, G=g}``. Estimators weight controls by the
within-cell odds ``e / (1 - e)`` with ``e = p_1g / (p_1g + p_0g)``, the
probability of treatment among units at exposure level ``g``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import OverlapError
from ..exposure import ExposureVector
from ..graph import build_from_edges
from .features import FeatureMatrix, build_features
from .glm import RIDGE_DEFAULT, fit_least_squares, fit_logistic
from .gnn import AGG_MEAN, AGG_PNA, GnnConfig, gnn_forward, gnn_train

__all__ = [
    "LearnerConfig",
    "NuisanceFit",
    "CellModels",
    "fit_nuisances",
    "clip_probabilities",
    "within_cell_propensity",
    "SpilloverFit",
    "RcsFit",
    "spillover_fit",
    "rcs_fit",
]


@dataclass(frozen=True)
class LearnerConfig:
    learner: str = "nglm"
    L: int = 1
    H: int = 5
    poly_degree: int = 2
    epochs: int = 300
    lr: float = 0.03
    seed: int = 0
    eps_clip: float = 0.01
    ridge: float = RIDGE_DEFAULT
    aggregators: str = "pna"

    def __post_init__(self):
        if self.learner not in ("nglm", "gnn"):
            raise ValueError(f"unknown learner {self.learner!r}; expected 'gnn' or 'nglm'")
        if self.poly_degree not in (1, 2, 3):
            raise ValueError("poly_degree must be 1, 2 or 3")
        if not 0.0 < self.eps_clip < 0.5:
            raise ValueError("eps_clip must lie in (0, 0.5)")
        if self.aggregators not in ("pna", "mean"):
            raise ValueError("aggregators must be 'pna' or 'mean'")
        if self.learner == "gnn":
            self.gnn_config(0)

    @classmethod
    def from_dict(cls, cfg: dict | None) -> "LearnerConfig":
        cfg = dict(cfg or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown learner config keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)

    def gnn_config(self, seed: int) -> GnnConfig:
        aggs = AGG_PNA if self.aggregators == "pna" else AGG_MEAN
        return GnnConfig(L=self.L, H=self.H, lr=self.lr, epochs=self.epochs, seed=seed, aggregators=aggs)


_P_FLOOR = np.finfo(float).eps


def clip_probabilities(p, eps: float) -> tuple[np.ndarray, int]:
    p = np.asarray(p, dtype=float)
    out = np.clip(p, eps, 1.0 - eps)
    return out, int(np.count_nonzero(out != p))


def within_cell_propensity(p_a, p_b) -> np.ndarray:
    """``p_a / (p_a + p_b)``: probability of the first cell given one of the two."""
    p_a, p_b = np.asarray(p_a, float), np.asarray(p_b, float)
    return p_a / (p_a + p_b)


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Nuisance predictions for exposure level ``g``.

    ``p1`` is the clipped joint propensity of (D=1, G=g). ``e`` is the clipped
    within-cell propensity that enters the score, and ``e_raw`` its unclipped
    version used for trimming.
    """

    g: int
    p1: np.ndarray
    dmu: np.ndarray
    e: np.ndarray
    e_raw: np.ndarray
    p0: np.ndarray | None = None
    eps_clip: float = 0.01
    clip_count: int = 0
    learner: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, g: int, p1, p0, dmu, eps_clip: float = 0.01, learner: dict | None = None,
                    diagnostics: dict | None = None) -> "NuisanceFit":
        p1 = np.asarray(p1, float)
        p0 = np.asarray(p0, float)
        e_raw = within_cell_propensity(p1, p0)
        p1c, c1 = clip_probabilities(p1, eps_clip)
        p0c, c0 = clip_probabilities(p0, eps_clip)
        e, ce = clip_probabilities(e_raw, eps_clip)
        diag = {"clip_joint_p1": c1, "clip_joint_p0": c0, "clip_within_cell": ce}
        diag.update(diagnostics or {})
        return cls(g, p1c, np.asarray(dmu, float), e, e_raw, p0c, eps_clip, ce, dict(learner or {}), diag)

    @classmethod
    def from_propensity(cls, g: int, e, dmu, eps_clip: float = 0.01) -> "NuisanceFit":
        """Fit built directly from a within-cell propensity (oracle or test use)."""
        e_raw = np.asarray(e, float)
        e_c, ce = clip_probabilities(e_raw, eps_clip)
        return cls(g, e_c, np.asarray(dmu, float), e_c, e_raw, None, eps_clip, ce, {"learner": "given"},
                   {"clip_within_cell": ce})


def _seed_for(base: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(base) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in key]]).generate_state(1)[0])


class CellModels:
    """Lazily fit and cache propensity and outcome models for one dataset.

    ``network=False`` drops all graph features (own covariates only), which is
    what the interference-blind baseline uses. ``features`` overrides the
    NGLM design matrix. ``rows`` restricts every training sample to a subset
    of nodes while predictions are still made for all nodes.
    """

    def __init__(self, data, G: ExposureVector | np.ndarray, cfg: LearnerConfig | None = None,
                 network: bool = True, features: FeatureMatrix | np.ndarray | None = None, rows=None):
        self.data = data
        self.rows = None
        if rows is not None:
            self.rows = np.zeros(data.graph.n, dtype=bool)
            self.rows[np.asarray(rows, dtype=np.int64)] = True
        self.G = np.asarray(G.G if isinstance(G, ExposureVector) else G, dtype=np.int64)
        self.cfg = cfg or LearnerConfig()
        self.network = network
        self._features = features
        self._prop: dict = {}
        self._out: dict = {}
        self.diagnostics: dict = {}

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = build_features(self.data, self.cfg.L, self.cfg.poly_degree, self.network)
        return np.asarray(self._features)

    @property
    def D(self) -> np.ndarray:
        return self.data.D

    def _fit_binary(self, key, labels):
        cfg = self.cfg
        if cfg.learner == "nglm":
            fit = fit_logistic(self.features, labels, self.rows, ridge=cfg.ridge)
            self.diagnostics[key] = {"iterations": fit.iterations, "grad_norm": fit.grad_norm,
                                     "converged": fit.converged}
            return fit.predict(self.features)
        X, graph = self._gnn_inputs()
        params, diag = gnn_train(graph, X, labels, self.rows, "logistic", cfg.gnn_config(_seed_for(cfg.seed, *key)))
        self.diagnostics[key] = diag
        p = expit(gnn_forward(params, graph, X))
        return np.clip(p, _P_FLOOR, 1.0 - _P_FLOOR)

    def _fit_regression(self, key, targets, mask):
        cfg = self.cfg
        if cfg.learner == "nglm":
            fit = fit_least_squares(self.features, targets, mask, ridge=cfg.ridge)
            self.diagnostics[key] = {"rows": fit.diagnostics["rows"]}
            return fit.predict(self.features)
        X, graph = self._gnn_inputs()
        params, diag = gnn_train(graph, X, targets, mask, "squared", cfg.gnn_config(_seed_for(cfg.seed, *key)))
        self.diagnostics[key] = diag
        return gnn_forward(params, graph, X)

    def _gnn_inputs(self):
        X = np.asarray(self.data.X, dtype=float)
        graph = self.data.graph if self.network else build_from_edges(self.data.graph.n, [])
        return X, graph

    def propensity(self, d: int, g: int) -> np.ndarray:
        """Unclipped ``p_dg`` for every node."""
        key = (0, int(d), int(g))
        if key not in self._prop:
            labels = ((self.D == d) & (self.G == g)).astype(float)
            live = labels if self.rows is None else labels[self.rows]
            if live.sum() == 0:
                raise OverlapError(d, g, "generalized propensity has no positive labels")
            if live.sum() == live.size:
                raise OverlapError(1 - d, g, "every unit falls in a single cell")
            self._prop[key] = self._fit_binary(key, labels)
        return self._prop[key]

    def outcome(self, d: int, g: int, targets=None, mask=None, tag: int = 0) -> np.ndarray:
        """Regression of ``targets`` (default: outcome change) on units in cell (d, g)."""
        key = (1, int(d), int(g), int(tag))
        if key not in self._out:
            cell = (self.D == d) & (self.G == g)
            if self.rows is not None:
                cell = cell & self.rows
            if mask is not None:
                cell = cell & np.asarray(mask, bool)
            if not cell.any():
                raise OverlapError(d, g, "outcome regression has no training rows")
            if targets is None:
                targets = self.data.Y_post - self.data.Y_pre
            self._out[key] = self._fit_regression(key, targets, cell)
        return self._out[key]

    def nuisance(self, g: int) -> "NuisanceFit":
        p1 = self.propensity(1, g)
        p0 = self.propensity(0, g)
        dmu = self.outcome(0, g)
        tag = {"learner": self.cfg.learner, **self.cfg.to_dict(), "network": self.network}
        return NuisanceFit.from_arrays(g, p1, p0, dmu, self.cfg.eps_clip, tag)


def fit_nuisances(d, G, g: int, cfg: LearnerConfig | None = None, models: CellModels | None = None) -> NuisanceFit:
    """Propensity and control outcome-change fits for exposure level ``g``."""
    models = models or CellModels(d, G, cfg)
    return models.nuisance(g)


@dataclass(frozen=True, eq=False)
class SpilloverFit:
    """Nuisances for the spillover contrast of level ``g`` against level 0 at own treatment ``d``.

    ``e`` is the clipped probability of level ``g`` among units in cells
    (d, g) and (d, 0), so ``e / (1 - e)`` equals ``p_dg / p_d0``. ``dmu`` is
    the outcome-change regression fit on cell (d, 0).
    """

    d: int
    g: int
    e: np.ndarray
    e_raw: np.ndarray
    dmu: np.ndarray
    eps_clip: float = 0.01
    clip_count: int = 0

    @classmethod
    def from_arrays(cls, d: int, g: int, p_dg, p_d0, dmu, eps_clip: float = 0.01) -> "SpilloverFit":
        e_raw = within_cell_propensity(p_dg, p_d0)
        e, ce = clip_probabilities(e_raw, eps_clip)
        return cls(d, g, e, e_raw, np.asarray(dmu, float), eps_clip, ce)


@dataclass(frozen=True, eq=False)
class RcsFit:
    """Nuisances for a repeated cross-section at level ``g``.

    ``mu`` holds control outcome regressions for each wave, fit on
    (D=0, G=g, T=t) and predicted for every unit.
    """

    g: int
    e: np.ndarray
    e_raw: np.ndarray
    mu_pre: np.ndarray
    mu_post: np.ndarray
    eps_clip: float = 0.01
    clip_count: int = 0


def spillover_fit(models: CellModels, d: int, g: int) -> SpilloverFit:
    if g == 0:
        raise ValueError("spillover contrasts compare a level g != 0 against level 0")
    return SpilloverFit.from_arrays(d, g, models.propensity(d, g), models.propensity(d, 0),
                                    models.outcome(d, 0), models.cfg.eps_clip)


def rcs_fit(models: CellModels, g: int) -> RcsFit:
    data = models.data
    T = np.asarray(data.T)
    for t in (0, 1):
        for d in (0, 1):
            if not ((data.D == d) & (models.G == g) & (T == t)).any():
                raise OverlapError(d, g, f"no units in wave T={t}")
    e_raw = within_cell_propensity(models.propensity(1, g), models.propensity(0, g))
    e, ce = clip_probabilities(e_raw, models.cfg.eps_clip)
    mu0 = models.outcome(0, g, targets=data.Y, mask=T == 0, tag=1)
    mu1 = models.outcome(0, g, targets=data.Y, mask=T == 1, tag=2)
    return RcsFit(g, e, e_raw, mu0, mu1, models.cfg.eps_clip, ce)
