"""Doubly robust DID estimators of direct and spillover effects on the treated.

Level estimators are ratios: the sum of unit scores over the analysis set
divided by the number of units in the target cell (treated at level ``g`` for
direct effects). Standard errors are computed from the linearized values

    phi_i = theta + (psi_i - theta * a_i) / mean(a)

whose mean over the analysis set is exactly ``theta``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import NEVER, PanelDataset, RcsDataset, StaggeredPanel
from .errors import EstimationError
from .exposure import ExposureMap, ExposureVector, exposure_vector
from .graph import Graph
from .nuisance.fit import (
    CellModels,
    LearnerConfig,
    NuisanceFit,
    RcsFit,
    SpilloverFit,
)
from .variance import ScoreVector, VarianceReport, confidence_interval, variance_report

__all__ = [
    "InferenceConfig",
    "EstimateReport",
    "ScoreVector",
    "dr_score",
    "dr_scores",
    "trim_analysis_set",
    "datt_hat",
    "datt_level",
    "datt_overall",
    "satt_hat",
    "satt_overall",
    "att_total",
    "rcs_datt_hat",
    "naive_dr_did",
    "StaggeredMatch",
    "staggered_match",
    "staggered_design",
    "write_scores_csv",
]


@dataclass(frozen=True)
class InferenceConfig:
    gamma: float = 1.0
    eps_trim: float = 0.01
    bandwidth: int | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.eps_trim < 0.5:
            raise ValueError("eps_trim must lie in [0, 0.5)")


@dataclass(eq=False)
class EstimateReport:
    estimand: str
    estimate: float
    se_hac: float | None
    se_iid: float
    bandwidth: int
    ci: tuple[float, float] | None
    ci_iid: tuple[float, float]
    m: int
    clip_count: int
    trim_count: int
    variance: VarianceReport
    g: int | None = None
    d: int | None = None
    n: int = 0
    n_treated: int = 0
    learner: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict)
    level_weights: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    scores: ScoreVector | None = None

    @property
    def analysis(self) -> np.ndarray:
        return self.scores.nodes

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "g": self.g,
            "d": self.d,
            "estimate": self.estimate,
            "se_hac": self.se_hac,
            "se_iid": self.se_iid,
            "bandwidth": self.bandwidth,
            "ci": list(self.ci) if self.ci is not None else None,
            "ci_iid": list(self.ci_iid),
            "m": self.m,
            "n": self.n,
            "n_treated": self.n_treated,
            "clip_count": self.clip_count,
            "trim_count": self.trim_count,
            "variance": self.variance.to_dict(),
            "learner": self.learner,
            "components": {k: v for k, v in self.components.items()},
            "level_weights": {str(k): v for k, v in self.level_weights.items()},
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        se = "unavailable (negative HAC)" if self.se_hac is None else f"{self.se_hac:.4f}"
        ci = "n/a" if self.ci is None else f"[{self.ci[0]:.4f}, {self.ci[1]:.4f}]"
        lvl = "" if self.g is None else f" g={self.g}"
        return (f"{self.estimand}{lvl}: {self.estimate:.4f}  SE(HAC)={se}  SE(IID)={self.se_iid:.4f}  "
                f"95% CI {ci}  B={self.bandwidth}  m={self.m}  trimmed={self.trim_count}  clipped={self.clip_count}")


# --------------------------------------------------------------------------- scores


def _ind(G, g):
    return (np.asarray(G) == g).astype(float)


def dr_scores(D, G, dY, fit: NuisanceFit, g: int) -> np.ndarray:
    """Unit scores ``(D 1{G=g} - (1-D) 1{G=g} e/(1-e)) (dY - dmu)`` for all nodes."""
    D = np.asarray(D, dtype=float)
    one_g = _ind(G, g)
    e = fit.e
    w = D * one_g - (1.0 - D) * one_g * e / (1.0 - e)
    return w * (np.asarray(dY, float) - fit.dmu)


def dr_score(i: int, D, G, dY, fit: NuisanceFit, g: int) -> float:
    Di, Gi = int(D[i]), int(G[i])
    if Gi != g:
        return 0.0
    r = float(dY[i]) - float(fit.dmu[i])
    if Di == 1:
        return r
    e = float(fit.e[i])
    return -(e / (1.0 - e)) * r


def trim_analysis_set(fit, eps_trim: float = 0.01) -> tuple[np.ndarray, int]:
    """Nodes whose untrimmed propensity lies strictly inside (eps, 1 - eps)."""
    p = np.asarray(getattr(fit, "e_raw", fit), dtype=float)
    keep = (p > eps_trim) & (p < 1.0 - eps_trim)
    nodes = np.flatnonzero(keep)
    if nodes.size == 0:
        raise EstimationError(f"every unit was trimmed at eps_trim={eps_trim}")
    return nodes, int(p.size - nodes.size)


def _relevant(fit, D, G) -> np.ndarray:
    """Units whose score can be nonzero under ``fit``; only these are subject to trimming."""
    if isinstance(fit, SpilloverFit):
        return (D == fit.d) & ((G == fit.g) | (G == 0))
    if isinstance(fit, (NuisanceFit, RcsFit)):
        return G == fit.g
    return np.ones(len(G), dtype=bool)


def _common_analysis(fits, n: int, eps_trim: float, analysis=None, D=None, G=None) -> tuple[np.ndarray, int]:
    """Intersection over fits of the units that survive trimming.

    With ``D`` and ``G`` given, a fit only trims units whose score it can
    affect: a unit at another exposure level has a zero score for that fit
    whatever its propensity.
    """
    keep = np.ones(n, dtype=bool)
    for f in fits:
        p = np.asarray(f.e_raw, dtype=float)
        ok = (p > eps_trim) & (p < 1.0 - eps_trim)
        if D is not None and G is not None:
            ok |= ~_relevant(f, np.asarray(D), np.asarray(G))
        keep &= ok
    if analysis is not None:
        mask = np.zeros(n, dtype=bool)
        mask[np.asarray(analysis, dtype=np.int64)] = True
        keep &= mask
    nodes = np.flatnonzero(keep)
    if nodes.size == 0:
        raise EstimationError("analysis set is empty after trimming")
    return nodes, int(n - nodes.size)


def _ratio(psi, a, what: str):
    """``sum(psi)/sum(a)`` and the linearized correction ``(psi - theta a)/mean(a)``."""
    s = float(a.sum())
    if s <= 0:
        raise EstimationError(f"no {what} in the analysis set")
    theta = float(psi.sum()) / s
    return theta, (psi - theta * a) / (s / a.size)


def _report(estimand, theta, corr, nodes, graph: Graph, inf: InferenceConfig, *, g=None, d=None,
            clip_count=0, trim_count=0, n_treated=0, learner=None, components=None, level_weights=None,
            notes=None) -> EstimateReport:
    phi = theta + corr
    try:
        sv = ScoreVector(g, phi, nodes)
    except ValueError as exc:
        raise EstimationError(str(exc)) from None
    vr = variance_report(sv, graph, inf.bandwidth, inf.gamma)
    se_iid = vr.se_iid
    ci_iid = confidence_interval(theta, vr.sigma2_iid, vr.m, inf.level)
    if vr.negative_hac:
        se_hac, ci = None, None
        notes = list(notes or []) + ["HAC variance is negative; HAC standard error reported as unavailable"]
    else:
        se_hac = vr.se_hac
        ci = confidence_interval(theta, vr.sigma2_hac, vr.m, inf.level)
    return EstimateReport(estimand, float(theta), se_hac, se_iid, vr.bandwidth, ci, ci_iid, vr.m, int(clip_count),
                          int(trim_count), vr, g, d, graph.n, int(n_treated), dict(learner or {}),
                          dict(components or {}), dict(level_weights or {}), list(notes or []), sv)


# --------------------------------------------------------------------------- direct effects


def _dy(d: PanelDataset) -> np.ndarray:
    return d.Y_post - d.Y_pre


def _Gvec(G) -> np.ndarray:
    return np.asarray(G.G if isinstance(G, ExposureVector) else G, dtype=np.int64)


def _datt_parts(d: PanelDataset, G, g: int, fit: NuisanceFit, nodes):
    G = _Gvec(G)
    psi = dr_scores(d.D, G, _dy(d), fit, g)[nodes]
    a = (d.D * (G == g)).astype(float)[nodes]
    return psi, a


def datt_hat(d: PanelDataset, G, g: int, fit: NuisanceFit, eps_trim: float = 0.01,
             analysis=None) -> tuple[float, ScoreVector]:
    """Direct effect at level ``g``; returns the estimate and its score vector."""
    nodes, _ = _common_analysis([fit], d.n, eps_trim, analysis, d.D, _Gvec(G))
    psi, a = _datt_parts(d, G, g, fit, nodes)
    theta, corr = _ratio(psi, a, f"treated units at level {g}")
    try:
        return theta, ScoreVector(g, theta + corr, nodes)
    except ValueError as exc:
        raise EstimationError(str(exc)) from None


def datt_level(d: PanelDataset, G, g: int, fit: NuisanceFit, inf: InferenceConfig | None = None,
               analysis=None) -> EstimateReport:
    inf = inf or InferenceConfig()
    nodes, trimmed = _common_analysis([fit], d.n, inf.eps_trim, analysis, d.D, _Gvec(G))
    psi, a = _datt_parts(d, G, g, fit, nodes)
    theta, corr = _ratio(psi, a, f"treated units at level {g}")
    return _report("DATT(g)", theta, corr, nodes, d.graph, inf, g=g, clip_count=fit.clip_count,
                   trim_count=trimmed, n_treated=int(a.sum()), learner=fit.learner)


def _level_fits(d: PanelDataset, G, fits) -> dict:
    G = _Gvec(G)
    if isinstance(fits, CellModels):
        levels = sorted(set(G[d.D == 1].tolist()))
        return {g: fits.nuisance(g) for g in levels}
    return dict(fits)


def datt_overall(d: PanelDataset, G, fits: Mapping[int, NuisanceFit] | CellModels,
                 inf: InferenceConfig | None = None, analysis=None) -> EstimateReport:
    """Level estimates weighted by the share of treated units at each level.

    With these weights the estimate collapses to the sum of all level scores
    divided by the number of treated units in the analysis set.
    """
    inf = inf or InferenceConfig()
    G = _Gvec(G)
    fits = _level_fits(d, G, fits)
    nodes, trimmed = _common_analysis(fits.values(), d.n, inf.eps_trim, analysis, d.D, G)
    levels = sorted(set(G[nodes][d.D[nodes] == 1].tolist()))
    missing = [g for g in levels if g not in fits]
    if missing:
        raise EstimationError(f"no nuisance fit for realized treated level(s) {missing}")
    psi = np.zeros(nodes.size)
    comps, weights = {}, {}
    Dm = d.D[nodes].astype(float)
    for g in levels:
        p_g, a_g = _datt_parts(d, G, g, fits[g], nodes)
        psi += p_g
        comps[f"DATT({g})"] = float(p_g.sum() / a_g.sum())
        weights[g] = float(a_g.sum() / Dm.sum())
    theta, corr = _ratio(psi, Dm, "treated units")
    clips = sum(f.clip_count for f in fits.values())
    learner = next(iter(fits.values())).learner if fits else {}
    return _report("DATT", theta, corr, nodes, d.graph, inf, clip_count=clips, trim_count=trimmed,
                   n_treated=int(Dm.sum()), learner=learner, components=comps, level_weights=weights)


# --------------------------------------------------------------------------- spillover effects


def _satt_parts(d: PanelDataset, G, sf: SpilloverFit, nodes):
    G = _Gvec(G)
    in_d = (d.D == sf.d).astype(float)
    odds = sf.e / (1.0 - sf.e)
    w = in_d * (G == sf.g) - in_d * (G == 0) * odds
    psi = (w * (_dy(d) - sf.dmu))[nodes]
    b = (in_d * (G == sf.g))[nodes]
    return psi, b


def satt_hat(d: PanelDataset, G, g: int, fit: SpilloverFit, inf: InferenceConfig | None = None,
             analysis=None) -> EstimateReport:
    """Spillover effect of level ``g`` versus 0 for units with own treatment ``fit.d``."""
    inf = inf or InferenceConfig()
    if fit.g != g:
        raise ValueError(f"spillover fit is for level {fit.g}, not {g}")
    nodes, trimmed = _common_analysis([fit], d.n, inf.eps_trim, analysis, d.D, _Gvec(G))
    psi, b = _satt_parts(d, G, fit, nodes)
    theta, corr = _ratio(psi, b, f"units with D={fit.d} at level {g}")
    return _report(f"SATT(g;{fit.d})", theta, corr, nodes, d.graph, inf, g=g, d=fit.d,
                   clip_count=fit.clip_count, trim_count=trimmed, n_treated=int((d.D[nodes] == 1).sum()))


def _satt_overall_parts(d: PanelDataset, G, sfits: Mapping[int, SpilloverFit], dd: int, nodes):
    G = _Gvec(G)
    Dm = d.D[nodes].astype(float)
    Dbar = Dm.mean()
    if Dbar == 0:
        raise EstimationError("no treated units in the analysis set")
    levels = sorted(g for g in set(G[nodes][Dm == 1].tolist()) if g != 0)
    theta, corr = 0.0, np.zeros(nodes.size)
    comps, weights = {}, {}
    for g in levels:
        if g not in sfits:
            raise EstimationError(f"no spillover fit for level {g} at D={dd}")
        psi, b = _satt_parts(d, G, sfits[g], nodes)
        s_g, c_g = _ratio(psi, b, f"units with D={dd} at level {g}")
        a_g = Dm * (G[nodes] == g)
        w_g = a_g.mean() / Dbar
        theta += w_g * s_g
        corr += w_g * c_g + s_g * (a_g - w_g * Dm) / Dbar
        comps[f"SATT({g};{dd})"] = s_g
        weights[g] = float(w_g)
    return float(theta), corr, comps, weights


def satt_overall(d: PanelDataset, G, sfits: Mapping[int, SpilloverFit], dd: int,
                 inf: InferenceConfig | None = None, analysis=None) -> EstimateReport:
    """Level spillover effects weighted by the share of treated units at each level."""
    inf = inf or InferenceConfig()
    nodes, trimmed = _common_analysis(sfits.values(), d.n, inf.eps_trim, analysis, d.D, _Gvec(G))
    theta, corr, comps, weights = _satt_overall_parts(d, G, sfits, dd, nodes)
    clips = sum(f.clip_count for f in sfits.values())
    return _report(f"SATT({dd})", theta, corr, nodes, d.graph, inf, d=dd, clip_count=clips, trim_count=trimmed,
                   n_treated=int(d.D[nodes].sum()), components=comps, level_weights=weights)


def att_total(d: PanelDataset, G, fits: Mapping[int, NuisanceFit], sfits0: Mapping[int, SpilloverFit],
              inf: InferenceConfig | None = None, analysis=None) -> EstimateReport:
    """Overall direct effect plus the overall untreated-recipient spillover effect.

    Both parts are computed on one common analysis set and their linearized
    values are added, so the total equals the sum of the parts exactly.
    """
    inf = inf or InferenceConfig()
    nodes, trimmed = _common_analysis(list(fits.values()) + list(sfits0.values()), d.n, inf.eps_trim, analysis,
                                      d.D, _Gvec(G))
    direct = datt_overall(d, G, fits, inf, nodes)
    theta_s, corr_s, comps_s, _ = _satt_overall_parts(d, G, sfits0, 0, nodes)
    theta = direct.estimate + theta_s
    corr = (direct.scores.values - direct.estimate) + corr_s
    comps = {"DATT": direct.estimate, "SATT(0)": theta_s, **direct.components, **comps_s}
    clips = direct.clip_count + sum(f.clip_count for f in sfits0.values())
    return _report("ATT", theta, corr, nodes, d.graph, inf, clip_count=clips, trim_count=trimmed,
                   n_treated=direct.n_treated, learner=direct.learner, components=comps,
                   level_weights=direct.level_weights)


# --------------------------------------------------------------------------- repeated cross-sections


def rcs_datt_hat(d: RcsDataset, G, g: int, fit: RcsFit, inf: InferenceConfig | None = None,
                 analysis=None) -> EstimateReport:
    """Direct effect at level ``g`` from two independent waves.

    Each wave contributes a treated term normalized by that wave's treated
    count at level ``g`` and a reweighted control term normalized the same way.
    """
    inf = inf or InferenceConfig()
    G = _Gvec(G)
    nodes, trimmed = _common_analysis([fit], d.n, inf.eps_trim, analysis, d.D, _Gvec(G))
    D = d.D.astype(float)
    T = d.T
    one_g = (G == g).astype(float)
    odds = fit.e / (1.0 - fit.e)
    mu = np.where(T == 1, fit.mu_post, fit.mu_pre)
    resid = d.Y - mu
    theta, corr = 0.0, np.zeros(nodes.size)
    for t, sign in ((1, 1.0), (0, -1.0)):
        in_t = (T == t).astype(float)
        a = (D * one_g * in_t)[nodes]
        treated = (D * one_g * in_t * resid)[nodes]
        control = ((1 - D) * one_g * in_t * odds * resid)[nodes]
        for num, s in ((treated, sign), (control, -sign)):
            th, c = _ratio(num, a, f"treated units at level {g} in wave T={t}")
            theta += s * th
            corr += s * c
    n_treated = int((D * one_g)[nodes].sum())
    return _report("RCS-DATT(g)", theta, corr, nodes, d.graph, inf, g=g, clip_count=fit.clip_count,
                   trim_count=trimmed, n_treated=n_treated)


# --------------------------------------------------------------------------- interference-blind baseline


def naive_dr_did(d: PanelDataset, cfg: LearnerConfig | None = None, inf: InferenceConfig | None = None,
                 features=None) -> EstimateReport:
    """DR-DID that ignores exposure and network features.

    Propensity and outcome models use own covariates only and every unit is
    placed at a single exposure level.
    """
    inf = inf or InferenceConfig()
    cfg = cfg or LearnerConfig()
    if d.D.min() == d.D.max():
        raise EstimationError(f"degenerate treatment: every unit has D={int(d.D[0])}")
    G0 = np.zeros(d.n, dtype=np.int64)
    models = CellModels(d, G0, cfg, network=False, features=features)
    fit = models.nuisance(0)
    nodes, trimmed = _common_analysis([fit], d.n, inf.eps_trim, None, d.D, G0)
    psi, a = _datt_parts(d, G0, 0, fit, nodes)
    theta, corr = _ratio(psi, a, "treated units")
    learner = dict(fit.learner)
    return _report("NAIVE", theta, corr, nodes, d.graph, inf, clip_count=fit.clip_count, trim_count=trimmed,
                   n_treated=int(a.sum()), learner=learner)


# --------------------------------------------------------------------------- staggered adoption


@dataclass
class StaggeredMatch:
    t: int
    adopters: list[int]
    matches: dict[int, list[int]]
    exposure: dict[int, int]
    unmatched: list[int]

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self.adopters for j in self.matches[i]]

    def to_dict(self, ids=None) -> dict:
        lab = (lambda i: ids[i]) if ids is not None else (lambda i: int(i))
        return {
            "t": self.t,
            "matches": {str(lab(i)): [lab(j) for j in js] for i, js in self.matches.items()},
            "unmatched": [lab(i) for i in self.unmatched],
        }


def _staggered_exposure(sp: StaggeredPanel, t: int, emap: ExposureMap | None):
    emap = emap or ExposureMap(kind="count", cap=max(1, int(sp.graph.degrees.max(initial=1))))
    D_t = sp.treated_at(t)
    return D_t, exposure_vector(sp.graph, D_t, emap)


def staggered_match(sp: StaggeredPanel, t: int, emap: ExposureMap | None = None) -> StaggeredMatch:
    """Match units adopting at ``t`` to not-yet-treated units with equal exposure at ``t``.

    Exposure is computed from adoption statuses at ``t``. The default mapping
    counts treated neighbors without a cap.
    """
    a = sp.adoption_time
    adopters = np.flatnonzero(a == t)
    if adopters.size == 0:
        raise ValueError(f"no unit adopts at period {t}")
    _, ev = _staggered_exposure(sp, t, emap)
    G = ev.G
    pool = np.flatnonzero((a == NEVER) | (a > t))
    matches, unmatched = {}, []
    for i in adopters:
        js = pool[G[pool] == G[i]]
        matches[int(i)] = [int(j) for j in js]
        if js.size == 0:
            unmatched.append(int(i))
    return StaggeredMatch(int(t), [int(i) for i in adopters], matches, {int(i): int(G[i]) for i in range(sp.graph.n)},
                          unmatched)


def staggered_design(sp: StaggeredPanel, t: int, emap: ExposureMap | None = None):
    """Two-period panel around adoption period ``t`` with its exposure and analysis nodes.

    Treated units adopt at ``t``; controls are not yet treated at ``t``. Other
    units stay in the graph (they shape exposures) but not in the analysis set.
    """
    if t < 2:
        raise ValueError("a 2x2 comparison needs a pre-period; t must be at least 2")
    a = sp.adoption_time
    D_now = (a == t).astype(np.int64)
    _, ev = _staggered_exposure(sp, t, emap)
    keep = np.flatnonzero((a == t) | (a == NEVER) | (a > t))
    panel = PanelDataset(sp.graph, sp.X, D_now, sp.Y[:, t - 2], sp.Y[:, t - 1], sp.ids)
    return panel, ev, keep


# --------------------------------------------------------------------------- export


def write_scores_csv(report: EstimateReport, path, ids=None) -> None:
    sv = report.scores
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score"])
        for node, v in zip(sv.nodes, sv.values):
            w.writerow([ids[node] if ids is not None else int(node), repr(float(v))])
