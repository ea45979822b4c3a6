"""Data generating processes, equilibrium solvers and the Monte Carlo harness.

Two designs are provided:

``main-s6``
    Random geometric graph, discrete covariate, a treatment rule that is
    simultaneous in the neighbors' treatments, and a post-period outcome with
    an endogenous neighbor-mean term. Outcomes never depend on treatment, so
    every direct effect is zero.

``appendix-e``
    Logistic treatment on a nonlinear covariate, exposure = at least one
    treated neighbor, and a post-period effect of 0.2 plus 0.2 more for
    treated units with a treated neighbor.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import PanelDataset
from .errors import ConvergenceError, EstimationError, NetDidError
from .exposure import ExposureMap, ExposureVector, exposure_vector
from .graph import Graph, default_radius, rgg_from_positions, sample_positions

__all__ = [
    "DgpConfig",
    "SimulatedPanel",
    "FixedPointResult",
    "solve_treatment_fixed_point",
    "is_nash_profile",
    "solve_linear_in_means",
    "simulate_main_s6",
    "simulate_appendix_e",
    "simulate",
    "potential_outcome_effects",
    "potential_outcome_att",
    "MethodSpec",
    "McConfig",
    "McReport",
    "run_monte_carlo",
]

MAIN_DEFAULTS = {
    "y_pre": {"const": 0.5, "wx": 1.0, "x": 1.0, "eps": 1.0, "weps": 1.0},
    "treat": {"const": 0.5, "peer": 1.5, "wx": 1.0, "x": -1.0, "nu": 1.0, "wnu": 1.0},
    "y_post": {"const": 0.5, "peer": 0.8, "wx": 10.0, "x": 1.0, "mu": 1.0, "wmu": 1.0},
}
APPENDIX_E_DEFAULTS = {
    "theta_d": [0.4, 1.5],
    "theta_pre": [1.0, 0.0, 0.0, 0.6],
    "theta_post": [0.5, 0.2, 0.2, 0.8],
}
X_SUPPORT = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def _merge(defaults: dict, override: dict | None) -> dict:
    out = json.loads(json.dumps(defaults))
    for k, v in (override or {}).items():
        if k not in out:
            raise ValueError(f"unknown coefficient block {k!r}")
        if isinstance(out[k], dict):
            bad = set(v) - set(out[k])
            if bad:
                raise ValueError(f"unknown coefficients {sorted(bad)} in block {k!r}")
            out[k].update(v)
        else:
            if len(v) != len(out[k]):
                raise ValueError(f"coefficient block {k!r} needs {len(out[k])} values")
            out[k] = list(v)
    return out


@dataclass(frozen=True)
class DgpConfig:
    kind: str = "appendix-e"
    n: int = 2000
    seed: int = 0
    coefficients: dict = field(default_factory=dict)
    peer_outcome: str = "simultaneous"
    exposure: dict = field(default_factory=lambda: {"kind": "any"})
    radius: float | None = None
    tol: float = 1e-10
    max_iter: int = 10_000

    def __post_init__(self):
        if self.kind not in ("main-s6", "appendix-e"):
            raise ValueError(f"unknown DGP {self.kind!r}; expected 'main-s6' or 'appendix-e'")
        if self.n < 50:
            raise ValueError(f"DGP needs n >= 50, got {self.n}")
        if self.peer_outcome not in ("simultaneous", "lagged"):
            raise ValueError("peer_outcome must be 'simultaneous' or 'lagged'")
        coef = self.resolved()
        flat = [v for b in coef.values() for v in (b.values() if isinstance(b, dict) else b)]
        if not all(math.isfinite(v) for v in flat):
            raise ValueError("coefficients must be finite")
        if self.kind == "main-s6" and abs(coef["y_post"]["peer"]) >= 1:
            raise ValueError("outcome peer coefficient must have absolute value below 1")

    def resolved(self) -> dict:
        base = MAIN_DEFAULTS if self.kind == "main-s6" else APPENDIX_E_DEFAULTS
        return _merge(base, self.coefficients)

    @classmethod
    def from_dict(cls, cfg: dict) -> "DgpConfig":
        cfg = dict(cfg)
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown DGP config keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class SimulatedPanel:
    data: PanelDataset
    G: ExposureVector
    counterfactual_post: dict  # (d, g) -> n outcomes in the post period
    counterfactual_pre: dict
    config: DgpConfig
    points: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def levels(self) -> tuple[int, ...]:
        return self.G.levels


# --------------------------------------------------------------------------- equilibrium solvers


@dataclass
class FixedPointResult:
    D: np.ndarray
    iterations: int
    converged: bool
    cycle: bool = False
    trace: list = field(default_factory=list)


def _best_response(base, peer, W, D):
    return (base + peer * (W @ D) > 0).astype(np.int64)


def solve_treatment_fixed_point(g: Graph, base_index, peer: float, max_iter: int = 1000) -> FixedPointResult:
    """Best-response iteration ``D <- 1{base + peer * W D > 0}`` from the all-zero profile.

    ``base_index`` holds every term of the latent index except the peer
    term. If the iteration revisits a profile, the cycle is reported and the
    visited profile with the fewest unilateral flips is returned.
    """
    base = np.asarray(base_index, dtype=float)
    W = g.row_normalized
    D = np.zeros(g.n, dtype=np.int64)
    seen = {D.tobytes(): 0}
    history = [D]
    trace = []
    for it in range(1, max_iter + 1):
        new = _best_response(base, peer, W, D)
        flips = int(np.count_nonzero(new != D))
        trace.append(flips)
        if flips == 0:
            return FixedPointResult(D, it, True, False, trace)
        key = new.tobytes()
        if key in seen:
            best = min(history, key=lambda P: int(np.count_nonzero(_best_response(base, peer, W, P) != P)))
            return FixedPointResult(best, it, False, True, trace)
        seen[key] = it
        history.append(new)
        D = new
    raise ConvergenceError(f"treatment fixed point did not settle in {max_iter} iterations; flips per step {trace[-10:]}")


def is_nash_profile(g: Graph, base_index, peer: float, D) -> bool:
    """True when no unit wants to deviate given everyone else's treatment."""
    D = np.asarray(D, dtype=np.int64)
    base = np.asarray(base_index, dtype=float)
    for i in range(g.n):
        nb = g.neighbors(i)
        share = D[nb].mean() if nb.size else 0.0
        if int(base[i] + peer * share > 0) != D[i]:
            return False
    return True


def solve_linear_in_means(g: Graph, rhs, beta: float, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Solve ``(I - beta W) Y = rhs`` by fixed-point iteration with residual check."""
    if not abs(beta) < 1:
        raise ValueError(f"peer coefficient must satisfy |beta| < 1, got {beta}")
    rhs = np.asarray(rhs, dtype=float)
    W = g.row_normalized
    Y = rhs.copy()
    res = np.inf
    for _ in range(max_iter):
        Y = rhs + beta * (W @ Y)
        res = float(np.max(np.abs(Y - beta * (W @ Y) - rhs))) if Y.size else 0.0
        if res <= tol:
            return Y
    raise ConvergenceError(f"linear-in-means solve stopped at residual {res:.3e} after {max_iter} iterations")


# --------------------------------------------------------------------------- designs


def _graph_and_rng(cfg: DgpConfig):
    rng = np.random.default_rng(cfg.seed)
    pts = sample_positions(cfg.n, rng)
    r = default_radius(cfg.n) if cfg.radius is None else cfg.radius
    return rgg_from_positions(pts, r), pts, rng


def simulate_main_s6(cfg: DgpConfig) -> SimulatedPanel:
    c = cfg.resolved()
    g, pts, rng = _graph_and_rng(cfg)
    n = cfg.n
    W = g.row_normalized
    X = rng.choice(X_SUPPORT, size=n)
    eps = rng.standard_normal(n)
    nu = rng.standard_normal(n)
    mu = rng.standard_normal(n)
    WX = W @ X
    yp = c["y_pre"]
    Y_pre = yp["const"] + yp["wx"] * WX + yp["x"] * X + yp["eps"] * eps + yp["weps"] * (W @ eps)
    tr = c["treat"]
    base = tr["const"] + tr["wx"] * WX + tr["x"] * X + tr["nu"] * nu + tr["wnu"] * (W @ nu)
    fp = solve_treatment_fixed_point(g, base, tr["peer"], max_iter=cfg.max_iter)
    D = fp.D
    po = c["y_post"]
    rhs = po["const"] + po["wx"] * WX + po["x"] * X + po["mu"] * mu + po["wmu"] * (W @ mu)
    if cfg.peer_outcome == "simultaneous":
        Y_post = solve_linear_in_means(g, rhs, po["peer"], cfg.tol, cfg.max_iter)
        residual = float(np.max(np.abs(Y_post - po["peer"] * (W @ Y_post) - rhs)))
    else:
        Y_post = rhs + po["peer"] * (W @ Y_pre)
        residual = 0.0
    emap = ExposureMap.from_config(cfg.exposure)
    G = exposure_vector(g, D, emap)
    # outcomes carry no treatment terms, so every potential outcome equals the observed one
    cf_post = {(d, lv): Y_post.copy() for d in (0, 1) for lv in emap.levels}
    cf_pre = {(d, lv): Y_pre.copy() for d in (0, 1) for lv in emap.levels}
    data = PanelDataset(g, X[:, None], D, Y_pre, Y_post)
    diag = {"fixed_point_iterations": fp.iterations, "fixed_point_converged": fp.converged,
            "fixed_point_cycle": fp.cycle, "linear_in_means_residual": residual}
    return SimulatedPanel(data, G, cf_post, cf_pre, cfg, pts, diag)


def simulate_appendix_e(cfg: DgpConfig) -> SimulatedPanel:
    c = cfg.resolved()
    g, pts, rng = _graph_and_rng(cfg)
    n = cfg.n
    X1 = rng.standard_normal(n)
    X2 = rng.standard_normal(n)
    X = 1.0 + X2 / (1.0 + np.exp(X1))
    nu = rng.standard_normal(n)
    td = c["theta_d"]
    pi = expit(td[0] + td[1] * X + nu)
    D = (rng.uniform(size=n) < pi).astype(np.int64)
    eps = rng.standard_normal(n)
    mu = rng.standard_normal(n)
    G = exposure_vector(g, D, ExposureMap("any"))
    a, b = c["theta_pre"], c["theta_post"]

    def y_pre(d, gg):
        return a[0] + a[1] * d + a[2] * d * gg + a[3] * X + eps

    def y_post(d, gg):
        return b[0] + b[1] * d + b[2] * d * gg + b[3] * X + mu

    cf_pre = {(d, lv): y_pre(d, lv) for d in (0, 1) for lv in (0, 1)}
    cf_post = {(d, lv): y_post(d, lv) for d in (0, 1) for lv in (0, 1)}
    Gv = G.G
    data = PanelDataset(g, X[:, None], D, y_pre(D, Gv), y_post(D, Gv))
    return SimulatedPanel(data, G, cf_post, cf_pre, cfg, pts, {"treated": int(D.sum())})


def simulate(cfg: DgpConfig) -> SimulatedPanel:
    return simulate_main_s6(cfg) if cfg.kind == "main-s6" else simulate_appendix_e(cfg)


# --------------------------------------------------------------------------- potential-outcome oracle


def _change(sim: SimulatedPanel, d: int, g: int) -> np.ndarray:
    return sim.counterfactual_post[(d, g)] - sim.counterfactual_pre[(d, g)]


def potential_outcome_effects(sim: SimulatedPanel) -> dict:
    """Sample effects on the treated computed from stored counterfactual outcome changes."""
    D = sim.data.D
    G = sim.G.G
    treated = D == 1
    out = {}
    for g in sim.levels:
        sel = treated & (G == g)
        if sel.any():
            out[f"DATT({g})"] = float(np.mean((_change(sim, 1, g) - _change(sim, 0, g))[sel]))
    if treated.any():
        own = np.array([_change(sim, 1, gi)[i] - _change(sim, 0, gi)[i] for i, gi in enumerate(G)])
        out["DATT"] = float(own[treated].mean())
        base = _change(sim, 0, 0)
        tot = np.array([_change(sim, 1, gi)[i] for i, gi in enumerate(G)]) - base
        out["ATT"] = float(tot[treated].mean())
        spill = np.array([_change(sim, 0, gi)[i] for i, gi in enumerate(G)]) - base
        out["SATT(0)"] = float(spill[treated].mean())
    return out


def potential_outcome_att(cfg: DgpConfig, reps: int = 1, key: str = "ATT") -> tuple[float, float]:
    """Monte Carlo mean and standard error of an oracle effect over ``reps`` seeds."""
    vals = []
    for r in range(reps):
        sim = simulate(replace(cfg, seed=cfg.seed + r))
        vals.append(potential_outcome_effects(sim)[key])
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    return float(vals.mean()), se


def check_counterfactual_consistency(sim: SimulatedPanel) -> bool:
    D, G = sim.data.D, sim.G.G
    post = np.array([sim.counterfactual_post[(int(d), int(g))][i] for i, (d, g) in enumerate(zip(D, G))])
    pre = np.array([sim.counterfactual_pre[(int(d), int(g))][i] for i, (d, g) in enumerate(zip(D, G))])
    return bool(np.array_equal(post, sim.data.Y_post) and np.array_equal(pre, sim.data.Y_pre))


# --------------------------------------------------------------------------- Monte Carlo harness


@dataclass(frozen=True)
class MethodSpec:
    """One estimator configuration evaluated in every replication.

    ``estimand`` is ``datt`` (overall), ``datt_g`` (level ``g``), ``satt``
    (overall, own treatment ``d``), ``att`` or ``naive``.
    """

    name: str
    estimand: str = "datt"
    g: int | None = None
    d: int = 1
    learner: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "MethodSpec":
        return cls(**cfg)


@dataclass(frozen=True)
class McConfig:
    dgp: DgpConfig
    methods: tuple[MethodSpec, ...]
    reps: int = 10
    base_seed: int = 0
    jobs: int = 1
    gamma: float = 1.0
    eps_trim: float = 0.01

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.methods:
            raise ValueError("at least one method is required")

    @classmethod
    def from_dict(cls, cfg: dict) -> "McConfig":
        cfg = dict(cfg)
        dgp = DgpConfig.from_dict(cfg.pop("dgp"))
        methods = tuple(MethodSpec.from_dict(m) for m in cfg.pop("methods"))
        return cls(dgp, methods, **cfg)

    def to_dict(self) -> dict:
        return {"dgp": self.dgp.to_dict(), "methods": [asdict(m) for m in self.methods], "reps": self.reps,
                "base_seed": self.base_seed, "jobs": self.jobs, "gamma": self.gamma, "eps_trim": self.eps_trim}


def _truth_for(spec: MethodSpec, effects: dict) -> float:
    if spec.estimand in ("datt", "naive"):
        return effects.get("DATT", float("nan"))
    if spec.estimand == "datt_g":
        return effects.get(f"DATT({spec.g})", float("nan"))
    if spec.estimand == "att":
        return effects.get("ATT", float("nan"))
    if spec.estimand == "satt" and spec.d == 0:
        return effects.get("SATT(0)", float("nan"))
    return float("nan")


def _run_method(spec: MethodSpec, sim: SimulatedPanel, models_cache: dict, inf):
    from .estimators import att_total, datt_level, datt_overall, naive_dr_did, satt_overall
    from .nuisance.fit import CellModels, LearnerConfig, spillover_fit

    cfg = LearnerConfig.from_dict(spec.learner)
    if spec.estimand == "naive":
        return naive_dr_did(sim.data, cfg, inf)
    key = json.dumps(cfg.to_dict(), sort_keys=True)
    if key not in models_cache:
        models_cache[key] = CellModels(sim.data, sim.G, cfg)
    models = models_cache[key]
    D, G = sim.data.D, sim.G.G
    if spec.estimand == "datt":
        return datt_overall(sim.data, G, models, inf)
    if spec.estimand == "datt_g":
        return datt_level(sim.data, G, spec.g, models.nuisance(spec.g), inf)
    levels = sorted(g for g in set(G[D == 1].tolist()) if g != 0)
    if spec.estimand == "satt":
        sf = {g: spillover_fit(models, spec.d, g) for g in levels}
        return satt_overall(sim.data, G, sf, spec.d, inf)
    if spec.estimand == "att":
        fits = {g: models.nuisance(g) for g in sorted(set(G[D == 1].tolist()))}
        sf = {g: spillover_fit(models, 0, g) for g in levels}
        return att_total(sim.data, G, fits, sf, inf)
    raise ValueError(f"unknown estimand {spec.estimand!r}")


def _replicate(args) -> list[dict]:
    from .estimators import InferenceConfig

    mc, r = args
    seed = mc.base_seed + r
    rows = []
    try:
        sim = simulate(replace(mc.dgp, seed=seed))
    except NetDidError as exc:
        return [{"rep": r, "seed": seed, "method": m.name, "error": f"simulation: {exc}"} for m in mc.methods]
    effects = potential_outcome_effects(sim)
    inf = InferenceConfig(gamma=mc.gamma, eps_trim=mc.eps_trim)
    cache: dict = {}
    for spec in mc.methods:
        truth = _truth_for(spec, effects)
        row = {"rep": r, "seed": seed, "method": spec.name, "truth": truth,
               "n_treated": int(sim.data.D.sum())}
        try:
            rep = _run_method(spec, sim, cache, inf)
        except (NetDidError, FloatingPointError, np.linalg.LinAlgError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row.update({
            "estimate": rep.estimate,
            "se_hac": rep.se_hac,
            "se_iid": rep.se_iid,
            "bandwidth": rep.bandwidth,
            "m": rep.m,
            "negative_hac": rep.se_hac is None,
            "hit_hac": None if rep.ci is None else bool(rep.ci[0] <= truth <= rep.ci[1]),
            "hit_iid": bool(rep.ci_iid[0] <= truth <= rep.ci_iid[1]),
            "trim_count": rep.trim_count,
            "clip_count": rep.clip_count,
        })
        rows.append(row)
    return rows


@dataclass(eq=False)
class McReport:
    config: dict
    rows: list
    aggregates: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "aggregates": self.aggregates, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    CSV_FIELDS = ("rep", "seed", "method", "estimate", "se_hac", "se_iid", "hit_hac", "hit_iid", "truth",
                  "bandwidth", "m", "n_treated", "trim_count", "clip_count", "error")

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in self.CSV_FIELDS})
        return buf.getvalue()

    def summary_table(self) -> str:
        """Whitespace-separated table (gnuplot friendly)."""
        cols = ("mean_estimate", "bias", "sd_estimate", "mean_se_hac", "mean_se_iid", "coverage_hac",
                "coverage_iid", "successes", "failures")
        lines = ["# method " + " ".join(cols)]
        for name, agg in self.aggregates.items():
            vals = []
            for c in cols:
                v = agg.get(c)
                vals.append("nan" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)))
            lines.append(f"{name} " + " ".join(vals))
        return "\n".join(lines) + "\n"


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _aggregate(rows: list, methods) -> dict:
    out = {}
    for m in methods:
        mine = [r for r in rows if r["method"] == m.name]
        ok = [r for r in mine if "error" not in r]
        est = [r["estimate"] for r in ok]
        hac_ok = [r for r in ok if not r["negative_hac"]]
        out[m.name] = {
            "estimand": m.estimand,
            "g": m.g,
            "replications": len(mine),
            "successes": len(ok),
            "failures": len(mine) - len(ok),
            "negative_hac": len(ok) - len(hac_ok),
            "mean_estimate": _mean(est),
            "mean_truth": _mean([r["truth"] for r in ok]),
            "bias": _mean([r["estimate"] - r["truth"] for r in ok]),
            "sd_estimate": float(np.std(est, ddof=1)) if len(est) > 1 else None,
            "mc_se": float(np.std(est, ddof=1) / math.sqrt(len(est))) if len(est) > 1 else None,
            "mean_se_hac": _mean([r["se_hac"] for r in hac_ok]),
            "mean_se_iid": _mean([r["se_iid"] for r in ok]),
            "coverage_hac": _mean([float(r["hit_hac"]) for r in hac_ok]),
            "coverage_iid": _mean([float(r["hit_iid"]) for r in ok]),
            "mean_treated": _mean([r["n_treated"] for r in mine if "n_treated" in r]),
            "errors": sorted({r["error"] for r in mine if "error" in r})[:5],
        }
    return out


def run_monte_carlo(mc: McConfig, progress=None) -> McReport:
    """Replication ``r`` simulates with seed ``base_seed + r``; failures are counted, not retried."""
    tasks = [(mc, r) for r in range(mc.reps)]
    results: list = [None] * mc.reps
    jobs = max(1, int(mc.jobs or 1))
    if jobs == 1:
        for r, t in enumerate(tasks):
            results[r] = _replicate(t)
            if progress:
                progress(r + 1, mc.reps)
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as ex:
            for r, res in enumerate(ex.map(_replicate, tasks)):
                results[r] = res
                if progress:
                    progress(r + 1, mc.reps)
    rows = [row for res in results for row in res]
    if all("error" in row for row in rows):
        raise EstimationError(f"all {mc.reps} replications failed; first error: {rows[0]['error']}")
    return McReport(mc.to_dict(), rows, _aggregate(rows, mc.methods))
