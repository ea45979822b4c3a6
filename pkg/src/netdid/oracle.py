"""Population bias of covariate-only DID under interference, on discrete tables.

A ``DiscreteSpec`` lists, for each covariate cell x, the exposure distribution
P(G | D, x), an optional neighborhood-covariate distribution P(U | D, G, x)
and the mean outcome change E[dY | D, G, U, x]. The closed-form biases below
are checked against ``direct_bias``, which builds tau_obs and tau_datt from
their definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .simulate import potential_outcome_att

__all__ = [
    "DiscreteSpec",
    "random_spec",
    "prop1_bias",
    "prop2_bias",
    "direct_bias",
    "tau_obs",
    "tau_datt",
    "potential_outcome_att",
]

_TOL = 1e-9


def _check_simplex(p: np.ndarray, axis: int, name: str):
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if not np.allclose(p.sum(axis=axis), 1.0, atol=_TOL, rtol=0):
        raise ValueError(f"{name} does not sum to 1 over its support")


@dataclass(frozen=True, eq=False)
class DiscreteSpec:
    """Discrete population tables.

    Array axes: ``p_g[d, g, x]``, ``p_u[d, g, u, x]``, ``mean[d, g, u, x]``.
    Without U, ``u_support`` is None and the u axis has length one.
    ``weights[x]`` is the share of analysis units with covariate value x.
    """

    x_support: np.ndarray
    g_support: np.ndarray
    weights: np.ndarray
    p_g: np.ndarray
    mean: np.ndarray
    u_support: np.ndarray | None = None
    p_u: np.ndarray | None = None

    def __post_init__(self):
        xs = np.asarray(self.x_support, dtype=float)
        gs = np.asarray(self.g_support, dtype=float)
        nx, ng = xs.size, gs.size
        if nx == 0 or ng == 0:
            raise ValueError("supports must be non-empty")
        if np.unique(gs).size != ng or np.unique(xs).size != nx:
            raise ValueError("supports must not repeat values")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (nx,):
            raise ValueError(f"weights must have shape ({nx},), got {w.shape}")
        _check_simplex(w, 0, "weights")
        pg = np.asarray(self.p_g, dtype=float)
        if pg.shape != (2, ng, nx):
            raise ValueError(f"p_g must have shape (2, {ng}, {nx}), got {pg.shape}")
        _check_simplex(pg, 1, "p_g")
        if self.u_support is None:
            if self.p_u is not None:
                raise ValueError("p_u given without u_support")
            us, nu = None, 1
            pu = np.ones((2, ng, 1, nx))
        else:
            us = np.asarray(self.u_support, dtype=float)
            nu = us.size
            if nu == 0 or np.unique(us).size != nu:
                raise ValueError("u_support must be non-empty without repeats")
            if self.p_u is None:
                raise ValueError("u_support given without p_u")
            pu = np.asarray(self.p_u, dtype=float)
            if pu.shape != (2, ng, nu, nx):
                raise ValueError(f"p_u must have shape (2, {ng}, {nu}, {nx}), got {pu.shape}")
            _check_simplex(pu, 2, "p_u")
        m = np.asarray(self.mean, dtype=float)
        if m.shape == (2, ng, nx) and us is None:
            m = m[:, :, None, :]
        if m.shape != (2, ng, nu, nx):
            raise ValueError(f"mean must have shape (2, {ng}, {nu}, {nx}), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("mean table has non-finite entries")
        for name, v in (("x_support", xs), ("g_support", gs), ("weights", w), ("p_g", pg), ("mean", m)):
            object.__setattr__(self, name, v)
        object.__setattr__(self, "u_support", us)
        object.__setattr__(self, "p_u", pu if us is not None else None)
        object.__setattr__(self, "_pu", pu)

    @property
    def has_u(self) -> bool:
        return self.u_support is not None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.g_support.size, self._pu.shape[2], self.x_support.size

    def joint(self) -> np.ndarray:
        """P(G=g, U=u | D=d, x) as ``[d, g, u, x]``."""
        return self.p_g[:, :, None, :] * self._pu

    def to_dict(self) -> dict:
        out = {
            "x_support": self.x_support.tolist(),
            "g_support": self.g_support.tolist(),
            "weights": self.weights.tolist(),
            "p_g": self.p_g.tolist(),
        }
        if self.has_u:
            out["u_support"] = self.u_support.tolist()
            out["p_u"] = self.p_u.tolist()
            out["mean"] = self.mean.tolist()
        else:
            out["mean"] = self.mean[:, :, 0, :].tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteSpec":
        return cls(
            x_support=np.asarray(d["x_support"], dtype=float),
            g_support=np.asarray(d["g_support"], dtype=float),
            weights=np.asarray(d["weights"], dtype=float),
            p_g=np.asarray(d["p_g"], dtype=float),
            mean=np.asarray(d["mean"], dtype=float),
            u_support=None if d.get("u_support") is None else np.asarray(d["u_support"], dtype=float),
            p_u=None if d.get("p_u") is None else np.asarray(d["p_u"], dtype=float),
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscreteSpec":
        return cls.from_dict(json.loads(text))


def random_spec(rng, ng: int = 3, nx: int = 4, nu: int | None = None,
                independent: bool = False, alpha: float = 1.0) -> DiscreteSpec:
    """Dirichlet probability tables and uniform(-1, 1) mean tables.

    With ``independent`` the exposure law does not depend on D, and U does not
    depend on G given (D, x), which is the setting of the simplified
    neighborhood-covariate bias.
    """
    rng = np.random.default_rng(rng)
    w = rng.dirichlet(np.full(nx, alpha))
    if independent:
        pg1 = rng.dirichlet(np.full(ng, alpha), size=nx).T
        pg = np.stack([pg1, pg1])
    else:
        pg = np.stack([rng.dirichlet(np.full(ng, alpha), size=nx).T for _ in range(2)])
    if nu is None:
        pu, us = None, None
        mean = rng.uniform(-1, 1, size=(2, ng, nx))
    else:
        us = np.arange(nu, dtype=float)
        if independent:
            base = np.stack([rng.dirichlet(np.full(nu, alpha), size=nx).T for _ in range(2)])
            pu = np.repeat(base[:, None, :, :], ng, axis=1)
        else:
            pu = rng.dirichlet(np.full(nu, alpha), size=(2, ng, nx)).transpose(0, 1, 3, 2)
        mean = rng.uniform(-1, 1, size=(2, ng, nu, nx))
    return DiscreteSpec(np.arange(nx, dtype=float), np.arange(ng, dtype=float), w, pg, mean, us, pu)


def _ref_index(support: np.ndarray, ref) -> int:
    if ref is None:
        return int(np.argmin(support))
    hit = np.flatnonzero(support == ref)
    if hit.size != 1:
        raise ValueError(f"reference level {ref} is not in the support")
    return int(hit[0])


def prop1_bias(spec: DiscreteSpec, ref_g=None) -> float:
    """Bias of tau_obs for tau_datt from exposure imbalance between D groups.

    sum_g [m0(g) - m0(g')] [P(g | D=1, x) - P(g | D=0, x)], averaged over x.
    The reference g' defaults to the smallest exposure level; any choice gives
    the same value because the bracketed weights sum to zero over g.
    """
    if spec.has_u:
        raise ValueError("prop1_bias takes a spec without U; use prop2_bias")
    k = _ref_index(spec.g_support, ref_g)
    m0 = spec.mean[0, :, 0, :]
    contrast = m0 - m0[k][None, :]
    dp = spec.p_g[1] - spec.p_g[0]
    return float(np.sum(spec.weights * np.sum(contrast * dp, axis=0)))


def prop2_bias(spec: DiscreteSpec, assume_dg_independent: bool = False, ref_g=None, ref_u=None) -> float:
    """Bias with a neighborhood covariate U entering the trends.

    General form: sum_{g,u} [m0(g,u) - m0(g',u')] [P(u|1,g)P(g|1) - P(u|0,g)P(g|0)].
    With ``assume_dg_independent`` the G-marginal form
    sum_u [m0(u) - m0(u')] [P(u|1) - P(u|0)] is returned, where
    m0(u) = E[dY | D=0, U=u, x]. The two agree exactly when G is independent
    of (D, U) given x; otherwise the simplified form is only an approximation.
    """
    if not spec.has_u:
        raise ValueError("prop2_bias needs a spec with U")
    ku = _ref_index(spec.u_support, ref_u)
    J = spec.joint()
    m0 = spec.mean[0]
    if not assume_dg_independent:
        kg = _ref_index(spec.g_support, ref_g)
        contrast = m0 - m0[kg, ku][None, None, :]
        dj = J[1] - J[0]
        return float(np.sum(spec.weights * np.sum(contrast * dj, axis=(0, 1))))
    pu = J.sum(axis=1)  # P(u | d, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        m0u = np.sum(m0 * J[0], axis=0) / pu[0]
    m0u = np.where(pu[0] > 0, m0u, 0.0)
    contrast = m0u - m0u[ku][None, :]
    return float(np.sum(spec.weights * np.sum(contrast * (pu[1] - pu[0]), axis=0)))


def tau_obs(spec: DiscreteSpec) -> float:
    """Unit average of E[dY | D=1, x] - E[dY | D=0, x], summed cell by cell."""
    ng, nu, nx = spec.shape
    total = 0.0
    for x in range(nx):
        cond = [0.0, 0.0]
        for d in (0, 1):
            for g in range(ng):
                for u in range(nu):
                    pr = spec.p_g[d, g, x] * (spec._pu[d, g, u, x])
                    cond[d] += pr * spec.mean[d, g, u, x]
        total += spec.weights[x] * (cond[1] - cond[0])
    return total


def tau_datt(spec: DiscreteSpec) -> float:
    """Direct effect on the treated at their realized exposure and U.

    Under parallel trends given (G, U, x) the treated counterfactual change is
    the control mean in the same cell.
    """
    ng, nu, nx = spec.shape
    total = 0.0
    for x in range(nx):
        for g in range(ng):
            for u in range(nu):
                pr = spec.p_g[1, g, x] * spec._pu[1, g, u, x]
                total += spec.weights[x] * pr * (spec.mean[1, g, u, x] - spec.mean[0, g, u, x])
    return total


def direct_bias(spec: DiscreteSpec) -> float:
    return tau_obs(spec) - tau_datt(spec)
