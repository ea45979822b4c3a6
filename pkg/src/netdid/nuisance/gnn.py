"""A small message-passing network with a hand-written backward pass.

Layer ``l`` maps embeddings ``h`` (n x k) to (n x H):

    m_j  = act(h_j U + c)                       message from node j
    a_i  = concat(agg_1, ..., agg_A) over j in N(i) of m_j
    h_i' = act([h_i, a_i] V + b)

Aggregators are mean, max and sum (or mean only). Over an empty neighborhood
every aggregator returns 0. The head is linear: ``f = out_shift +
out_scale * (h^L w + w0)``. Inputs are standardized with stored shift/scale
before the first layer; these and the output shift/scale are not trained.

All trainable weights live in one flat vector ``theta`` so the optimizer and
finite-difference checks can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from ..errors import ConvergenceError, EstimationError
from ..graph import Graph

__all__ = [
    "GnnConfig",
    "GnnParams",
    "init_params",
    "gnn_forward",
    "gnn_backward",
    "loss_and_grad",
    "gnn_train",
    "masked_loss",
    "AGG_PNA",
    "AGG_MEAN",
]

AGG_PNA = ("mean", "max", "sum")
AGG_MEAN = ("mean",)


@dataclass(frozen=True)
class GnnConfig:
    L: int = 2
    H: int = 5
    lr: float = 0.03
    epochs: int = 300
    seed: int = 0
    aggregators: tuple[str, ...] = AGG_PNA
    patience: int = 50
    activation: str = "relu"
    optimizer: str = "adam"  # or "gd": fixed step, halved whenever the loss goes up

    def __post_init__(self):
        if self.L not in (1, 2, 3):
            raise ValueError(f"GNN layer count must be 1, 2 or 3, got {self.L}")
        if not 1 <= self.H <= 8:
            raise ValueError(f"GNN hidden width must be in 1..8, got {self.H}")
        if not set(self.aggregators) <= set(AGG_PNA) or not self.aggregators:
            raise ValueError(f"unknown aggregators {self.aggregators}")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")


def _layout(p: int, H: int, L: int, A: int):
    shapes = []
    for l in range(L):
        k = p if l == 0 else H
        shapes += [(k, H), (H,), (k + A * H, H), (H,)]
    shapes += [(H,), (1,)]
    offsets = np.cumsum([0] + [int(np.prod(s)) for s in shapes])
    return shapes, offsets


@dataclass(frozen=True, eq=False)
class GnnParams:
    theta: np.ndarray
    p: int
    H: int
    L: int
    aggregators: tuple[str, ...] = AGG_PNA
    activation: str = "relu"
    x_shift: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    out_shift: float = 0.0
    out_scale: float = 1.0
    _views: list = field(default=None, repr=False)

    def __post_init__(self):
        shapes, off = _layout(self.p, self.H, self.L, len(self.aggregators))
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (off[-1],):
            raise ValueError(f"parameter vector has length {theta.size}, layout needs {off[-1]}")
        object.__setattr__(self, "theta", theta)
        views = [theta[off[k] : off[k + 1]].reshape(s) for k, s in enumerate(shapes)]
        object.__setattr__(self, "_views", views)
        if self.x_shift is None:
            object.__setattr__(self, "x_shift", np.zeros(self.p))
        if self.x_scale is None:
            object.__setattr__(self, "x_scale", np.ones(self.p))

    @property
    def size(self) -> int:
        return self.theta.size

    def layer(self, l: int):
        """``(U, c, V, b)`` for layer ``l`` as views into ``theta``."""
        return tuple(self._views[4 * l : 4 * l + 4])

    @property
    def head(self):
        return self._views[-2], self._views[-1]

    def with_theta(self, theta: np.ndarray) -> "GnnParams":
        return replace(self, theta=np.array(theta, dtype=float), _views=None)


def init_params(p: int, cfg: GnnConfig, rng: np.random.Generator, x_shift=None, x_scale=None,
                out_shift: float = 0.0, out_scale: float = 1.0) -> GnnParams:
    """Scaled-uniform (Glorot) weights, zero biases."""
    shapes, off = _layout(p, cfg.H, cfg.L, len(cfg.aggregators))
    theta = np.zeros(off[-1])
    for k, s in enumerate(shapes):
        if len(s) == 2:
            a = np.sqrt(6.0 / (s[0] + s[1]))
            theta[off[k] : off[k + 1]] = rng.uniform(-a, a, size=s[0] * s[1])
    # small head so the first prediction sits near the output shift
    a = 0.1 * np.sqrt(3.0 / cfg.H)
    theta[off[-3] : off[-2]] = rng.uniform(-a, a, size=cfg.H)
    return GnnParams(theta, p, cfg.H, cfg.L, tuple(cfg.aggregators), cfg.activation,
                     x_shift, x_scale, out_shift, out_scale)


# --------------------------------------------------------------------------- internals


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _act_grad(z, kind):
    return (z > 0).astype(float) if kind == "relu" else np.ones_like(z)


class _Agg:
    """Neighborhood aggregation operators for one graph, reused across layers and epochs."""

    def __init__(self, g: Graph):
        self.n = g.n
        self.indptr = g.indptr
        self.indices = g.indices
        self.deg = g.degrees
        self.A = g.adjacency
        self.W = g.row_normalized.tocsr()
        self.Wt = self.W.T.tocsr()
        self.nonempty = np.flatnonzero(self.deg > 0)
        self.starts = self.indptr[self.nonempty]
        # padded neighbor table for the max aggregator when degrees are not too skewed
        dmax = int(self.deg.max()) if self.n else 0
        self.pad = None
        if self.indices.size and dmax * self.n <= 4 * self.indices.size + 1024:
            pad = np.full((self.n, dmax), self.n, dtype=np.int64)
            slot = np.arange(self.indices.size) - np.repeat(self.indptr[:-1], self.deg)
            pad[np.repeat(np.arange(self.n), self.deg), slot] = self.indices
            self.pad = pad

    def _max_padded(self, M, cache):
        ext = np.vstack([M, np.full((1, M.shape[1]), -np.inf)])
        src = np.repeat(self.pad[:, :1], M.shape[1], axis=1)
        mx = ext[self.pad[:, 0]]
        for s in range(1, self.pad.shape[1]):
            col = self.pad[:, s]
            v = ext[col]
            better = v > mx  # strict: keeps the first maximizer
            mx = np.where(better, v, mx)
            src = np.where(better, col[:, None], src)
        mx[self.deg == 0] = 0.0
        cache["argmax_src"] = src[self.nonempty]
        return mx

    def forward(self, M, aggs):
        out, cache = [], {}
        for a in aggs:
            if a == "mean":
                out.append(self.W @ M)
            elif a == "sum":
                out.append(self.A @ M)
            elif self.pad is not None:
                out.append(self._max_padded(M, cache))
            else:
                mx = np.zeros_like(M)
                if self.indices.size:
                    nb = M[self.indices]
                    mx[self.nonempty] = np.maximum.reduceat(nb, self.starts, axis=0)
                    # first argmax per (node, channel), as an index into self.indices
                    eq = nb == np.repeat(mx, self.deg, axis=0)
                    pos = np.where(eq, np.arange(nb.shape[0])[:, None], nb.shape[0])
                    first = np.minimum.reduceat(pos, self.starts, axis=0)
                    cache["argmax_src"] = self.indices[first]
                out.append(mx)
        return out, cache

    def backward(self, grads, aggs, cache, H):
        dM = np.zeros((self.n, H))
        for a, gA in zip(aggs, grads):
            if a == "mean":
                dM += self.Wt @ gA
            elif a == "sum":
                dM += self.A @ gA  # symmetric
            elif "argmax_src" in cache:
                src = cache["argmax_src"]
                flat = (src * H + np.arange(H)[None, :]).ravel()
                dM += np.bincount(flat, weights=gA[self.nonempty].ravel(), minlength=self.n * H).reshape(self.n, H)
        return dM


def _check_inputs(params: GnnParams, g: Graph, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != (g.n, params.p):
        raise ValueError(f"covariates have shape {X.shape}, expected ({g.n}, {params.p})")
    return X


def _forward(params: GnnParams, agg: _Agg, X: np.ndarray, keep: bool):
    kind = params.activation
    h = (X - params.x_shift) / params.x_scale
    tape = []
    for l in range(params.L):
        U, c, V, b = params.layer(l)
        zm = h @ U + c
        M = _act(zm, kind)
        parts, acache = agg.forward(M, params.aggregators)
        cat = np.hstack([h] + parts)
        z = cat @ V + b
        h_new = _act(z, kind)
        if keep:
            tape.append((h, zm, acache, cat, z))
        h = h_new
    w, w0 = params.head
    f = params.out_shift + params.out_scale * (h @ w + w0[0])
    return f, h, tape


def gnn_forward(params: GnnParams, g: Graph, X, agg: _Agg | None = None) -> np.ndarray:
    """Pre-link scores for every node."""
    X = _check_inputs(params, g, X)
    f, _, _ = _forward(params, agg or _Agg(g), X, keep=False)
    return f


def _loss_terms(f, y, kind):
    if kind == "logistic":
        return np.logaddexp(0.0, f) - y * f, expit(f) - y
    if kind == "squared":
        r = f - y
        return 0.5 * r * r, r
    raise ValueError(f"unknown loss {kind!r}; expected 'logistic' or 'squared'")


def _mask_weights(mask, n):
    if mask is None:
        return np.ones(n)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return mask.astype(float)
    if mask.dtype.kind == "f":
        if mask.shape != (n,):
            raise ValueError("float masks are per-node weights and need one entry per node")
        return mask
    w = np.zeros(n)
    w[mask.astype(np.int64)] = 1.0
    return w


def masked_loss(f, labels, mask, kind) -> float:
    ell, _ = _loss_terms(f, np.asarray(labels, dtype=float), kind)
    return float(np.sum(ell * _mask_weights(mask, len(f))))


def loss_and_grad(params: GnnParams, g: Graph, X, loss_kind: str, labels, mask=None,
                  agg: _Agg | None = None) -> tuple[float, GnnParams]:
    """Total masked loss and its exact gradient with respect to ``theta``."""
    X = _check_inputs(params, g, X)
    agg = agg or _Agg(g)
    kind = params.activation
    f, hL, tape = _forward(params, agg, X, keep=True)
    y = np.asarray(labels, dtype=float)
    mw = _mask_weights(mask, g.n)
    ell, dl = _loss_terms(f, y, loss_kind)
    loss = float(np.sum(ell * mw))
    df = dl * mw * params.out_scale

    grad = np.zeros_like(params.theta)
    gparams = params.with_theta(grad)
    w, _ = params.head
    gw, gw0 = gparams.head
    gw[:] = hL.T @ df
    gw0[0] = df.sum()
    dh = np.outer(df, w)
    A = len(params.aggregators)
    for l in reversed(range(params.L)):
        U, c, V, b = params.layer(l)
        gU, gc, gV, gb = gparams.layer(l)
        h, zm, acache, cat, z = tape[l]
        dz = dh * _act_grad(z, kind)
        gV[:] = cat.T @ dz
        gb[:] = dz.sum(axis=0)
        dcat = dz @ V.T
        k = h.shape[1]
        dh_in = dcat[:, :k]
        H = params.H
        dparts = [dcat[:, k + a * H : k + (a + 1) * H] for a in range(A)]
        dM = agg.backward(dparts, params.aggregators, acache, H)
        dzm = dM * _act_grad(zm, kind)
        gU[:] = h.T @ dzm
        gc[:] = dzm.sum(axis=0)
        dh = dh_in + dzm @ U.T
    return loss, gparams


def gnn_backward(params: GnnParams, g: Graph, X, loss_kind: str, labels, mask=None) -> GnnParams:
    return loss_and_grad(params, g, X, loss_kind, labels, mask)[1]


def _standardize_inputs(X, rows):
    Xr = X[rows] if rows.size else X
    shift = Xr.mean(axis=0)
    scale = Xr.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return shift, scale


def _output_scaling(y, rows, loss_kind):
    yr = y[rows]
    if loss_kind == "logistic":
        p = np.clip(yr.mean(), 1e-3, 1 - 1e-3)
        return float(np.log(p / (1 - p))), 1.0
    sd = float(yr.std())
    return float(yr.mean()), sd if sd > 1e-12 else 1.0


def gnn_train(g: Graph, X, labels, mask, loss_kind: str, cfg: GnnConfig) -> tuple[GnnParams, dict]:
    """Full-batch training on the masked mean loss; returns the best parameters seen.

    Adam by default. ``optimizer="gd"`` takes plain gradient steps and halves
    the step size (restarting from the best point) whenever the loss rises.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float)
    mw = _mask_weights(mask, g.n)
    rows = np.flatnonzero(mw > 0)
    if rows.size == 0:
        raise EstimationError("GNN training mask selects no rows")
    rng = np.random.default_rng(cfg.seed)
    xs, xc = _standardize_inputs(X, np.arange(g.n))
    os_, oc = _output_scaling(y, rows, loss_kind)
    params = init_params(X.shape[1], cfg, rng, xs, xc, os_, oc)
    agg = _Agg(g)
    theta = params.theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = cfg.lr
    nrows = float(rows.size)
    best_loss, best_theta, best_epoch = np.inf, theta.copy(), 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        cur = params.with_theta(theta)
        loss, gp = loss_and_grad(cur, g, X, loss_kind, y, mw, agg)
        if not np.isfinite(loss) or not np.all(np.isfinite(gp.theta)):
            raise ConvergenceError(
                f"GNN training produced a non-finite loss at epoch {epoch} "
                f"(last finite mean loss {best_loss:.6g}, lr={cfg.lr}, H={cfg.H}, L={cfg.L})"
            )
        history.append(loss / nrows)
        if loss < best_loss * (1 - 1e-7):
            best_loss, best_theta, best_epoch = loss, theta.copy(), epoch
        elif epoch - best_epoch >= cfg.patience:
            break
        grad = gp.theta / nrows
        if cfg.optimizer == "gd":
            if loss > best_loss:
                step *= 0.5
                theta = best_theta.copy()
                continue
            theta = theta - step * grad
            continue
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mh = m / (1 - b1**epoch)
        vh = v / (1 - b2**epoch)
        theta = theta - cfg.lr * mh / (np.sqrt(vh) + eps)
    final = params.with_theta(best_theta)
    diag = {"epochs_run": len(history), "best_epoch": best_epoch, "best_loss": best_loss / nrows,
            "first_loss": history[0], "rows": int(rows.size), "optimizer": cfg.optimizer}
    if cfg.optimizer == "gd":
        diag["final_step"] = step
    return final, diag
