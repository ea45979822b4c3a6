import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from netdid.data import panel_from_arrays
from netdid.errors import ConvergenceError, EstimationError, OverlapError
from netdid.graph import build_from_edges
from netdid.nuisance import CellModels, LearnerConfig, NuisanceFit
from netdid.nuisance.features import base_columns, build_features, feature_count, polynomial_expand
from netdid.nuisance.fit import fit_nuisances, spillover_fit, within_cell_propensity
from netdid.nuisance.glm import fit_least_squares, fit_logistic, logistic_loss
from netdid.nuisance.gnn import (
    AGG_MEAN,
    AGG_PNA,
    GnnConfig,
    gnn_forward,
    gnn_train,
    init_params,
    loss_and_grad,
    masked_loss,
)

from conftest import erdos_renyi


# --------------------------------------------------------------------------- features


def test_feature_layout_path(path4):
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    B, names = base_columns(path4, X, L=2)
    assert names == ["x1", "nbr_x1", "ring2_x1", "degree"]
    np.testing.assert_allclose(B[:, 1], [2.0, 2.0, 3.0, 3.0])
    np.testing.assert_allclose(B[:, 2], [3.0, 4.0, 1.0, 2.0])
    np.testing.assert_allclose(B[:, 3], [1, 2, 2, 1])


def test_feature_isolated_node_means_are_zero():
    g = build_from_edges(3, [(0, 1)])
    B, _ = base_columns(g, np.array([5.0, 7.0, 9.0]), L=1)
    np.testing.assert_allclose(B[2], [9.0, 0.0, 0.0])


def test_polynomial_expand_order():
    B = np.array([[2.0, 3.0]])
    F, names = polynomial_expand(B, ["a", "b"], 2)
    assert names == ["1", "a", "b", "a*a", "a*b", "b*b"]
    np.testing.assert_allclose(F[0], [1, 2, 3, 4, 6, 9])


@pytest.mark.parametrize("p,L,k,net", [(1, 1, 1, True), (2, 1, 2, True), (2, 2, 3, True), (3, 1, 2, False)])
def test_feature_count(p, L, k, net):
    g = erdos_renyi(12, 0.3, 0)
    X = np.random.default_rng(0).normal(size=(12, p))
    d = panel_from_arrays(g, X, np.zeros(12), np.zeros(12), np.zeros(12))
    F = build_features(d, L, k, net)
    assert F.shape == (12, feature_count(p, L, k, net))


# --------------------------------------------------------------------------- linear sieve fits


def _logit_oracle(F, y, ridge):
    pen = np.full(F.shape[1], ridge)
    pen[np.all(F == 1.0, axis=0)] = 0.0

    def fun(w):
        f = F @ w
        return np.sum(np.logaddexp(0, f) - y * f) + 0.5 * np.sum(pen * w * w)

    def jac(w):
        return F.T @ (expit(F @ w) - y) + pen * w

    return minimize(fun, np.zeros(F.shape[1]), jac=jac, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000}).x


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1e-6, 1e-2, 1.0]))
def test_logistic_matches_generic_optimizer(seed, ridge):
    rng = np.random.default_rng(seed)
    n, q = 80, 4
    F = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))])
    y = (rng.random(n) < expit(F @ rng.normal(size=q) * 0.7)).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    fit = fit_logistic(F, y, ridge=ridge)
    assert fit.converged
    np.testing.assert_allclose(fit.weights, _logit_oracle(F, y, ridge), atol=1e-6)


def test_logistic_degenerate_labels():
    with pytest.raises(EstimationError, match="degenerate"):
        fit_logistic(np.ones((5, 1)), np.zeros(5))


def test_logistic_mask_restricts_rows():
    rng = np.random.default_rng(1)
    F = np.column_stack([np.ones(60), rng.normal(size=60)])
    y = (rng.random(60) < 0.5).astype(float)
    mask = np.arange(60) < 40
    a = fit_logistic(F, y, mask)
    b = fit_logistic(F[:40], y[:40])
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-10)


def test_logistic_loss_value():
    F = np.array([[1.0], [1.0]])
    assert logistic_loss(F, np.array([1.0, 0.0]), np.zeros(1)) == pytest.approx(2 * np.log(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_least_squares_matches_pinv(seed):
    rng = np.random.default_rng(seed)
    F = np.column_stack([np.ones(50), rng.normal(size=(50, 3))])
    y = rng.normal(size=50)
    fit = fit_least_squares(F, y, ridge=0.0)
    np.testing.assert_allclose(fit.weights, np.linalg.pinv(F) @ y, atol=1e-10)


def test_least_squares_ridge_normal_equations():
    rng = np.random.default_rng(2)
    F = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
    y = rng.normal(size=30)
    lam = 0.5
    P = np.diag([0.0, lam, lam])
    want = np.linalg.solve(F.T @ F + P, F.T @ y)
    np.testing.assert_allclose(fit_least_squares(F, y, ridge=lam).weights, want, atol=1e-10)


def test_least_squares_rank_deficient_without_ridge():
    F = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(EstimationError, match="rank"):
        fit_least_squares(F, np.arange(10.0), ridge=0.0)


# --------------------------------------------------------------------------- GNN


def _relu(z):
    return np.maximum(z, 0.0)


def gnn_loop_oracle(params, g, X):
    """Node-by-node forward pass written from the layer equations."""
    h = (np.asarray(X, float).reshape(g.n, -1) - params.x_shift) / params.x_scale
    for l in range(params.L):
        U, c, V, b = params.layer(l)
        msgs = [_relu(h[j] @ U + c) for j in range(g.n)]
        new = np.zeros((g.n, params.H))
        for i in range(g.n):
            nb = g.neighbors(i)
            parts = []
            for a in params.aggregators:
                if nb.size == 0:
                    parts.append(np.zeros(params.H))
                    continue
                M = np.array([msgs[j] for j in nb])
                parts.append({"mean": M.mean(axis=0), "max": M.max(axis=0), "sum": M.sum(axis=0)}[a])
            new[i] = _relu(np.concatenate([h[i]] + parts) @ V + b)
        h = new
    w, w0 = params.head
    return params.out_shift + params.out_scale * (h @ w + w0[0])


def _random_params(p, L, H, aggs, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    params = init_params(p, GnnConfig(L=L, H=H, aggregators=aggs), rng)
    return params.with_theta(rng.normal(scale=scale, size=params.size))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 0.6), st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 5),
       st.sampled_from([AGG_PNA, AGG_MEAN, ("max",), ("sum", "mean")]))
def test_forward_matches_loop_oracle(n, pr, seed, L, H, aggs):
    g = erdos_renyi(n, pr, seed)
    X = np.random.default_rng(seed + 1).normal(size=(n, 2))
    params = _random_params(2, L, H, aggs, seed)
    np.testing.assert_allclose(gnn_forward(params, g, X), gnn_loop_oracle(params, g, X), rtol=1e-10, atol=1e-10)


def test_forward_zero_params_gives_zero(triangle):
    params = _random_params(1, 2, 3, AGG_PNA, 0).with_theta(np.zeros(_random_params(1, 2, 3, AGG_PNA, 0).size))
    np.testing.assert_array_equal(gnn_forward(params, triangle, np.ones(3)), 0.0)


def test_forward_empty_graph_is_per_node():
    g = build_from_edges(4, [])
    X = np.arange(4.0)[:, None]
    params = _random_params(1, 2, 4, AGG_PNA, 3)
    f = gnn_forward(params, g, X)
    for i in range(4):
        single = gnn_forward(params, build_from_edges(1, []), X[i : i + 1])
        assert f[i] == pytest.approx(single[0], abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10_000))
def test_forward_permutation_equivariant(n, seed):
    g = erdos_renyi(n, 0.3, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    e = np.array([(inv[i], inv[j]) for i, j in zip(*np.nonzero(np.triu(g.adjacency.toarray(), 1)))]).reshape(-1, 2)
    gp = build_from_edges(n, e)
    params = _random_params(2, 2, 4, AGG_PNA, seed)
    np.testing.assert_allclose(gnn_forward(params, gp, X[perm]), gnn_forward(params, g, X)[perm], atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 15), st.integers(0, 10_000), st.integers(1, 3))
def test_forward_is_L_local(n, seed, L):
    g = erdos_renyi(n, 0.25, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 1))
    params = _random_params(1, L, 3, AGG_PNA, seed)
    from netdid.graph import bfs_distances

    i = int(rng.integers(0, n))
    far = np.flatnonzero(bfs_distances(g, i) > L)
    X2 = X.copy()
    X2[far] = rng.normal(size=(far.size, 1)) * 10
    assert gnn_forward(params, g, X2)[i] == pytest.approx(gnn_forward(params, g, X)[i], abs=1e-10)


def _fd_check(params, g, X, y, kind, mask):
    _, gp = loss_and_grad(params, g, X, kind, y, mask)
    h = 1e-6
    num = np.zeros(params.size)
    for k in range(params.size):
        tp = params.theta.copy()
        tp[k] += h
        tm = params.theta.copy()
        tm[k] -= h
        lp = masked_loss(gnn_forward(params.with_theta(tp), g, X), y, mask, kind)
        lm = masked_loss(gnn_forward(params.with_theta(tm), g, X), y, mask, kind)
        num[k] = (lp - lm) / (2 * h)
    return gp.theta, num


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 100_000), st.integers(1, 3), st.integers(1, 4),
       st.sampled_from([AGG_PNA, AGG_MEAN]), st.sampled_from(["logistic", "squared"]), st.booleans())
def test_gradient_matches_finite_differences(n, seed, L, H, aggs, kind, use_mask):
    g = erdos_renyi(n, 0.4, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = rng.integers(0, 2, n).astype(float) if kind == "logistic" else rng.normal(size=n)
    mask = rng.random(n) < 0.6 if use_mask else None
    params = _random_params(2, L, H, aggs, seed, scale=0.7)
    ana, num = _fd_check(params, g, X, y, kind, mask)
    # relu kinks and max ties can sit within h of a coordinate; allow a handful of such entries
    bad = ~np.isclose(ana, num, rtol=1e-4, atol=1e-6)
    assert bad.sum() <= max(1, params.size // 50)


def test_gradient_hand_chain_rule_single_node():
    # one node, no neighbors, one layer, H=1, mean aggregator: f = w * relu(x v1 + b) + w0
    g = build_from_edges(1, [])
    params = init_params(1, GnnConfig(L=1, H=1, aggregators=AGG_MEAN), np.random.default_rng(0))
    theta = np.array([0.3, 0.1, 2.0, -0.5, 0.25, 1.5, 0.2])  # U, c, V(2x1), b, w, w0
    params = params.with_theta(theta)
    x, y = 1.2, 0.0
    z = x * 2.0 + 0.0 * -0.5 + 0.25
    f = 1.5 * z + 0.2
    assert gnn_forward(params, g, np.array([[x]]))[0] == pytest.approx(f)
    _, gp = loss_and_grad(params, g, np.array([[x]]), "squared", np.array([y]))
    r = f - y
    want = np.array([0.0, 0.0, r * 1.5 * x, 0.0, r * 1.5, r * z, r])
    np.testing.assert_allclose(gp.theta, want, atol=1e-12)


def test_training_is_deterministic_and_decreases_loss():
    g = erdos_renyi(60, 0.08, 4)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 2))
    y = (rng.random(60) < expit(X[:, 0])).astype(float)
    cfg = GnnConfig(L=2, H=4, epochs=150, lr=0.03, seed=7)
    p1, d1 = gnn_train(g, X, y, None, "logistic", cfg)
    p2, _ = gnn_train(g, X, y, None, "logistic", cfg)
    np.testing.assert_array_equal(p1.theta, p2.theta)
    assert d1["best_loss"] < d1["first_loss"]


def test_training_gd_option_runs():
    g = erdos_renyi(40, 0.1, 5)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 1))
    y = X[:, 0] + rng.normal(scale=0.1, size=40)
    _, diag = gnn_train(g, X, y, None, "squared", GnnConfig(L=1, H=3, epochs=100, lr=0.1, optimizer="gd"))
    assert diag["optimizer"] == "gd" and diag["best_loss"] < diag["first_loss"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_nan_raises():
    g = erdos_renyi(30, 0.1, 6)
    X = np.random.default_rng(6).normal(size=(30, 1)) * 1e6
    y = np.random.default_rng(7).normal(size=30) * 1e300
    with pytest.raises(ConvergenceError):
        gnn_train(g, X, y, None, "squared", GnnConfig(L=1, H=3, epochs=50, lr=1e6))


def test_training_empty_mask():
    g = erdos_renyi(10, 0.2, 0)
    with pytest.raises(EstimationError):
        gnn_train(g, np.zeros((10, 1)), np.zeros(10), np.zeros(10, bool), "squared", GnnConfig())


def test_gnn_config_validation():
    with pytest.raises(ValueError):
        GnnConfig(L=4)
    with pytest.raises(ValueError):
        GnnConfig(H=9)
    with pytest.raises(ValueError):
        GnnConfig(optimizer="sgd")


# --------------------------------------------------------------------------- cell fits


def _panel(n=600, seed=0):
    g = erdos_renyi(n, 4.0 / n, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 1))
    D = (rng.random(n) < expit(0.8 * X[:, 0])).astype(int)
    Y0 = rng.normal(size=n)
    Y1 = Y0 + X[:, 0] + D + rng.normal(scale=0.5, size=n)
    return panel_from_arrays(g, X, D, Y0, Y1)


def test_within_cell_propensity():
    np.testing.assert_allclose(within_cell_propensity([0.2, 0.1], [0.2, 0.3]), [0.5, 0.25])


def test_nuisance_fit_from_arrays_clips():
    fit = NuisanceFit.from_arrays(0, [0.001, 0.3], [0.5, 0.3], [0.0, 0.0], eps_clip=0.01)
    np.testing.assert_allclose(fit.e_raw, [0.001 / 0.501, 0.5])
    assert fit.e[0] == 0.01 and fit.clip_count == 1


def test_nglm_propensity_calibrated():
    d = _panel(3000, 1)
    G = np.zeros(d.n, dtype=int)
    cfg = LearnerConfig(learner="nglm", L=1, poly_degree=1)
    models = CellModels(d, G, cfg, network=False)
    p = models.propensity(1, 0)
    truth = expit(0.8 * d.X[:, 0])
    assert np.mean(np.abs(p - truth)) < 0.03
    fit = models.nuisance(0)
    np.testing.assert_allclose(fit.e_raw, p / (p + models.propensity(0, 0)))


def test_fit_nuisances_outcome_on_controls():
    d = _panel(800, 2)
    G = np.zeros(d.n, dtype=int)
    fit = fit_nuisances(d, G, 0, LearnerConfig(learner="nglm", poly_degree=1))
    # control trend is x1 exactly in expectation
    ctrl = d.D == 0
    slope = np.polyfit(d.X[ctrl, 0], fit.dmu[ctrl], 1)[0]
    assert slope == pytest.approx(1.0, abs=0.15)


def test_fit_nuisances_empty_cell_raises():
    d = _panel(200, 3)
    G = np.where(d.D == 1, 1, 0)  # no treated unit at level 0
    with pytest.raises(OverlapError):
        fit_nuisances(d, G, 0, LearnerConfig())


def test_gnn_learner_cell_fit_runs():
    d = _panel(200, 4)
    G = np.zeros(d.n, dtype=int)
    fit = fit_nuisances(d, G, 0, LearnerConfig(learner="gnn", L=1, H=3, epochs=30))
    assert fit.e.shape == (200,) and np.all((fit.e >= 0.01) & (fit.e <= 0.99))


def test_spillover_fit_ratio():
    d = _panel(500, 5)
    G = (np.random.default_rng(0).random(d.n) < 0.5).astype(int)
    models = CellModels(d, G, LearnerConfig(poly_degree=1))
    sf = spillover_fit(models, 0, 1)
    odds = models.propensity(0, 1) / models.propensity(0, 0)
    raw = sf.e_raw / (1 - sf.e_raw)
    np.testing.assert_allclose(raw, odds, rtol=1e-10)
    with pytest.raises(ValueError):
        spillover_fit(models, 0, 0)


def test_learner_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(learner="forest")
    with pytest.raises(ValueError):
        LearnerConfig.from_dict({"bogus": 1})
    assert LearnerConfig.from_dict(LearnerConfig().to_dict()) == LearnerConfig()
