import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from wgnn.errors import (
    ConditioningWarning,
    EmptyInputError,
    InputError,
    ScaleError,
    WeightError,
    ZeroMetricError,
)
from wgnn.ot import (
    GroundMetric,
    IBPConfig,
    eps_schedule,
    entropic_w2,
    exact_fixed_support_barycenter,
    exact_w2_lp,
    gibbs_kernel,
    grid_search_barycenter,
    ground_metric,
    ibp_barycenter,
    ibp_barycenters,
    total_variation,
)

ORACLE = json.loads((Path(__file__).parent / "data" / "ot_oracle.json").read_text())
MIDPOINT_D = np.array([[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]])


def test_ground_metric_examples():
    np.testing.assert_array_equal(ground_metric([2, 1], normalize=False).D, [[0, 3], [3, 0]])
    m = ground_metric([3, 2, 1], normalize=False)
    np.testing.assert_array_equal(m.D, [[0, 5, 8], [5, 0, 3], [8, 3, 0]])
    assert m.scale == 1.0
    n = ground_metric([3, 2, 1])
    np.testing.assert_allclose(n.D, m.D / 8)
    assert n.scale == 8


def test_ground_metric_zero_metric():
    with pytest.raises(ZeroMetricError):
        ground_metric([2, 2, 2])
    assert np.all(ground_metric([2, 2], normalize=False).D == 0)


def test_ground_metric_rejects_bad_input():
    with pytest.raises(InputError):
        ground_metric([1.0, -1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 50, allow_nan=False), min_size=2, max_size=16))
def test_ground_metric_is_a_metric(lam):
    lam = sorted(lam, reverse=True)
    D = ground_metric(lam, normalize=False).D
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0) and np.all(D >= 0)
    k = len(lam)
    for i, j, l in itertools.product(range(k), repeat=3):
        assert D[i, j] <= D[i, l] + D[l, j] + 1e-9 * (1 + D.max())


def test_ground_metric_points_reproduce_matrix():
    m = ground_metric([5.0, 3.0, 2.5, 1.0])
    np.testing.assert_allclose(np.abs(m.points[:, None] - m.points[None, :]), m.D, atol=1e-15)


def test_gibbs_kernel_examples():
    np.testing.assert_array_equal(gibbs_kernel(np.zeros((3, 3)), 0.1), np.ones((3, 3)))
    K = gibbs_kernel(np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0)
    np.testing.assert_allclose(K, [[1, np.exp(-1)], [np.exp(-1), 1]])
    with pytest.warns(ConditioningWarning):
        K = gibbs_kernel(np.array([[0.0, 5.0], [5.0, 0.0]]), 0.01)
    assert K[0, 1] == np.exp(-500) and np.all(np.diag(K) == 1)
    with pytest.raises(InputError):
        gibbs_kernel(np.zeros((2, 2)), 0.0)


def test_ibp_identical_inputs():
    P = np.tile([0.2, 0.3, 0.5], (3, 1))
    b = ibp_barycenter(P, np.ones(3) / 3, ground_metric([3, 2, 1]))
    np.testing.assert_allclose(b, [0.2, 0.3, 0.5], atol=1e-6)


def test_ibp_single_input():
    b = ibp_barycenter([[0.9, 0.1]], [1.0], ground_metric([2, 1]))
    np.testing.assert_allclose(b, [0.9, 0.1], atol=1e-6)


def test_ibp_midpoint_matches_lp_oracle():
    P = np.array([[1.0, 0, 0], [0, 0, 1.0]])
    cfg = IBPConfig(epsilon=1e-2, iterations=1000)
    b = ibp_barycenter(P, [0.5, 0.5], MIDPOINT_D, cfg)
    exact = exact_fixed_support_barycenter(P, [0.5, 0.5], MIDPOINT_D)
    np.testing.assert_allclose(exact.p, [0, 1, 0], atol=1e-9)
    assert exact.objective == pytest.approx(1.0) and exact.unique
    assert total_variation(b, exact.p) <= 1e-3


def test_ibp_errors():
    with pytest.raises(EmptyInputError):
        ibp_barycenter(np.zeros((0, 3)), [], MIDPOINT_D)
    with pytest.raises(WeightError):
        ibp_barycenter([[0.5, 0.5, 0]], [0.0], MIDPOINT_D)
    with pytest.raises(InputError):
        IBPConfig(epsilon=0)
    with pytest.raises(InputError):
        IBPConfig(iterations=0)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 6),
    st.integers(1, 4),
    st.sampled_from([1e-3, 1e-2, 1e-1, 1.0]),
    st.integers(1, 50),
    st.integers(0, 10_000),
)
def test_ibp_output_is_a_distribution(k, N, eps, iters, seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(k) * 0.5, size=N)
    w = rng.dirichlet(np.ones(N))
    metric = ground_metric(np.sort(rng.uniform(0.1, 5, k))[::-1])
    b = ibp_barycenter(P, w, metric, IBPConfig(epsilon=eps, iterations=iters))
    assert np.all(b >= 0) and abs(b.sum() - 1) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 10_000))
def test_ibp_permutation_equivariance(k, N, seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(k), size=N)
    w = rng.dirichlet(np.ones(N))
    x = rng.uniform(0, 1, k)
    D = np.abs(x[:, None] - x[None, :])
    perm = rng.permutation(k)
    cfg = IBPConfig(epsilon=0.05, iterations=200, tol=0)
    a = ibp_barycenter(P, w, D, cfg)
    b = ibp_barycenter(P[:, perm], w, D[np.ix_(perm, perm)], cfg)
    np.testing.assert_allclose(b, a[perm], atol=1e-10)


def _batch(rng, k, groups_n=6):
    sizes = rng.integers(1, 5, groups_n)
    groups = np.repeat(np.arange(groups_n), sizes)
    P = rng.dirichlet(np.ones(k), size=groups.size)
    w = np.concatenate([rng.dirichlet(np.ones(s)) for s in sizes])
    return P, groups, w


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-4])
def test_batched_matches_per_problem(eps):
    rng = np.random.default_rng(3)
    k = 8
    metric = ground_metric(np.sort(rng.uniform(1, 4, k))[::-1])
    P, groups, w = _batch(rng, k)
    cfg = IBPConfig(epsilon=eps, iterations=100, tol=0)
    B = ibp_barycenters(P, groups, w, metric, cfg)
    for g in range(groups.max() + 1):
        sel = groups == g
        single = ibp_barycenter(P[sel], w[sel], metric, cfg)
        np.testing.assert_allclose(B[g], single, atol=1e-9)


@pytest.mark.parametrize("eps", [1e-3, 1e-4, 1e-6])
def test_line_kernel_route_matches_dense_route(eps):
    rng = np.random.default_rng(11)
    k = 12
    metric = ground_metric(np.sort(rng.uniform(1, 4, k))[::-1])
    plain = GroundMetric(metric.D, metric.scale)  # no points: dense log-domain route
    P, groups, w = _batch(rng, k)
    cfg = IBPConfig(epsilon=eps, iterations=60, tol=0)
    np.testing.assert_allclose(
        ibp_barycenters(P, groups, w, metric, cfg), ibp_barycenters(P, groups, w, plain, cfg), atol=1e-10
    )


def test_early_exit_agrees_with_fixed_iterations():
    rng = np.random.default_rng(5)
    metric = ground_metric(np.sort(rng.uniform(1, 4, 6))[::-1])
    P = rng.dirichlet(np.ones(6), size=3)
    a = ibp_barycenter(P, np.ones(3) / 3, metric, IBPConfig(epsilon=0.05, iterations=2000, tol=1e-12))
    b = ibp_barycenter(P, np.ones(3) / 3, metric, IBPConfig(epsilon=0.05, iterations=2000, tol=0))
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_eps_schedule():
    s = eps_schedule(1e-3, 100, 100.0)
    assert s[0] == pytest.approx(0.1) and s[-1] == 1e-3 and all(a >= b for a, b in zip(s, s[1:]))
    assert eps_schedule(1e-2, 5) == [1e-2] * 5


def test_annealing_reaches_the_same_fixed_point():
    D = np.array(ORACLE["barycenters"][13]["D"])
    P = np.array(ORACLE["barycenters"][13]["P"])
    w = np.array(ORACLE["barycenters"][13]["w"])
    eps = 1e-3 * D.max()
    long_plain = ibp_barycenter(P, w, D, IBPConfig(epsilon=eps, iterations=20_000))
    annealed = ibp_barycenter(P, w, D, IBPConfig(epsilon=eps, iterations=20_000, eps_scaling=100))
    np.testing.assert_allclose(annealed, long_plain, atol=1e-8)


def test_entropic_w2_examples():
    cost, T = entropic_w2([0.5, 0.5], [0.5, 0.5], [[0, 1], [1, 0]], 1e-2)
    assert cost <= 0.05
    c = 3.0
    cost, _ = entropic_w2([1.0, 0.0], [0.0, 1.0], [[0, c], [c, 0]], 1e-3 * c)
    assert cost == pytest.approx(c, rel=1e-2)
    cost, _ = entropic_w2([0.7, 0.3], [0.3, 0.7], [[0, 1], [1, 0]], 1e-3)
    assert cost == pytest.approx(0.4, abs=1e-3)


def test_entropic_w2_marginals():
    rng = np.random.default_rng(8)
    p, q = rng.dirichlet(np.ones(5), size=2)
    D = ground_metric(np.sort(rng.uniform(1, 3, 5))[::-1]).D
    _, T = entropic_w2(p, q, D, 1e-2)
    np.testing.assert_allclose(T.sum(axis=1), p, atol=1e-6)
    np.testing.assert_allclose(T.sum(axis=0), q, atol=1e-6)


def test_entropic_self_cost_decreases_with_eps():
    p = np.array([0.1, 0.4, 0.2, 0.3])
    D = ground_metric([4.0, 3.0, 2.0, 1.0]).D
    costs = [entropic_w2(p, p, D, e * D.max())[0] for e in (1e-1, 1e-2, 1e-3)]
    assert costs[0] > costs[1] > costs[2] >= 0


def test_exact_w2_lp_examples():
    p = np.array([0.3, 0.7])
    assert exact_w2_lp(p, p, [[0, 1], [1, 0]])[0] == pytest.approx(0.0)
    assert exact_w2_lp([1.0, 0.0], [0.0, 1.0], [[0, 7], [7, 0]])[0] == pytest.approx(7.0)
    with pytest.raises(ScaleError):
        exact_w2_lp(np.ones(9) / 9, np.ones(9) / 9, np.zeros((9, 9)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_exact_w2_lp_matches_linprog(k, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(k), size=2)
    D = rng.uniform(0, 1, (k, k))
    cost, T = exact_w2_lp(p, q, D)
    A = np.vstack([np.kron(np.eye(k), np.ones(k)), np.kron(np.ones(k), np.eye(k))])
    ref = linprog(D.ravel(), A_eq=A, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs")
    assert cost == pytest.approx(ref.fun, abs=1e-9)
    np.testing.assert_allclose(T.sum(axis=1), p, atol=1e-12)
    np.testing.assert_allclose(T.sum(axis=0), q, atol=1e-12)


def test_line_metric_lp_matches_cdf_formula():
    # on a line with D = |a_i - a_j| the exact cost is the L1 distance of the CDFs
    rng = np.random.default_rng(9)
    m = ground_metric([3.0, 2.0, 1.5, 1.0], normalize=False)
    a = np.sort(m.points)
    for _ in range(10):
        p, q = rng.dirichlet(np.ones(4), size=2)
        order = np.argsort(m.points)
        cdf = np.cumsum(p[order] - q[order])[:-1]
        assert exact_w2_lp(p, q, m.D)[0] == pytest.approx(np.sum(np.abs(cdf) * np.diff(a)))


def test_exact_barycenter_examples():
    P = np.tile([0.1, 0.6, 0.3], (2, 1))
    sol = exact_fixed_support_barycenter(P, [0.5, 0.5], MIDPOINT_D)
    np.testing.assert_allclose(sol.p, [0.1, 0.6, 0.3], atol=1e-9)
    assert sol.objective == pytest.approx(0.0, abs=1e-12) and sol.unique
    zero = exact_fixed_support_barycenter([[1.0, 0, 0], [0, 0, 1.0]], [0.5, 0.5], np.zeros((3, 3)))
    assert zero.objective == pytest.approx(0.0, abs=1e-12) and not zero.unique
    with pytest.raises(ScaleError):
        exact_fixed_support_barycenter(np.ones((4, 3)) / 3, np.ones(4) / 4, MIDPOINT_D)


def test_grid_search_confirms_midpoint():
    sol = grid_search_barycenter([[1.0, 0, 0], [0, 0, 1.0]], [0.5, 0.5], MIDPOINT_D)
    np.testing.assert_allclose(sol.p, [0, 1, 0], atol=1e-9)
    assert sol.objective == pytest.approx(1.0)


def test_frozen_oracle_values_reproduce():
    for case in ORACLE["barycenters"][:10]:
        sol = exact_fixed_support_barycenter(np.array(case["P"]), np.array(case["w"]), np.array(case["D"]))
        np.testing.assert_allclose(sol.p, case["barycenter"], atol=1e-7)
        assert sol.objective == pytest.approx(case["objective"], rel=1e-9, abs=1e-12)
    for case in ORACLE["transport"][:10]:
        cost, _ = exact_w2_lp(np.array(case["p"]), np.array(case["q"]), np.array(case["D"]))
        assert cost == pytest.approx(case["cost"], rel=1e-12, abs=1e-15)


def test_lp_and_grid_search_agree_on_small_instances():
    for case in [c for c in ORACLE["barycenters"] if len(c["D"]) <= 3][:3]:
        P, w, D = np.array(case["P"]), np.array(case["w"]), np.array(case["D"])
        grid = grid_search_barycenter(P, w, D, resolution=0.05)
        assert grid.objective == pytest.approx(case["objective"], abs=1e-4)
