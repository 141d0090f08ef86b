import numpy as np
import pytest

from otrlab.errors import ConfigError, DimensionError, NumericalError, SizeError
from otrlab.ot import (
    CouplingResult,
    EmpiricalDistribution,
    build_cost_matrix,
    dump_coupling,
    exact_ot,
    marginal_violation,
    sinkhorn,
    wasserstein_sq,
)

from oracles import brute_force_transport


class TestCostMatrix:
    def test_identical_single_states(self):
        c = build_cost_matrix([[1.0, 2.0]], [[1.0, 2.0]])
        assert c.shape == (1, 1)
        assert c[0, 0] == 0.0

    def test_three_four_five(self):
        c = build_cost_matrix([[0.0, 0.0]], [[3.0, 4.0]])
        assert c[0, 0] == pytest.approx(25.0)

    def test_swap_transposes(self):
        rng = np.random.default_rng(0)
        xs, ys = rng.standard_normal((4, 3)), rng.standard_normal((6, 3))
        c = build_cost_matrix(xs, ys)
        assert c.shape == (4, 6)
        assert np.allclose(c, build_cost_matrix(ys, xs).T)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(1)
        xs, ys = rng.standard_normal((4, 3)), rng.standard_normal((6, 3))
        c = build_cost_matrix(xs, ys)
        for i in range(4):
            for j in range(6):
                assert c[i, j] == pytest.approx(((xs[i] - ys[j]) ** 2).sum())

    def test_euclidean_is_sqrt_of_squared(self):
        rng = np.random.default_rng(2)
        xs, ys = rng.standard_normal((3, 2)), rng.standard_normal((5, 2))
        assert np.allclose(build_cost_matrix(xs, ys, "euclidean") ** 2,
                           build_cost_matrix(xs, ys, "squared_euclidean"))

    def test_cosine_zero_for_parallel(self):
        c = build_cost_matrix([[1.0, 0.0]], [[2.0, 0.0]], "cosine")
        assert c[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            build_cost_matrix([[1.0, 2.0]], [[1.0, 2.0, 3.0]])

    def test_unknown_metric(self):
        with pytest.raises(ConfigError):
            build_cost_matrix([[0.0]], [[1.0]], "manhattan")


class TestExact:
    def test_zero_diagonal_square_cost_zero(self):
        c = np.array([[0.0, 3.0, 1.0], [2.0, 0.0, 5.0], [4.0, 1.0, 0.0]])
        res = exact_ot(c)
        assert res.transport_cost == pytest.approx(0.0, abs=1e-12)

    def test_2x2_known_value(self):
        res = exact_ot(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert res.transport_cost == pytest.approx(2.5, abs=1e-12)
        assert marginal_violation(res.plan, res.row_marginal, res.col_marginal) < 1e-9

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            c = rng.integers(0, 10, size=(3, 3)).astype(float)
            oracle_cost, _ = brute_force_transport(c)
            assert exact_ot(c).transport_cost == pytest.approx(oracle_cost, abs=1e-10)

    def test_rectangular_matches_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            c = rng.random((2, 4))
            oracle_cost, _ = brute_force_transport(c)
            assert exact_ot(c).transport_cost == pytest.approx(oracle_cost, abs=1e-10)

    def test_size_guard(self):
        with pytest.raises(SizeError):
            exact_ot(np.zeros((101, 101)))

    def test_feasibility(self):
        rng = np.random.default_rng(5)
        c = rng.random((5, 7))
        res = exact_ot(c)
        assert res.plan.min() >= 0
        assert marginal_violation(res.plan, res.row_marginal, res.col_marginal) < 1e-9


class TestSinkhorn:
    def test_1x1_forced_coupling(self):
        for eps in (1.0, 0.01, 1e-3):
            res = sinkhorn(np.array([[0.73]]), eps)
            assert res.plan == pytest.approx(np.array([[1.0]]))
            assert res.transport_cost == pytest.approx(0.73)

    def test_antidiagonal_2x2(self):
        res = sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]]), epsilon=0.01)
        assert np.allclose(res.plan, np.array([[0.5, 0.0], [0.0, 0.5]]), atol=1e-3)
        assert res.transport_cost == pytest.approx(0.0, abs=1e-3)

    def test_within_5pct_of_exact_and_above(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            c = rng.random((5, 7))
            ex = exact_ot(c)
            sk = sinkhorn(c, epsilon=0.01, max_iters=5000)
            assert sk.transport_cost >= ex.transport_cost - 1e-9
            assert sk.transport_cost <= ex.transport_cost * 1.05

    def test_marginals_exact_after_rounding(self):
        rng = np.random.default_rng(7)
        c = rng.random((6, 4))
        res = sinkhorn(c, epsilon=0.05)
        assert marginal_violation(res.plan, res.row_marginal, res.col_marginal) < 1e-12
        assert res.plan.min() >= 0
        assert res.plan.sum() == pytest.approx(1.0, abs=1e-9)

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            c = rng.random((6, 6))
            costs = [sinkhorn(c, eps, max_iters=5000).transport_cost
                     for eps in (1.0, 0.1, 0.01)]
            assert costs[0] >= costs[1] - 1e-9
            assert costs[1] >= costs[2] - 1e-9

    def test_converges_to_exact_at_small_epsilon(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            c = rng.random((6, 6))
            ex = exact_ot(c)
            sk = sinkhorn(c, epsilon=0.005, max_iters=5000)
            assert sk.transport_cost <= ex.transport_cost * 1.02 + 1e-9

    def test_entropic_gap_bound(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            m, n = rng.integers(2, 8, size=2)
            c = rng.random((m, n))
            eps = 0.01
            ex = exact_ot(c)
            sk = sinkhorn(c, eps, max_iters=5000)
            assert ex.transport_cost <= sk.transport_cost + 1e-6
            assert sk.transport_cost <= ex.transport_cost + eps * np.log(m * n) + 1e-6

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        c = rng.random((4, 5))
        perm = rng.permutation(5)
        a = sinkhorn(c, 0.02, max_iters=5000)
        b = sinkhorn(c[:, perm], 0.02, max_iters=5000)
        assert b.transport_cost == pytest.approx(a.transport_cost, rel=1e-8)
        assert np.allclose(b.plan, a.plan[:, perm], atol=1e-9)

    def test_unconverged_flag_reported(self):
        rng = np.random.default_rng(12)
        c = rng.random((6, 6))
        res = sinkhorn(c, epsilon=0.001, max_iters=3, anneal=False)
        assert not res.converged
        assert res.marginal_violation > 0

    def test_stability_at_small_epsilon_on_standardized_scale(self):
        # costs of order ~10 with epsilon 1e-3 must not overflow/underflow
        rng = np.random.default_rng(13)
        c = 10.0 * rng.random((8, 8))
        res = sinkhorn(c, epsilon=1e-3, max_iters=20000)
        assert np.isfinite(res.transport_cost)
        assert res.converged

    def test_bad_epsilon(self):
        with pytest.raises(ConfigError):
            sinkhorn(np.array([[1.0]]), epsilon=0.0)

    def test_nan_cost_rejected(self):
        with pytest.raises(NumericalError):
            sinkhorn(np.array([[np.nan]]), epsilon=0.1)


class TestWasserstein:
    def test_identical_trajectories_zero(self):
        rng = np.random.default_rng(14)
        xs = rng.standard_normal((5, 3))
        assert wasserstein_sq(xs, xs, solver="exact") == pytest.approx(0.0, abs=1e-12)

    def test_single_atoms(self):
        x, y = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
        assert wasserstein_sq(x, y, solver="exact") == pytest.approx(25.0)
        assert wasserstein_sq(x, y, solver="sinkhorn") == pytest.approx(25.0)

    def test_sinkhorn_upper_bounds_exact_50_instances(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            t1, t2 = rng.integers(2, 7, size=2)
            xs = rng.standard_normal((t1, 3))
            ys = rng.standard_normal((t2, 3))
            lo = wasserstein_sq(xs, ys, solver="exact")
            hi = wasserstein_sq(xs, ys, solver="sinkhorn", epsilon=0.01,
                                max_iters=5000)
            assert hi >= lo - 1e-9

    def test_distribution_type_accepted(self):
        d1 = EmpiricalDistribution(np.zeros((3, 2)))
        d2 = EmpiricalDistribution(np.ones((4, 2)))
        assert d1.masses == pytest.approx(np.full(3, 1 / 3))
        assert wasserstein_sq(d1, d2, solver="exact") == pytest.approx(2.0)

    def test_unknown_solver(self):
        with pytest.raises(ConfigError):
            wasserstein_sq(np.zeros((2, 2)), np.zeros((2, 2)), solver="magic")


class TestDump:
    def test_dump_contains_matrices(self):
        res = exact_ot(np.array([[1.0, 2.0], [3.0, 4.0]]))
        text = dump_coupling(res)
        assert "# cost matrix" in text
        assert "# transport plan" in text
        assert len(text.splitlines()) == 2 + 2 + 2 + 1  # header + 2 sections
