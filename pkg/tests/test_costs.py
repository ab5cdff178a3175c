import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmotflow.costs import (
    CostBundle,
    DiscreteMarginal,
    Grid,
    build_cost_matrix,
    epsilon_cost,
    inner_pair_cost_tensor,
    uniform_grid,
    uniform_marginal,
)
from mmotflow.errors import MMOTError


def grid3():
    return Grid(np.array([0.0, 0.5, 1.0]))


class TestBuildCostMatrix:
    def test_log_cost_values(self):
        bundle = build_cost_matrix(grid3(), "log", 3, a=0.1)
        assert bundle.W[0, 0] == pytest.approx(-math.log(0.1), abs=1e-12)
        assert bundle.W[0, 0] == pytest.approx(2.302585, abs=1e-6)
        assert bundle.W[0, 2] == pytest.approx(-math.log(1.1), abs=1e-12)
        assert bundle.W[0, 2] == pytest.approx(-0.0953102, abs=1e-7)

    def test_neg_harmonic(self):
        bundle = build_cost_matrix(Grid(np.array([0.0, 1.0])), "neg_harmonic", 3)
        assert np.allclose(bundle.W, [[0.0, -1.0], [-1.0, 0.0]])

    def test_coulomb_truncated_caps_diagonal(self):
        bundle = build_cost_matrix(grid3(), "coulomb_truncated", 3, cap=10.0)
        assert bundle.W[0, 0] == 10.0
        assert bundle.W[0, 1] == pytest.approx(2.0)
        assert bundle.W[0, 2] == pytest.approx(1.0)

    def test_coulomb_default_cap_from_spacing(self):
        bundle = build_cost_matrix(grid3(), "coulomb_truncated", 3)
        assert bundle.params["cap"] == pytest.approx(10.0 / 0.5)

    def test_squared_distance(self):
        bundle = build_cost_matrix(grid3(), "squared_distance", 3)
        assert bundle.W[0, 2] == pytest.approx(1.0)
        assert bundle.W[0, 1] == pytest.approx(0.25)

    def test_sup_bound_counts_pairs(self):
        bundle = build_cost_matrix(grid3(), "log", 4, a=0.1)
        w_max = np.max(np.abs(bundle.W))
        assert bundle.sup_bound == pytest.approx((3 + 3) * w_max)

    @pytest.mark.parametrize("kind,params", [("log", {"a": -1.0}),
                                             ("log", {"a": 0.0}),
                                             ("coulomb_truncated", {"cap": -2.0})])
    def test_bad_params_rejected(self, kind, params):
        with pytest.raises(MMOTError):
            build_cost_matrix(grid3(), kind, 3, **params)

    def test_unknown_kind_rejected(self):
        with pytest.raises(MMOTError):
            build_cost_matrix(grid3(), "cubic", 3)

    def test_asymmetric_matrix_rejected(self):
        w = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(MMOTError, match="symmetric"):
            CostBundle(kind="log", params={}, W=w, m=3)

    def test_nonfinite_matrix_rejected(self):
        w = np.array([[0.0, np.inf], [np.inf, 0.0]])
        with pytest.raises(MMOTError, match="finite"):
            CostBundle(kind="log", params={}, W=w, m=3)


class TestGridAndMarginal:
    def test_duplicate_points_rejected(self):
        with pytest.raises(MMOTError):
            Grid(np.array([0.0, 0.0, 1.0]))

    def test_single_point_rejected(self):
        with pytest.raises(MMOTError):
            Grid(np.array([0.3]))

    def test_periodic_grid_drops_endpoint(self):
        grid = uniform_grid(4, (0.0, 1.0), periodic=True)
        assert np.allclose(grid.coords(), [0.0, 0.25, 0.5, 0.75])

    def test_marginal_must_be_positive(self):
        grid = grid3()
        with pytest.raises(MMOTError):
            DiscreteMarginal(grid, np.array([0.0, 0.5, 0.5]))

    def test_marginal_must_sum_to_one(self):
        with pytest.raises(MMOTError):
            DiscreteMarginal(grid3(), np.array([0.3, 0.3, 0.3]))

    def test_uniform_marginal(self):
        rho = uniform_marginal(grid3())
        assert np.allclose(rho.weights, 1.0 / 3.0)


class TestEpsilonCost:
    def setup_method(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(4, 4))
        self.W = 0.5 * (w + w.T)
        self.bundle = CostBundle(kind="log", params={}, W=self.W, m=3)

    def test_eps_zero_is_star_cost(self):
        value, d_eps = epsilon_cost(self.bundle, (1, 2, 3), 0.0)
        assert value == pytest.approx(self.W[1, 2] + self.W[1, 3], abs=1e-14)
        assert d_eps == pytest.approx(self.W[2, 3], abs=1e-14)

    def test_eps_one_is_full_pairwise(self):
        value, _ = epsilon_cost(self.bundle, (0, 2, 3), 1.0)
        expected = self.W[0, 2] + self.W[0, 3] + self.W[2, 3]
        assert value == pytest.approx(expected, abs=1e-14)

    def test_derivative_matches_finite_difference(self):
        delta = 1e-6
        for idx in [(0, 1, 2), (3, 3, 1), (2, 0, 0)]:
            up, d_eps = epsilon_cost(self.bundle, idx, 0.5 + delta)
            down, _ = epsilon_cost(self.bundle, idx, 0.5 - delta)
            assert (up - down) / (2 * delta) == pytest.approx(d_eps, abs=1e-8)

    def test_affine_in_eps(self):
        for eps in (0.0, 0.25, 0.7, 1.0):
            value, d_eps = epsilon_cost(self.bundle, (0, 1, 3), eps)
            base, _ = epsilon_cost(self.bundle, (0, 1, 3), 0.0)
            assert value == pytest.approx(base + eps * d_eps, abs=1e-12)

    def test_symmetric_in_tail_coordinates(self):
        v1, _ = epsilon_cost(self.bundle, (0, 1, 3), 0.42)
        v2, _ = epsilon_cost(self.bundle, (0, 3, 1), 0.42)
        assert v1 == pytest.approx(v2, abs=1e-14)

    def test_bounded_by_sup_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            idx = tuple(rng.integers(0, 4, size=3))
            for eps in (0.0, rng.uniform(), 1.0):
                value, _ = epsilon_cost(self.bundle, idx, eps)
                assert abs(value) <= self.bundle.sup_bound + 1e-12

    def test_wrong_index_count(self):
        with pytest.raises(MMOTError):
            epsilon_cost(self.bundle, (0, 1), 0.5)


@given(
    n=st.integers(2, 5),
    m=st.integers(3, 5),
    eps=st.floats(0.0, 1.0),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=50, deadline=None)
def test_epsilon_cost_affinity_property(n, m, eps, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, n))
    bundle = CostBundle(kind="log", params={}, W=0.5 * (w + w.T), m=m)
    idx = tuple(rng.integers(0, n, size=m))
    value, d_eps = epsilon_cost(bundle, idx, eps)
    base, d0 = epsilon_cost(bundle, idx, 0.0)
    assert d_eps == pytest.approx(d0, abs=1e-13)
    assert value == pytest.approx(base + eps * d_eps, rel=1e-12, abs=1e-12)
    assert abs(value) <= bundle.sup_bound + 1e-12


def test_inner_pair_tensor_matches_loops():
    rng = np.random.default_rng(11)
    w = rng.normal(size=(3, 3))
    w = 0.5 * (w + w.T)
    tensor = inner_pair_cost_tensor(w, 3)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                assert tensor[i, j, k] == pytest.approx(
                    w[i, j] + w[i, k] + w[j, k], abs=1e-14
                )
