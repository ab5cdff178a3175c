import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmotflow import bruteforce, dual
from mmotflow.costs import CostBundle, DiscreteMarginal, Grid, uniform_grid, uniform_marginal
from mmotflow.errors import MMOTError, SizeGuardError


def make_params(n=4, m=3, eta=0.5, seed=0, uniform=False, enum_budget=10_000_000):
    rng = np.random.default_rng(seed)
    grid = uniform_grid(n)
    w = rng.normal(size=(n, n))
    bundle = CostBundle(kind="log", params={}, W=0.5 * (w + w.T), m=m)
    if uniform:
        rho = uniform_marginal(grid)
    else:
        weights = rng.uniform(0.5, 1.5, n)
        rho = DiscreteMarginal(grid, weights / weights.sum())
    return dual.ProblemParams(
        eta=eta, m=m, marginal=rho, bundle=bundle, enum_budget=enum_budget
    )


def zero_cost_params(n=4, m=3, eta=1.0):
    grid = uniform_grid(n)
    bundle = CostBundle(kind="log", params={}, W=np.zeros((n, n)), m=m)
    return dual.ProblemParams(eta=eta, m=m, marginal=uniform_marginal(grid),
                              bundle=bundle)


def random_phi(params, seed=1, scale=1.0):
    rng = np.random.default_rng(seed)
    phi = rng.normal(scale=scale, size=params.n)
    phi[params.anchor] = 0.0
    return phi


def fd_gradient(params, phi, eps, step=1e-5):
    out = np.zeros(params.n)
    for i in range(params.n):
        bump = np.zeros(params.n)
        bump[i] = step
        out[i] = (
            dual.objective(params, phi + bump, eps)
            - dual.objective(params, phi - bump, eps)
        ) / (2 * step)
    return out


def fd_hessian(params, phi, eps, step=1e-5):
    out = np.zeros((params.n, params.n))
    for i in range(params.n):
        bump = np.zeros(params.n)
        bump[i] = step
        out[:, i] = (
            dual.gradient(params, phi + bump, eps)
            - dual.gradient(params, phi - bump, eps)
        ) / (2 * step)
    return out


class TestPotential:
    def test_requires_anchor_zero(self):
        with pytest.raises(MMOTError):
            dual.Potential(np.array([0.1, 0.2]))

    def test_anchored_shifts(self):
        p = dual.Potential.anchored(np.array([0.3, 0.5, -0.2]), anchor=1)
        assert p.values[1] == 0.0
        assert p.values[0] == pytest.approx(-0.2)


class TestObjective:
    def test_zero_cost_zero_phi_is_zero(self):
        params = zero_cost_params()
        for eps in (0.0, 0.5, 1.0):
            assert dual.objective(params, np.zeros(params.n), eps) == pytest.approx(
                0.0, abs=1e-14
            )

    def test_two_point_instance_matches_enumeration(self):
        # m=3, N=2, uniform rho, W=[[0,1],[1,0]], eta=1, phi=0, eps=0
        grid = Grid(np.array([0.0, 1.0]))
        bundle = CostBundle(kind="log", params={},
                            W=np.array([[0.0, 1.0], [1.0, 0.0]]), m=3)
        params = dual.ProblemParams(eta=1.0, m=3, marginal=uniform_marginal(grid),
                                    bundle=bundle)
        # enumeration oracle: average over z of log of the 4-term tuple sum
        total = 0.0
        for z in range(2):
            acc = 0.0
            for q in range(2):
                for r in range(2):
                    cost = bundle.W[z, q] + bundle.W[z, r]
                    acc += math.exp(-cost) * 0.25
            total += 0.5 * math.log(acc)
        expected = total  # equals 2*log(1 + 1/e) - 2*log(2)
        assert expected == pytest.approx(2 * math.log(1 + math.exp(-1)) - 2 * math.log(2))
        assert dual.objective(params, np.zeros(2), 0.0) == pytest.approx(
            expected, abs=1e-14
        )

    def test_shift_invariance(self):
        params = make_params(n=5, seed=3)
        phi = random_phi(params, seed=4)
        shifted = phi + 0.7
        for eps in (0.0, 0.6, 1.0):
            assert dual.objective(params, shifted, eps) == pytest.approx(
                dual.objective(params, phi, eps), rel=1e-12, abs=1e-12
            )

    def test_convexity_along_segments(self):
        params = make_params(n=4, seed=5)
        rng = np.random.default_rng(9)
        for _ in range(10):
            phi1 = rng.normal(size=params.n)
            phi2 = rng.normal(size=params.n)
            t = rng.uniform()
            lhs = dual.objective(params, t * phi1 + (1 - t) * phi2, 0.5)
            rhs = t * dual.objective(params, phi1, 0.5) + (1 - t) * dual.objective(
                params, phi2, 0.5
            )
            assert lhs <= rhs + 1e-12


class TestGradient:
    def test_zero_cost_gradient_vanishes(self):
        params = zero_cost_params()
        grad = dual.gradient(params, np.zeros(params.n), 0.7)
        assert np.max(np.abs(grad)) < 1e-14

    def test_matches_finite_differences(self):
        params = make_params(n=4, m=3, eta=0.5, seed=0)
        phi = random_phi(params, seed=2)
        for eps in (0.1, 0.5, 0.9):
            grad = dual.gradient(params, phi, eps)
            approx = fd_gradient(params, phi, eps)
            rel = np.max(np.abs(grad - approx)) / np.max(np.abs(approx))
            assert rel < 1e-6

    def test_components_sum_to_zero(self):
        params = make_params(n=6, seed=8)
        phi = random_phi(params, seed=8, scale=2.0)
        grad = dual.gradient(params, phi, 0.33)
        assert abs(grad.sum()) < 1e-12


class TestHessian:
    def test_annihilates_constants(self):
        params = make_params(n=4, m=3, eta=0.5, seed=12)
        phi = random_phi(params, seed=13)
        hess = dual.hessian(params, phi, 0.4)
        assert np.max(np.abs(hess @ np.ones(params.n))) < 1e-10

    def test_matches_finite_differences(self):
        params = make_params(n=4, m=3, eta=0.5, seed=1)
        phi = random_phi(params, seed=2)
        hess = dual.hessian(params, phi, 0.5)
        approx = fd_hessian(params, phi, 0.5)
        rel = np.max(np.abs(hess - approx)) / np.max(np.abs(approx))
        assert rel < 1e-5

    def test_reduced_hessian_positive_definite(self):
        params = make_params(n=4, m=3, eta=0.5, seed=1)
        phi = random_phi(params, seed=2)
        hess = dual.hessian(params, phi, 0.5)
        red = dual.reduced(hess, params.anchor)
        assert np.linalg.eigvalsh(red).min() > 0.0

    def test_symmetric(self):
        params = make_params(n=5, m=4, eta=0.8, seed=21)
        phi = random_phi(params, seed=22)
        hess = dual.hessian(params, phi, 0.7)
        assert np.max(np.abs(hess - hess.T)) < 1e-13


class TestMixed:
    def test_zero_cost_mixed_vanishes(self):
        params = zero_cost_params()
        mixed = dual.mixed_eps_gradient(params, np.zeros(params.n), 0.5)
        assert np.max(np.abs(mixed)) == 0.0

    def test_matches_eps_finite_differences(self):
        params = make_params(n=4, m=3, eta=0.5, seed=1)
        phi = random_phi(params, seed=2)
        delta = 1e-6
        mixed = dual.mixed_eps_gradient(params, phi, 0.5)
        approx = (
            dual.gradient(params, phi, 0.5 + delta)
            - dual.gradient(params, phi, 0.5 - delta)
        ) / (2 * delta)
        rel = np.max(np.abs(mixed - approx)) / np.max(np.abs(approx))
        assert rel < 1e-6

    def test_components_sum_to_zero(self):
        params = make_params(n=5, m=4, eta=0.7, seed=30)
        phi = random_phi(params, seed=31)
        mixed = dual.mixed_eps_gradient(params, phi, 0.66)
        assert abs(mixed.sum()) < 1e-10


class TestDenseOracleEquivalence:
    @pytest.mark.parametrize("n,m", [(5, 3), (4, 4), (3, 5)])
    def test_all_quantities_agree(self, n, m):
        params = make_params(n=n, m=m, eta=0.6, seed=n * m)
        phi = random_phi(params, seed=n + m)
        eps = 0.45
        assert dual.objective(params, phi, eps) == pytest.approx(
            bruteforce.dense_objective(params, phi, eps), rel=1e-12
        )
        np.testing.assert_allclose(
            dual.gradient(params, phi, eps),
            bruteforce.dense_gradient(params, phi, eps),
            rtol=1e-11, atol=1e-14,
        )
        np.testing.assert_allclose(
            dual.hessian(params, phi, eps),
            bruteforce.dense_hessian(params, phi, eps),
            rtol=1e-11, atol=1e-14,
        )
        np.testing.assert_allclose(
            dual.mixed_eps_gradient(params, phi, eps),
            bruteforce.dense_mixed(params, phi, eps),
            rtol=1e-11, atol=1e-14,
        )


class TestGuardsAndStability:
    def test_size_guard_triggers(self):
        params = make_params(n=5, m=4, enum_budget=100)
        with pytest.raises(SizeGuardError):
            dual.objective(params, np.zeros(5), 0.5)

    def test_small_eta_does_not_overflow(self):
        params = make_params(n=6, m=3, eta=0.002, seed=40, uniform=True)
        phi = random_phi(params, seed=41, scale=5.0)
        der = dual.derivatives(params, phi, 0.5)
        assert np.all(np.isfinite(der.gradient))
        assert np.all(np.isfinite(der.hessian))
        assert np.all(np.isfinite(der.mixed))
        assert math.isfinite(der.objective)

    def test_m_must_be_at_least_three(self):
        grid = uniform_grid(4)
        bundle = CostBundle(kind="log", params={}, W=np.zeros((4, 4)), m=2)
        with pytest.raises(MMOTError):
            dual.ProblemParams(eta=1.0, m=2, marginal=uniform_marginal(grid),
                               bundle=bundle)


@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 1.0),
       shift=st.floats(-3.0, 3.0))
@settings(max_examples=30, deadline=None)
def test_shift_invariance_property(seed, eps, shift):
    params = make_params(n=4, m=3, eta=0.7, seed=seed)
    phi = random_phi(params, seed=seed + 1)
    base = dual.objective(params, phi, eps)
    moved = dual.objective(params, phi + shift, eps)
    assert moved == pytest.approx(base, rel=1e-11, abs=1e-11)
    grad = dual.gradient(params, phi, eps)
    assert abs(grad.sum()) < 1e-11
