"""Sinkhorn scaling: closed forms, marginal feasibility, both numeric paths."""

import numpy as np
import pytest

from dgwt.errors import ValidationError
from dgwt.sinkhorn import (marginal_residual, project_to_marginals, sinkhorn)

from oracles import random_simplex


class TestClosedForms:
    def test_zero_cost_gives_independence(self):
        res = sinkhorn(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], epsilon=0.1)
        np.testing.assert_allclose(res.coupling, np.full((2, 2), 0.25), atol=1e-12)
        assert res.converged

    def test_symmetric_two_by_two(self):
        """C=[[0,1],[1,0]], eps=0.1: T_diag = 0.5/(1+e^(-1/eps))."""
        eps = 0.1
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        res = sinkhorn(C, [0.5, 0.5], [0.5, 0.5], epsilon=eps)
        diag = 0.5 / (1.0 + np.exp(-1.0 / eps))
        off = diag * np.exp(-1.0 / eps)
        expected = np.array([[diag, off], [off, diag]])
        np.testing.assert_allclose(res.coupling, expected, atol=1e-9)

    def test_degenerate_marginals_force_coupling(self):
        """p=(1,0), q=(0,1) leaves a single feasible coupling."""
        C = np.array([[0.3, 0.7], [0.2, 0.9]])
        res = sinkhorn(C, [1.0, 0.0], [0.0, 1.0], epsilon=0.5)
        np.testing.assert_allclose(res.coupling,
                                   np.array([[0.0, 1.0], [0.0, 0.0]]), atol=1e-12)

    def test_one_by_one(self):
        res = sinkhorn(np.array([[2.0]]), [1.0], [1.0], epsilon=0.1)
        np.testing.assert_allclose(res.coupling, [[1.0]], atol=1e-12)


class TestMarginalFeasibility:
    def test_random_instances_reach_tolerance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, m = rng.integers(2, 33, size=2)
            C = rng.uniform(size=(n, m))
            p = random_simplex(rng, n)
            q = random_simplex(rng, m)
            res = sinkhorn(C, p, q, epsilon=0.1, tol=1e-9, max_iters=5000)
            assert res.converged
            assert marginal_residual(res.coupling, p, q) < 1e-9
            assert res.coupling.min() >= 0.0

    def test_log_and_dense_paths_agree(self):
        rng = np.random.default_rng(3)
        C = rng.uniform(size=(5, 7))
        p = random_simplex(rng, 5)
        q = random_simplex(rng, 7)
        dense = sinkhorn(C, p, q, epsilon=0.05, max_iters=5000)
        logd = sinkhorn(C, p, q, epsilon=0.05, max_iters=5000, log_domain=True)
        np.testing.assert_allclose(dense.coupling, logd.coupling, atol=1e-8)

    def test_log_domain_survives_small_epsilon(self):
        rng = np.random.default_rng(4)
        C = rng.uniform(size=(6, 6))
        p = random_simplex(rng, 6)
        q = random_simplex(rng, 6)
        res = sinkhorn(C, p, q, epsilon=1e-3, tol=1e-9, max_iters=20000,
                       log_domain=True)
        assert np.all(np.isfinite(res.coupling))
        assert marginal_residual(res.coupling, p, q) < 1e-6


class TestResidualHistory:
    def test_log_domain_residual_is_non_increasing(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n, m = rng.integers(2, 17, size=2)
            C = rng.uniform(size=(n, m))
            p = random_simplex(rng, n)
            q = random_simplex(rng, m)
            res = sinkhorn(C, p, q, epsilon=0.05, log_domain=True,
                           max_iters=3000)
            hist = np.asarray(res.residual_history)
            assert np.all(np.diff(hist) <= 1e-15)

    def test_history_ends_at_reported_residual(self):
        res = sinkhorn(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], epsilon=0.1)
        assert res.residual_history[-1] == res.residual


class TestValidationAndCaps:
    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            sinkhorn(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5], epsilon=0.1)

    def test_bad_epsilon(self):
        with pytest.raises(ValidationError):
            sinkhorn(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], epsilon=0.0)

    def test_cap_reports_not_converged(self):
        rng = np.random.default_rng(1)
        C = rng.uniform(size=(8, 8))
        p = random_simplex(rng, 8)
        q = random_simplex(rng, 8)
        res = sinkhorn(C, p, q, epsilon=0.01, tol=1e-15, max_iters=3)
        assert not res.converged
        assert res.iterations == 3


class TestProjection:
    def test_projected_matrix_is_feasible(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n, m = rng.integers(2, 9, size=2)
            M = rng.uniform(0.1, 1.0, size=(n, m))
            p = random_simplex(rng, n)
            q = random_simplex(rng, m)
            T = project_to_marginals(M, p, q)
            assert marginal_residual(T, p, q) < 1e-10
            assert T.min() >= 0.0

    def test_zeros_stay_zero(self):
        M = np.array([[0.0, 1.0], [1.0, 1.0]])
        T = project_to_marginals(M, [0.5, 0.5], [0.5, 0.5])
        assert T[0, 0] == 0.0
