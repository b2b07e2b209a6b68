"""Solver tests on dense SPD oracles and model-backed damped Hessians."""

import numpy as np
import pytest

from dfcvr import models, solvers


def _random_spd(rng, p, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eigs = np.geomspace(1.0, cond, p)
    return (q * eigs) @ q.T


def _lr_fixture(seed=0, n=1500, d=10, lam=1e-2):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = (rng.random(n) < 0.3).astype(np.float64)
    spec = models.LogisticRegression(input_dim=d, l2_coeff=1e-2)
    theta = 0.5 * rng.standard_normal(models.num_params(spec))
    op = solvers.DampedHessianOperator(spec, theta, x, y, lam=lam)
    b = rng.standard_normal(op.dim)
    return op, b


def _dense_from_operator(op):
    p = op.dim
    cols = [op.matvec(np.eye(p)[:, j]) for j in range(p)]
    return np.column_stack(cols)


class TestDampedHessianOperator:
    def test_matches_dense_hessian_plus_damping(self):
        op, _ = _lr_fixture(lam=0.25)
        op0, _ = _lr_fixture(lam=0.0)
        a = _dense_from_operator(op)
        a0 = _dense_from_operator(op0)
        np.testing.assert_allclose(a - a0, 0.25 * np.eye(op.dim), atol=1e-12)

    def test_symmetry(self):
        op, _ = _lr_fixture()
        rng = np.random.default_rng(1)
        for _ in range(5):
            u = rng.standard_normal(op.dim)
            v = rng.standard_normal(op.dim)
            np.testing.assert_allclose(
                u @ op.matvec(v), v @ op.matvec(u), rtol=1e-9
            )

    def test_chunk_size_does_not_change_the_product(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((500, 6))
        y = (rng.random(500) < 0.3).astype(np.float64)
        spec = models.Mlp(input_dim=6, hidden_dims=(8,), l2_coeff=1e-2)
        theta = models.init_params(spec, seed=3)
        v = rng.standard_normal(models.num_params(spec))
        products = []
        for chunk in (64, 100000):
            op = solvers.DampedHessianOperator(
                spec, theta, x, y, lam=1e-2, hvp_batch_size=chunk
            )
            products.append(op.matvec(v))
        np.testing.assert_allclose(products[0], products[1], atol=1e-10)

    def test_minibatch_products_average_to_full(self):
        op, _ = _lr_fixture(n=1000)
        rng = np.random.default_rng(3)
        v = rng.standard_normal(op.dim)
        full = op.matvec(v)
        parts = [
            op.matvec_batch(v, np.arange(s, s + 250)) for s in range(0, 1000, 250)
        ]
        np.testing.assert_allclose(np.mean(parts, axis=0), full, atol=1e-9)

    def test_rejects_negative_damping(self):
        rng = np.random.default_rng(4)
        spec = models.LogisticRegression(input_dim=2, l2_coeff=0.0)
        with pytest.raises(ValueError):
            solvers.DampedHessianOperator(
                spec, np.zeros(3), rng.standard_normal((5, 2)),
                np.zeros(5), lam=-1.0,
            )


class TestCg:
    def test_identity_in_one_iteration(self):
        op = solvers.MatrixOperator(np.eye(4))
        b = np.array([1.0, -2.0, 3.0, 0.5])
        result = solvers.cg_solve(op, b, solvers.SolverConfig())
        assert result.iterations == 1
        assert result.converged
        np.testing.assert_allclose(result.delta, b, atol=1e-14)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = _random_spd(rng, 6)
            b = rng.standard_normal(6)
            config = solvers.SolverConfig(tol_rel_residual=1e-12)
            result = solvers.cg_solve(solvers.MatrixOperator(a), b, config)
            np.testing.assert_allclose(
                result.delta, np.linalg.solve(a, b), rtol=1e-8
            )

    def test_converges_within_dimension_iterations(self):
        # near-exact termination after p iterations holds in floating
        # point only for moderately conditioned systems
        rng = np.random.default_rng(6)
        a = _random_spd(rng, 8, cond=50.0)
        b = rng.standard_normal(8)
        config = solvers.SolverConfig(tol_rel_residual=1e-8)
        result = solvers.cg_solve(solvers.MatrixOperator(a), b, config)
        assert result.iterations <= 8
        assert result.residual_rel <= 1e-8

    def test_zero_rhs_short_circuits(self):
        op = solvers.MatrixOperator(np.eye(3))
        result = solvers.cg_solve(op, np.zeros(3), solvers.SolverConfig())
        assert result.converged
        assert result.residual_rel is None
        np.testing.assert_array_equal(result.delta, np.zeros(3))

    def test_indefinite_system_raises_with_advice(self):
        op = solvers.MatrixOperator(np.diag([1.0, -1.0]))
        with pytest.raises(solvers.SolverError, match="damping") as info:
            solvers.cg_solve(op, np.ones(2), solvers.SolverConfig())
        assert info.value.delta is not None
        assert info.value.residual_rel == 1.0

    def test_iteration_cap_reports_not_converged(self):
        rng = np.random.default_rng(7)
        a = _random_spd(rng, 20, cond=1e6)
        b = rng.standard_normal(20)
        config = solvers.SolverConfig(tol_rel_residual=1e-14, max_iters=2)
        result = solvers.cg_solve(solvers.MatrixOperator(a), b, config)
        assert not result.converged
        assert result.iterations == 2

    def test_model_backed_system(self):
        op, b = _lr_fixture()
        config = solvers.SolverConfig(tol_rel_residual=1e-10)
        result = solvers.cg_solve(op, b, config)
        assert result.converged
        np.testing.assert_allclose(
            op.matvec(result.delta), b, atol=1e-9 * np.linalg.norm(b)
        )


class TestPowerIteration:
    def test_identity(self):
        est = solvers.power_iteration(solvers.MatrixOperator(np.eye(5)))
        np.testing.assert_allclose(est, 1.0, rtol=1e-12)

    def test_diagonal(self):
        op = solvers.MatrixOperator(np.diag([3.0, 1.0, 0.5]))
        np.testing.assert_allclose(
            solvers.power_iteration(op), 3.0, rtol=1e-8
        )

    def test_dense_spd_against_eigh(self):
        rng = np.random.default_rng(8)
        for seed in range(5):
            a = _random_spd(rng, 7, cond=20.0)
            est = solvers.power_iteration(
                solvers.MatrixOperator(a), iters=300, seed=seed
            )
            np.testing.assert_allclose(
                est, np.linalg.eigvalsh(a).max(), rtol=1e-6
            )

    def test_too_few_iterations_rejected(self):
        with pytest.raises(ValueError):
            solvers.power_iteration(solvers.MatrixOperator(np.eye(2)), iters=3)


class TestNeumann:
    def test_identity_with_unit_scale_converges_in_one_term(self):
        op = solvers.MatrixOperator(np.eye(4))
        b = np.array([2.0, -1.0, 0.5, 3.0])
        config = solvers.SolverConfig(neumann_scale=1.0)
        result = solvers.neumann_solve(op, b, config)
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_allclose(result.delta, b, atol=1e-14)

    def test_error_shrinks_with_more_terms(self):
        rng = np.random.default_rng(9)
        a = _random_spd(rng, 6, cond=10.0)
        b = rng.standard_normal(6)
        exact = np.linalg.solve(a, b)
        errors = []
        for terms in (10, 50, 200):
            config = solvers.SolverConfig(
                tol_rel_residual=1e-15, neumann_terms=terms
            )
            result = solvers.neumann_solve(
                solvers.MatrixOperator(a), b, config
            )
            errors.append(np.linalg.norm(result.delta - exact))
        assert errors[0] > errors[1] > errors[2]

    def test_residual_trace_is_monotone_on_spd(self):
        rng = np.random.default_rng(10)
        a = _random_spd(rng, 5, cond=8.0)
        b = rng.standard_normal(5)
        config = solvers.SolverConfig(tol_rel_residual=1e-12,
                                      neumann_terms=100)
        result = solvers.neumann_solve(solvers.MatrixOperator(a), b, config)
        trace = np.array(result.trace)
        assert np.all(np.diff(trace) < 0.0)

    def test_reported_residual_is_exact(self):
        rng = np.random.default_rng(11)
        a = _random_spd(rng, 5)
        b = rng.standard_normal(5)
        config = solvers.SolverConfig(tol_rel_residual=1e-6,
                                      neumann_terms=400)
        result = solvers.neumann_solve(solvers.MatrixOperator(a), b, config)
        recomputed = np.linalg.norm(b - a @ result.delta) / np.linalg.norm(b)
        np.testing.assert_allclose(result.residual_rel, recomputed,
                                   rtol=1e-9, atol=1e-12)

    def test_overlarge_scale_raises(self):
        op = solvers.MatrixOperator(np.diag([2.0, 1.0]))
        config = solvers.SolverConfig(neumann_scale=1.0)
        with pytest.raises(solvers.SolverError, match="diverge"):
            solvers.neumann_solve(op, np.ones(2), config)

    def test_calibrated_scale_solves_model_system(self):
        op, b = _lr_fixture()
        config = solvers.SolverConfig(tol_rel_residual=1e-3,
                                      neumann_terms=2000)
        result = solvers.neumann_solve(op, b, config)
        assert result.converged
        assert result.residual_rel <= 1e-3


class TestSqSolve:
    def test_zero_rhs_short_circuits(self):
        objective = solvers.QuadraticObjective(
            solvers.MatrixOperator(np.eye(3)), np.zeros(3)
        )
        result = solvers.sq_solve(objective, solvers.SolverConfig())
        assert result.converged
        np.testing.assert_array_equal(result.delta, np.zeros(3))

    def test_full_batch_mode_reaches_dense_solution(self):
        rng = np.random.default_rng(12)
        a = _random_spd(rng, 5, cond=5.0)
        b = rng.standard_normal(5)
        objective = solvers.QuadraticObjective(solvers.MatrixOperator(a), b)
        config = solvers.SolverConfig(
            tol_rel_residual=1e-3, max_epochs=5000, learning_rate=0.05
        )
        result = solvers.sq_solve(objective, config)
        assert result.converged
        exact = np.linalg.solve(a, b)
        assert np.linalg.norm(result.delta - exact) <= 1e-2 * np.linalg.norm(
            exact
        )

    def test_objective_value_is_negative_after_progress(self):
        rng = np.random.default_rng(13)
        a = _random_spd(rng, 4, cond=3.0)
        b = rng.standard_normal(4)
        objective = solvers.QuadraticObjective(solvers.MatrixOperator(a), b)
        config = solvers.SolverConfig(
            tol_rel_residual=1e-2, max_epochs=2000, learning_rate=0.05
        )
        result = solvers.sq_solve(objective, config)
        assert objective.value(result.delta) < 0.0

    def test_minibatch_mode_agrees_with_cg(self):
        op, b = _lr_fixture(lam=2e-2)
        objective = solvers.QuadraticObjective(op, b)
        config = solvers.SolverConfig(
            tol_rel_residual=1e-2,
            max_epochs=60,
            minibatch_size=128,
            learning_rate=0.05,
            seed=7,
        )
        result = solvers.sq_solve(objective, config)
        assert result.converged
        cg = solvers.cg_solve(
            op, b, solvers.SolverConfig(tol_rel_residual=1e-10)
        )
        rel_gap = np.linalg.norm(result.delta - cg.delta) / np.linalg.norm(
            cg.delta
        )
        assert rel_gap <= 0.05

    def test_minibatch_gradients_are_unbiased(self):
        op, b = _lr_fixture(n=1000)
        objective = solvers.QuadraticObjective(op, b)
        rng = np.random.default_rng(14)
        delta = rng.standard_normal(op.dim)
        parts = [
            objective.minibatch_grad(delta, np.arange(s, s + 200))
            for s in range(0, 1000, 200)
        ]
        np.testing.assert_allclose(
            np.mean(parts, axis=0), objective.full_grad(delta), atol=1e-9
        )

    def test_piece_values_average_to_objective_value(self):
        op, b = _lr_fixture(n=1000)
        objective = solvers.QuadraticObjective(op, b)
        rng = np.random.default_rng(15)
        delta = rng.standard_normal(op.dim)
        pieces = [
            objective.piece_value(delta, np.arange(s, s + 200))
            for s in range(0, 1000, 200)
        ]
        np.testing.assert_allclose(
            np.mean(pieces), objective.value(delta), atol=1e-9
        )

    def test_deterministic_given_seed(self):
        op, b = _lr_fixture()
        config = solvers.SolverConfig(
            tol_rel_residual=1e-2, max_epochs=3, minibatch_size=256, seed=5
        )
        first = solvers.sq_solve(solvers.QuadraticObjective(op, b), config)
        second = solvers.sq_solve(solvers.QuadraticObjective(op, b), config)
        np.testing.assert_array_equal(first.delta, second.delta)
        assert first.trace == second.trace

    def test_divergent_learning_rate_raises(self):
        rng = np.random.default_rng(16)
        a = _random_spd(rng, 4, cond=100.0)
        b = rng.standard_normal(4)
        objective = solvers.QuadraticObjective(solvers.MatrixOperator(a), b)
        config = solvers.SolverConfig(
            tol_rel_residual=1e-10, max_epochs=5000, learning_rate=1e12
        )
        try:
            result = solvers.sq_solve(objective, config)
        except solvers.SolverError as err:
            assert err.delta is not None
        else:
            assert not result.converged


class TestDefaults:
    def test_per_solver_tolerances(self):
        assert solvers.default_solver_config("cg").tol_rel_residual == 1e-4
        assert solvers.default_solver_config("sq").tol_rel_residual == 1e-2
        with pytest.raises(ValueError):
            solvers.default_solver_config("gmres")
