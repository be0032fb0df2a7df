import math

import numpy as np
import pytest
from scipy import linalg

from jointstab.ensemble import Dimensions, DynamicsParameter, generate_ensemble
from jointstab.errors import ConvergenceError, UsageError
from jointstab.riccati import (
    CostMatrices, closed_loop_radius, feedback_gain, is_stabilized, lqr_gain, riccati_map,
    solve_dare,
)

SCALAR_P = 2 + math.sqrt(5)


def scalar(a, b):
    return DynamicsParameter(np.array([[a], [b]]))


def test_zero_dynamics_gives_q():
    theta = DynamicsParameter.from_matrices(np.zeros((3, 3)), np.eye(3))
    cost = CostMatrices.identity(3, 3)
    np.testing.assert_allclose(solve_dare(theta, cost), np.eye(3), atol=1e-14)


def test_scalar_closed_form():
    cost = CostMatrices.identity(1, 1)
    P = solve_dare(scalar(2.0, 1.0), cost)
    assert P[0, 0] == pytest.approx(SCALAR_P, abs=1e-9)
    K = feedback_gain(scalar(2.0, 1.0), P, cost)
    assert K[0, 0] == pytest.approx(-2 * SCALAR_P / (SCALAR_P + 1), abs=1e-9)
    assert 2.0 + K[0, 0] == pytest.approx(0.3819660112501051, abs=1e-9)
    assert is_stabilized(scalar(2.0, 1.0), K)


def test_stable_uncontrolled_scalar():
    # geometric series fixed point p = 1 / (1 - a^2)
    P = solve_dare(scalar(0.5, 0.0), CostMatrices.identity(1, 1))
    assert P[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-9)


def test_unstabilizable_pair_fails():
    with pytest.raises(ConvergenceError) as info:
        solve_dare(scalar(2.0, 0.0), CostMatrices.identity(1, 1))
    assert info.value.iterations > 0


def test_iteration_cap():
    rng = np.random.default_rng(1)
    theta = DynamicsParameter.from_matrices(rng.normal(size=(4, 4)), rng.normal(size=(4, 2)))
    with pytest.raises(ConvergenceError, match="iteration cap"):
        solve_dare(theta, CostMatrices.identity(4, 2), max_iter=2)


def test_argument_validation():
    cost = CostMatrices.identity(1, 1)
    with pytest.raises(UsageError):
        solve_dare(scalar(2, 1), cost, tol=0.0)
    with pytest.raises(UsageError):
        solve_dare(scalar(2, 1), cost, max_iter=0)
    with pytest.raises(UsageError):
        solve_dare(scalar(2, 1), CostMatrices.identity(2, 1))
    with pytest.raises(UsageError):
        CostMatrices(np.eye(2), -np.eye(1))
    with pytest.raises(UsageError):
        CostMatrices(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(1))


def test_matches_scipy_solver(rng):
    ens = generate_ensemble(Dimensions(10, 5, 3, 3), seed=3)
    cost = CostMatrices(np.eye(5), 0.25 * np.eye(3))
    for A, B, theta in zip(ens.A, ens.B, ens.thetas):
        ref = linalg.solve_discrete_are(A, B, cost.Q, cost.R)
        np.testing.assert_allclose(solve_dare(theta, cost), ref, rtol=1e-7)


def test_gain_zero_when_a_is_zero(rng):
    theta = DynamicsParameter.from_matrices(np.zeros((3, 3)), rng.normal(size=(3, 2)))
    P = rng.normal(size=(3, 3))
    P = P @ P.T + np.eye(3)
    np.testing.assert_array_equal(feedback_gain(theta, P, CostMatrices.identity(3, 2)), 0.0)


def test_gain_zero_when_b_is_zero(rng):
    theta = DynamicsParameter.from_matrices(rng.normal(size=(3, 3)), np.zeros((3, 2)))
    np.testing.assert_array_equal(feedback_gain(theta, np.eye(3), CostMatrices.identity(3, 2)), 0.0)


def test_zero_gain_leaves_ensemble_unstable():
    ens = generate_ensemble(Dimensions(6, 4, 2, 2), seed=1)
    for theta in ens.thetas:
        assert not is_stabilized(theta, np.zeros((2, 4)))
        assert closed_loop_radius(theta, np.zeros((2, 4))) >= 1.2 - 1e-9


def test_true_gains_stabilize_generated_systems():
    ens = generate_ensemble(Dimensions(100, 6, 3, 3), seed=8)
    cost = CostMatrices.identity(6, 3, 0.25)
    assert all(is_stabilized(t, lqr_gain(t, cost)) for t in ens.thetas)


def test_fixed_point_residual():
    ens = generate_ensemble(Dimensions(20, 5, 2, 2), seed=4)
    cost = CostMatrices.identity(5, 2, 0.25)
    tol = 1e-10
    for theta in ens.thetas:
        P = solve_dare(theta, cost, tol=tol)
        resid = np.linalg.norm(P - riccati_map(P, theta, cost), 2)
        assert resid <= 10 * tol * max(1.0, np.linalg.norm(P, 2))
        assert np.allclose(P, P.T, atol=0)
        assert np.linalg.eigvalsh(P).min() >= -1e-9


def test_value_iteration_monotone():
    ens = generate_ensemble(Dimensions(5, 4, 2, 2), seed=6)
    cost = CostMatrices.identity(4, 2)
    for theta in ens.thetas:
        P = cost.Q.copy()
        for _ in range(200):
            nxt = riccati_map(P, theta, cost)
            nxt = 0.5 * (nxt + nxt.T)
            assert np.linalg.eigvalsh(nxt - P).min() >= -1e-10 * max(1.0, np.linalg.norm(P))
            P = nxt


def test_robust_to_small_perturbations(rng):
    ens = generate_ensemble(Dimensions(20, 5, 3, 3), seed=12)
    cost = CostMatrices.identity(5, 3, 0.25)
    for theta in ens.thetas:
        E = rng.normal(size=theta.shape)
        E *= 1e-3 / np.linalg.norm(E, 2)
        K = lqr_gain(theta + E, cost)
        assert is_stabilized(theta, K)


def test_gain_shape_checked():
    with pytest.raises(UsageError):
        is_stabilized(scalar(2.0, 1.0), np.zeros((2, 2)))
