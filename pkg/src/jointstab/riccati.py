"""Discrete algebraic Riccati equation and the induced feedback gain."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernels
from .ensemble import as_theta, spectral_radius, split_theta
from .errors import ConvergenceError, NumericalError, UsageError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000

_STATUS = {1: "iteration cap reached", 2: "iterates diverged", 3: "B'PB + R not positive definite"}


@dataclass(frozen=True, eq=False)
class CostMatrices:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-12):
                raise UsageError(f"{name} must be square and symmetric")
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise UsageError(f"{name} must be positive definite") from None
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls, dx, du, r=1.0):
        """``Q = I_dx`` and ``R = r I_du``."""
        return cls(np.eye(dx), r * np.eye(du))


def riccati_map(P, theta, cost):
    """Right-hand side of the Riccati fixed-point equation evaluated at ``P``."""
    A, B = split_theta(theta)
    S = B.T @ P @ B + cost.R
    G = B.T @ P @ A
    return cost.Q + A.T @ P @ A - G.T @ linalg.solve(S, G, assume_a="pos")


def solve_dare(theta, cost, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve the DARE by value iteration from ``P_0 = Q``.

    Stops once the Frobenius norm of the update drops to
    ``tol * max(1, ||P||_F)``. The Frobenius norm bounds the operator norm, so
    the operator-norm residual meets the same threshold.

    Raises
    ------
    ConvergenceError
        If the iteration cap is reached, the iterates diverge (the pair is not
        stabilizable), or the inner solve loses positive definiteness.
    """
    if not tol > 0 or max_iter < 1:
        raise UsageError(f"need tol > 0 and max_iter >= 1, got {tol}, {max_iter}")
    A, B = split_theta(theta)
    if A.shape != cost.Q.shape or B.shape[1] != cost.R.shape[0]:
        raise UsageError(f"cost shapes {cost.Q.shape}/{cost.R.shape} do not match theta")
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise ConvergenceError("theta has non-finite entries", iterations=0)
    P, iterations, status, delta = kernels.dare_value_iteration(
        np.ascontiguousarray(A), np.ascontiguousarray(B), cost.Q, cost.R,
        float(tol), int(max_iter),
    )
    if status != 0:
        raise ConvergenceError(
            f"DARE value iteration failed after {iterations} iterations: "
            f"{_STATUS[status]} (last update {delta:.3e})",
            iterations=iterations, delta=delta,
        )
    return P


def feedback_gain(theta, P, cost):
    """``K = -(B'PB + R)^{-1} B'PA``, solved through a Cholesky factor."""
    A, B = split_theta(theta)
    S = B.T @ P @ B + cost.R
    try:
        factor = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"B'PB + R is not positive definite: {exc}") from exc
    K = -linalg.cho_solve(factor, B.T @ P @ A)
    if not np.isfinite(K).all():
        raise NumericalError("feedback gain has non-finite entries")
    return K


def lqr_gain(theta, cost, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Convenience wrapper: solve the DARE at ``theta`` and return its gain."""
    return feedback_gain(theta, solve_dare(theta, cost, tol, max_iter), cost)


def closed_loop_radius(theta_true, K):
    A, B = split_theta(as_theta(theta_true))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (B.shape[1], A.shape[0]):
        raise UsageError(f"gain shape {K.shape} does not match (du, dx)={(B.shape[1], A.shape[0])}")
    return spectral_radius(A + B @ K)


def is_stabilized(theta_true, K):
    """True iff ``rho(A + B K) < 1`` strictly."""
    return closed_loop_radius(theta_true, K) < 1.0
