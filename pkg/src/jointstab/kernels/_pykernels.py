"""Pure numpy implementations of the hot kernels.

Signatures and return conventions match the compiled ``_ckernels`` module
exactly; ``jointstab.kernels`` re-exports whichever one is importable.
"""

import numpy as np
from scipy import linalg

DIVERGENCE_LIMIT = 1e150


def dare_value_iteration(A, B, Q, R, tol, max_iter):
    """Iterate the discrete Riccati map from ``P = Q``.

    Returns
    -------
    P : ndarray
        Last iterate.
    iterations : int
        Number of map applications performed.
    status : int
        0 converged, 1 iteration cap, 2 diverged, 3 singular inner solve.
    delta : float
        Frobenius norm of the last update.
    """
    P = np.array(Q, dtype=float, copy=True)
    delta = np.inf
    for it in range(1, max_iter + 1):
        PA = P @ A
        PB = P @ B
        S = B.T @ PB + R
        G = B.T @ PA
        try:
            X = linalg.cho_solve(linalg.cho_factor(S, lower=True), G)
        except linalg.LinAlgError:
            return P, it, 3, delta
        P_next = Q + A.T @ PA - G.T @ X
        P_next = 0.5 * (P_next + P_next.T)
        delta = float(np.linalg.norm(P_next - P))
        scale = float(np.linalg.norm(P_next))
        if not np.isfinite(scale) or scale > DIVERGENCE_LIMIT:
            return P_next, it, 2, delta
        P = P_next
        if delta <= tol * max(1.0, scale):
            return P, it, 0, delta
    return P, max_iter, 1, delta


def simulate(A, B, K, epoch_of_t, eta, xi, guard):
    """Run every system in closed loop ``u = K_j x + eta`` from ``x_0 = 0``.

    Parameters
    ----------
    A : (m, dx, dx) ndarray
    B : (m, dx, du) ndarray
    K : (k, du, dx) ndarray
        One feedback matrix per epoch, shared by all systems.
    epoch_of_t : (T,) int ndarray
    eta : (m, T, du) ndarray
        Dither.
    xi : (m, T, dx) ndarray
        Process noise.
    guard : float
        Magnitude above which a trajectory is flagged saturated.

    Returns
    -------
    Z : (m, T, dx + du) ndarray
        Regressors ``[x_t; u_t]``.
    X_next : (m, T, dx) ndarray
    saturated : (m,) uint8 ndarray
    """
    m, dx, _ = A.shape
    du = B.shape[2]
    T = epoch_of_t.shape[0]
    Z = np.empty((m, T, dx + du))
    X_next = np.empty((m, T, dx))
    saturated = np.zeros(m, dtype=np.uint8)
    x = np.zeros((m, dx))
    for t in range(T):
        u = x @ K[epoch_of_t[t]].T + eta[:, t]
        Z[:, t, :dx] = x
        Z[:, t, dx:] = u
        x = np.einsum("mij,mj->mi", A, x) + np.einsum("mij,mj->mi", B, u) + xi[:, t]
        X_next[:, t] = x
        with np.errstate(invalid="ignore"):
            bad = ~(np.abs(x) <= guard).all(axis=1)
        saturated |= bad.astype(np.uint8)
    return Z, X_next, saturated


def weighted_residuals(theta, Z, X_next, row_weight):
    """Per-system weighted residual sums ``sum_t w_t ||x' - theta^T z||^2``.

    ``theta`` is ``(m, n, dx)``, ``row_weight`` is ``(m, T)``.
    """
    resid = X_next - np.einsum("mtn,mnd->mtd", Z, theta)
    return np.einsum("mt,mtd,mtd->m", row_weight, resid, resid)
