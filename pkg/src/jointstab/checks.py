"""Self-checks run by ``jointstab check``.

Each check returns ``(name, passed, detail)``. They use closed forms or
brute-force loops that do not share code paths with the library routines.
"""

import math

import numpy as np

from . import kernels
from .algorithm import epoch_boundaries
from .ensemble import Dimensions, compose_dynamics, generate_ensemble, spectral_radius
from .estimator import FitOptions, TrajectoryDataset, fit_joint, rescaled_loss
from .riccati import CostMatrices, feedback_gain, is_stabilized, lqr_gain, solve_dare


def check_scalar_dare():
    theta = np.array([[2.0], [1.0]])
    cost = CostMatrices.identity(1, 1)
    P = solve_dare(theta, cost)
    K = feedback_gain(theta, P, cost)
    p = 2 + math.sqrt(5)
    ok = abs(P[0, 0] - p) < 1e-9 and abs(K[0, 0] + 2 * p / (p + 1)) < 1e-9
    return "scalar DARE closed form", ok, f"p={P[0, 0]:.12f} K={K[0, 0]:.12f}"


def check_true_gains(n_systems=100):
    ens = generate_ensemble(Dimensions(n_systems, 6, 3, 3), seed=11)
    cost = CostMatrices.identity(6, 3, 0.25)
    count = sum(is_stabilized(t, lqr_gain(t, cost)) for t in ens.thetas)
    return "true-parameter gains stabilize", count == n_systems, f"{count}/{n_systems}"


def check_ensemble_invariants():
    dims = Dimensions(12, 4, 2, 3)
    ens = generate_ensemble(dims, seed=3)
    again = generate_ensemble(dims, seed=3)
    radii = [spectral_radius(a) for a in ens.A]
    band = all(1.2 - 1e-9 <= r <= 1.5 + 1e-9 for r in radii)
    compose = all(
        np.array_equal(ens.thetas[i], compose_dynamics(ens.truth, i).theta) for i in range(dims.m)
    )
    same = np.array_equal(ens.truth.bases, again.truth.bases) and np.array_equal(
        ens.truth.weights, again.truth.weights)
    return ("ensemble band/composition/determinism", band and compose and same,
            f"rho in [{min(radii):.4f}, {max(radii):.4f}]")


def check_loss_oracle(trials=5):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(trials):
        m, T, dx, du = 2, 6, 2, 1
        data = TrajectoryDataset(rng.normal(size=(m, T, dx + du)) * 2,
                                 rng.normal(size=(m, T, dx)), (0, 3, 6))
        thetas = rng.normal(size=(m, dx + du, dx))
        total = 0.0
        for i in range(m):
            for lo, hi in ((0, 3), (3, 6)):
                denom = max(sum(v * v for v in data.Z[i, lo]), 1.0)
                for t in range(lo, hi):
                    for a in range(dx):
                        pred = sum(thetas[i, b, a] * data.Z[i, t, b] for b in range(dx + du))
                        total += (data.X_next[i, t, a] - pred) ** 2 / denom
        worst = max(worst, abs(rescaled_loss(data, thetas) - total) / total)
    return "rescaled loss vs loop oracle", worst <= 1e-12, f"max rel err {worst:.2e}"


def check_als_monotone(runs=10):
    rng = np.random.default_rng(5)
    worst = 0.0
    for s in range(runs):
        data = TrajectoryDataset(rng.normal(size=(4, 12, 5)), rng.normal(size=(4, 12, 3)), (0, 4, 8, 12))
        est = fit_joint(data, 2, FitOptions(restarts=2, max_outer_iterations=50, seed=s))
        for h in est.restart_histories:
            worst = max(worst, float(np.max(np.diff(h), initial=0.0)))
    return "ALS loss non-increasing", worst <= 1e-12, f"max increase {worst:.2e}"


def check_epoch_schedule(T_max=200):
    ok = all(
        epoch_boundaries(T, k) == tuple(math.floor(j * T / k) for j in range(k + 1))
        for T in range(1, T_max + 1) for k in range(1, T + 1)
    )
    return "epoch schedule floor(jT/k)", ok, f"1 <= k <= T <= {T_max}"


def check_backends():
    backends = kernels.available_backends()
    if len(backends) < 2:
        return "compiled and numpy kernels agree", True, "only numpy backend available"
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4)) * 0.5
    B = rng.normal(size=(4, 2))
    outs = [mod.dare_value_iteration(A, B, np.eye(4), np.eye(2), 1e-12, 10000)[0]
            for mod in backends.values()]
    err = float(np.max(np.abs(outs[0] - outs[1])) / np.max(np.abs(outs[0])))
    return "compiled and numpy kernels agree", err < 1e-9, f"DARE rel diff {err:.2e}"


ALL_CHECKS = (
    check_scalar_dare,
    check_true_gains,
    check_ensemble_invariants,
    check_loss_oracle,
    check_als_monotone,
    check_epoch_schedule,
    check_backends,
)


def run_checks():
    return [check() for check in ALL_CHECKS]
