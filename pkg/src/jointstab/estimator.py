"""Joint shared-basis estimation and the per-system least-squares baseline.

Both estimators minimize the epoch-rescaled squared one-step prediction error:
the samples of epoch ``j`` of system ``i`` are weighted by
``1 / max(||z^(i)_{tau_{j-1}}||^2, 1)``, the squared norm of the regressor at
the start of the epoch, clamped below by one.

The joint fit alternates exact least-squares solves for the weights (bases
fixed) and for the bases (weights fixed). Each system's weighted regressors
are first compressed with a thin QR factorization, so every substep works on
``min(T, n)`` rows per system and never forms normal equations.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels
from .ensemble import DynamicsParameter, SharedBasisFactorization, as_theta
from .errors import NumericalError, UsageError
from .rng import Purpose, stream

log = logging.getLogger(__name__)

# Relative pivot size below which an unregularized substep counts as singular.
_RANK_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """Regressor / next-state pairs for ``m`` systems over a common time grid.

    Attributes
    ----------
    Z : (m, T, dx + du) ndarray
        Regressors ``z_t = [x_t; u_t]`` for ``t = 0..T-1``.
    X_next : (m, T, dx) ndarray
        Next states ``x_{t+1}``.
    boundaries : tuple of int
        Epoch start times ``tau_0 = 0 < tau_1 < ... < tau_k = T``.
    saturated : (m,) bool ndarray
        Overflow flag per system.
    """

    Z: np.ndarray
    X_next: np.ndarray
    boundaries: tuple
    saturated: np.ndarray = None

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        X = np.asarray(self.X_next, dtype=float)
        if Z.ndim != 3 or X.ndim != 3 or Z.shape[:2] != X.shape[:2]:
            raise UsageError(f"inconsistent dataset shapes {Z.shape} and {X.shape}")
        if Z.shape[2] <= X.shape[2]:
            raise UsageError("regressor dimension must exceed state dimension")
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0 or b[-1] != Z.shape[1] or any(
            b1 <= b0 for b0, b1 in zip(b, b[1:])
        ):
            raise UsageError(f"bad epoch boundaries {b} for T={Z.shape[1]}")
        sat = (np.zeros(Z.shape[0], dtype=bool) if self.saturated is None
               else np.asarray(self.saturated, dtype=bool))
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "X_next", X)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "saturated", sat)

    @property
    def m(self):
        return self.Z.shape[0]

    @property
    def T(self):
        return self.Z.shape[1]

    @property
    def k(self):
        return len(self.boundaries) - 1

    @property
    def dx(self):
        return self.X_next.shape[2]

    @property
    def n(self):
        return self.Z.shape[2]

    @property
    def epoch_index(self):
        """Zero-based epoch of every time step, shape ``(T,)``."""
        idx = np.empty(self.T, dtype=np.int64)
        for j, (lo, hi) in enumerate(zip(self.boundaries, self.boundaries[1:])):
            idx[lo:hi] = j
        return idx

    @property
    def epoch_start_regressor_norms(self):
        """``||z^(i)_{tau_{j-1}}||^2`` per system and epoch, shape ``(m, k)``."""
        starts = self.Z[:, list(self.boundaries[:-1]), :]
        return np.einsum("mkn,mkn->mk", starts, starts)

    def row_weights(self, rescale=True):
        """Per-sample loss weights, shape ``(m, T)``."""
        if not rescale:
            return np.ones((self.m, self.T))
        denom = np.maximum(self.epoch_start_regressor_norms, 1.0)
        return (1.0 / denom)[:, self.epoch_index]

    def checksum(self):
        h = hashlib.sha256()
        for arr in (self.Z, self.X_next, np.asarray(self.boundaries)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class FitOptions:
    max_outer_iterations: int = 500
    loss_tolerance: float = 1e-12
    restarts: int = 5
    ridge: float = 1e-10
    seed: int = 0
    rescale: bool = True
    spectral_init: bool = True

    def __post_init__(self):
        if self.restarts < 1:
            raise UsageError("restarts must be >= 1")
        if self.ridge < 0:
            raise UsageError("ridge must be non-negative")
        if self.max_outer_iterations < 1:
            raise UsageError("max_outer_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class JointEstimate:
    fitted: SharedBasisFactorization
    per_system: np.ndarray
    final_loss: float
    iterations: int
    restarts_used: int
    history: list = field(default_factory=list)
    restart_histories: list = field(default_factory=list)

    @property
    def systems(self):
        return [DynamicsParameter(t) for t in self.per_system]

    def to_dict(self):
        return {
            "bases": [b.ravel().tolist() for b in self.fitted.bases],
            "weights": self.fitted.weights.tolist(),
            "final_loss": float(self.final_loss),
            "iterations": int(self.iterations),
            "restarts_used": int(self.restarts_used),
        }


def _stack_thetas(params, m):
    if isinstance(params, SharedBasisFactorization):
        thetas = params.compose_all()
    elif isinstance(params, (list, tuple)):
        thetas = np.stack([as_theta(p) for p in params])
    else:
        thetas = np.asarray(params, dtype=float)
    if thetas.shape[0] != m:
        raise UsageError(f"{thetas.shape[0]} parameters for {m} systems")
    return np.ascontiguousarray(thetas)


def per_system_losses(data, params, rescale=True):
    """Weighted residual sum of every system, shape ``(m,)``."""
    thetas = _stack_thetas(params, data.m)
    if thetas.shape[1:] != (data.n, data.dx):
        raise UsageError(f"parameter shape {thetas.shape[1:]} vs data {(data.n, data.dx)}")
    return kernels.weighted_residuals(thetas, data.Z, data.X_next, data.row_weights(rescale))


def rescaled_loss(data, params, rescale=True):
    """Total epoch-rescaled squared prediction error.

    ``params`` is a SharedBasisFactorization, a sequence of per-system
    parameters, or an ``(m, n, dx)`` array.
    """
    return float(np.sum(per_system_losses(data, params, rescale)))


class _Compressed:
    """Thin-QR summary of the weighted data: ``loss_i = ||R_i theta - Y_i||^2 + c_i``."""

    def __init__(self, data, rescale):
        w = np.sqrt(data.row_weights(rescale))[..., None]
        Zw = data.Z * w
        Yw = data.X_next * w
        if not np.isfinite(Zw).all() or not np.isfinite(Yw).all():
            raise NumericalError("dataset contains non-finite samples")
        if not np.any(Zw):
            raise NumericalError("regressors are identically zero: no excitation to learn from")
        Qm, self.R = np.linalg.qr(Zw)
        self.Y = np.einsum("mtk,mtd->mkd", Qm, Yw)
        resid = Yw - np.einsum("mtk,mkd->mtd", Qm, self.Y)
        self.const = np.einsum("mtd,mtd->m", resid, resid)
        self.m, self.K, self.n = self.R.shape
        self.dx = self.Y.shape[2]

    def losses(self, thetas):
        r = np.einsum("mkn,mnd->mkd", self.R, thetas) - self.Y
        return np.einsum("mkd,mkd->m", r, r) + self.const

    def loss(self, bases, weights):
        return float(np.sum(self.losses(np.tensordot(weights, bases, axes=(1, 0)))))


def _check_pivots(Rt, ridge, what):
    if ridge > 0:
        return
    d = np.abs(np.diagonal(Rt, axis1=-2, axis2=-1))
    scale = d.max(axis=-1, keepdims=True)
    if (d <= _RANK_RTOL * np.maximum(scale, 1e-300)).any():
        raise NumericalError(f"{what} substep is singular (rank-deficient design, ridge=0)")


def _weights_step(comp, bases, ridge):
    ell = bases.shape[0]
    # design column b of system i is vec(R_i Gamma_b)
    D = np.einsum("mkn,bnd->mkdb", comp.R, bases).reshape(comp.m, comp.K * comp.dx, ell)
    y = comp.Y.reshape(comp.m, comp.K * comp.dx)
    if ridge > 0:
        D = np.concatenate([D, np.broadcast_to(math.sqrt(ridge) * np.eye(ell), (comp.m, ell, ell))], axis=1)
        y = np.concatenate([y, np.zeros((comp.m, ell))], axis=1)
    if D.shape[1] < ell:
        raise NumericalError("weights substep is underdetermined (ridge=0)")
    Qd, Rd = np.linalg.qr(D)
    _check_pivots(Rd, ridge, "weights")
    rhs = np.einsum("mrb,mr->mb", Qd, y)
    try:
        return np.linalg.solve(Rd, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"weights substep is singular: {exc}") from exc


def _bases_step(comp, weights, ridge):
    ell = weights.shape[1]
    n = comp.n
    # row block of system i is [w_i1 R_i, ..., w_il R_i]
    D = np.einsum("mb,mkn->mkbn", weights, comp.R).reshape(comp.m * comp.K, ell * n)
    Y = comp.Y.reshape(comp.m * comp.K, comp.dx)
    if ridge > 0:
        D = np.vstack([D, math.sqrt(ridge) * np.eye(ell * n)])
        Y = np.vstack([Y, np.zeros((ell * n, comp.dx))])
    if D.shape[0] < ell * n:
        raise NumericalError("bases substep is underdetermined (ridge=0)")
    Qd, Rd = linalg.qr(D, mode="economic")
    _check_pivots(Rd, ridge, "bases")
    try:
        G = linalg.solve_triangular(Rd, Qd.T @ Y)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"bases substep is singular: {exc}") from exc
    return G.reshape(ell, n, comp.dx)


def als_step_weights(data, bases, ridge=1e-10, rescale=True):
    """Exact minimizer of the loss over the weights for fixed bases, ``(m, ell)``."""
    bases = np.asarray(bases, dtype=float)
    return _weights_step(_Compressed(data, rescale), bases, ridge)


def als_step_bases(data, weights, ridge=1e-10, rescale=True):
    """Exact minimizer of the loss over the bases for fixed weights, ``(ell, n, dx)``."""
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    return _bases_step(_Compressed(data, rescale), weights, ridge)


def _run_als(comp, bases, opts):
    """One alternating-minimization run; returns (bases, weights, history, iters)."""
    weights = _weights_step(comp, bases, opts.ridge)
    loss = comp.loss(bases, weights)
    history = [loss]
    it = 0
    for it in range(1, opts.max_outer_iterations + 1):
        start = loss
        new_bases = _bases_step(comp, weights, opts.ridge)
        new_loss = comp.loss(new_bases, weights)
        # the ridge term can make the exact step worsen the bare loss by ~ridge
        if new_loss <= loss:
            bases, loss = new_bases, new_loss
        history.append(loss)
        new_weights = _weights_step(comp, bases, opts.ridge)
        new_loss = comp.loss(bases, new_weights)
        if new_loss <= loss:
            weights, loss = new_weights, new_loss
        history.append(loss)
        if start - loss <= opts.loss_tolerance * start:
            break
    return bases, weights, history, it


def spectral_bases(comp, ell, ridge=1e-10):
    """Leading right singular vectors of the stacked per-system estimates.

    Each system is fitted alone by ridge least squares on its compressed data;
    the rank-``ell`` principal subspace of the vectorized estimates seeds the
    bases. Systems whose data are uninformative contribute near-zero rows.
    """
    lam = max(ridge, 1e-10)
    n = comp.n
    RtR = np.einsum("mkn,mkp->mnp", comp.R, comp.R) + lam * np.eye(n)
    RtY = np.einsum("mkn,mkd->mnd", comp.R, comp.Y)
    thetas = np.linalg.solve(RtR, RtY)
    flat = thetas.reshape(comp.m, n * comp.dx)
    _, s, vt = np.linalg.svd(flat, full_matrices=False)
    out = np.zeros((ell, n * comp.dx))
    r = min(ell, vt.shape[0])
    out[:r] = vt[:r] * s[:r, None] / math.sqrt(comp.m)
    return out.reshape(ell, n, comp.dx)


def fit_joint(data, ell, opts=None):
    """Fit ``ell`` shared bases and per-system weights to ``data``.

    Runs ``opts.restarts`` alternating least-squares passes from random bases
    (entries normal with standard deviation ``1/sqrt(n)``, one RNG stream per
    restart) and returns the one with the lowest loss; ties go to the earlier
    restart.

    Raises
    ------
    NumericalError
        If the data carry no excitation or, with ``ridge=0``, a substep is
        singular.
    """
    opts = opts or FitOptions()
    if ell < 1:
        raise UsageError("ell must be >= 1")
    comp = _Compressed(data, opts.rescale)
    best = None
    histories = []
    for restart in range(opts.restarts):
        if restart == 0 and opts.spectral_init:
            init = spectral_bases(comp, ell, opts.ridge)
        else:
            rng = stream(opts.seed, Purpose.FIT_INIT, restart)
            init = rng.standard_normal((ell, data.n, data.dx)) / math.sqrt(data.n)
        bases, weights, history, iters = _run_als(comp, init, opts)
        histories.append(history)
        log.debug("restart %d: loss %.6e after %d iterations", restart, history[-1], iters)
        if best is None or history[-1] < best[2][-1]:
            best = (bases, weights, history, iters)
    bases, weights, history, iters = best
    fact = SharedBasisFactorization(bases, weights)
    thetas = fact.compose_all()
    return JointEstimate(
        fitted=fact,
        per_system=thetas,
        final_loss=rescaled_loss(data, thetas, opts.rescale),
        iterations=iters,
        restarts_used=opts.restarts,
        history=history,
        restart_histories=histories,
    )


def fit_individual(data, i, ridge=1e-10, rescale=True):
    """Weighted least squares for system ``i`` alone.

    Minimizes the same rescaled loss restricted to system ``i`` plus
    ``ridge * ||theta||_F^2``.
    """
    if not 0 <= i < data.m:
        raise UsageError(f"system index {i} out of range for m={data.m}")
    return DynamicsParameter(_individual(data, [i], ridge, rescale)[0])


def fit_all_individual(data, ridge=1e-10, rescale=True):
    """``fit_individual`` for every system, shape ``(m, n, dx)``."""
    return _individual(data, range(data.m), ridge, rescale)


def _individual(data, systems, ridge, rescale):
    w = np.sqrt(data.row_weights(rescale))
    out = []
    for i in systems:
        Zw = data.Z[i] * w[i][:, None]
        Yw = data.X_next[i] * w[i][:, None]
        if not np.any(Zw):
            raise NumericalError(f"system {i}: regressors are identically zero")
        if ridge > 0:
            Zw = np.vstack([Zw, math.sqrt(ridge) * np.eye(data.n)])
            Yw = np.vstack([Yw, np.zeros((data.n, data.dx))])
        theta, _, rank, sv = linalg.lstsq(Zw, Yw, lapack_driver="gelsd")
        if rank < data.n:
            raise NumericalError(
                f"system {i}: regressor matrix is rank-deficient ({rank} < {data.n})"
            )
        out.append(theta)
    return np.stack(out)
