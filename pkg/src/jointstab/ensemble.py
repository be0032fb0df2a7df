"""Shared-basis ensembles of linear systems and their open-loop simulation.

Every system ``i`` evolves as ``x_{t+1} = A_i x_t + B_i u_t + xi_t`` and its
dynamics parameter ``theta_i = [A_i, B_i]^T`` is a linear combination of
``ell`` basis matrices shared by the whole ensemble.
"""

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, NumericalError, UsageError
from .rng import Purpose, stream

#: State magnitude above which a trajectory is flagged saturated.
OVERFLOW_GUARD = 1e100

#: Relative slack allowed when re-checking the spectral-radius band.
BAND_RTOL = 1e-9


@dataclass(frozen=True)
class Dimensions:
    m: int
    dx: int
    du: int
    ell: int

    def __post_init__(self):
        for name in ("m", "dx", "du", "ell"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise UsageError(f"{name} must be a positive integer, got {value!r}")
        if self.ell > self.m:
            warnings.warn(
                f"ell={self.ell} exceeds m={self.m}; the bases are not shared",
                stacklevel=3,
            )

    @property
    def n(self):
        """Regressor dimension ``dx + du``."""
        return self.dx + self.du


@dataclass(frozen=True, eq=False)
class DynamicsParameter:
    """Stacked ``theta = [A, B]^T`` of shape ``(dx + du, dx)``."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] <= theta.shape[1]:
            raise UsageError(f"theta must have shape (dx+du, dx), got {theta.shape}")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_matrices(cls, A, B):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        return cls(np.vstack([A.T, B.T]))

    @property
    def dx(self):
        return self.theta.shape[1]

    @property
    def du(self):
        return self.theta.shape[0] - self.theta.shape[1]

    @property
    def A(self):
        return self.theta[: self.dx].T

    @property
    def B(self):
        return self.theta[self.dx :].T

    def __eq__(self, other):
        return isinstance(other, DynamicsParameter) and np.array_equal(
            self.theta, other.theta
        )


def as_theta(theta):
    """Return the raw ``theta`` array of a DynamicsParameter or array-like."""
    if isinstance(theta, DynamicsParameter):
        return theta.theta
    return DynamicsParameter(theta).theta


def split_theta(theta):
    """Return ``(A, B)`` views of a stacked parameter."""
    theta = as_theta(theta)
    dx = theta.shape[1]
    return theta[:dx].T, theta[dx:].T


@dataclass(frozen=True, eq=False)
class SharedBasisFactorization:
    """``ell`` bases of shape ``(n, dx)`` and an ``(m, ell)`` weight matrix."""

    bases: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        bases = np.asarray(self.bases, dtype=float)
        weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if bases.ndim != 3:
            raise UsageError(f"bases must be (ell, n, dx), got {bases.shape}")
        if weights.ndim != 2 or weights.shape[1] != bases.shape[0]:
            raise UsageError(
                f"weights {weights.shape} inconsistent with {bases.shape[0]} bases"
            )
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self):
        return self.weights.shape[0]

    @property
    def ell(self):
        return self.bases.shape[0]

    def compose(self, i):
        return compose_dynamics(self, i)

    def compose_all(self):
        """All parameters at once, shape ``(m, n, dx)``.

        Uses the same per-row arithmetic as ``compose_dynamics`` so the two
        agree bit for bit.
        """
        return np.stack([_combine(w, self.bases) for w in self.weights])


def compose_dynamics(fact, i):
    """Return ``sum_j weights[i, j] * bases[j]`` as a DynamicsParameter."""
    if not 0 <= i < fact.m:
        raise UsageError(f"system index {i} out of range for m={fact.m}")
    return DynamicsParameter(_combine(fact.weights[i], fact.bases))


def _combine(row, bases):
    return np.tensordot(row, bases, axes=(0, 0))


def spectral_radius(M):
    """Largest eigenvalue modulus of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError(f"spectral_radius needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    if not np.isfinite(M).all():
        raise NumericalError("spectral_radius: matrix has non-finite entries")
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigensolver did not converge (condition number {np.linalg.cond(M):.3e})"
        ) from exc
    return float(np.max(np.abs(eig)))


def step(theta, state, input, noise):
    """One transition of the state equation.

    Returns
    -------
    next_state : ndarray
    saturated : bool
        True if any component of ``next_state`` exceeds ``OVERFLOW_GUARD``.
    """
    A, B = split_theta(theta)
    state = np.asarray(state, dtype=float)
    input = np.asarray(input, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if state.shape != (A.shape[0],) or input.shape != (B.shape[1],) or noise.shape != state.shape:
        raise UsageError(
            f"shape mismatch: state {state.shape}, input {input.shape}, "
            f"noise {noise.shape} for dx={A.shape[0]}, du={B.shape[1]}"
        )
    out = A @ state + B @ input + noise
    return out, bool(not (np.abs(out) <= OVERFLOW_GUARD).all())


@dataclass(frozen=True, eq=False)
class Ensemble:
    dims: Dimensions
    truth: SharedBasisFactorization
    sigma_xi: float
    rho_band: tuple = (1.2, 1.5)
    seed: int = 0

    def __post_init__(self):
        if self.truth.m != self.dims.m or self.truth.ell != self.dims.ell:
            raise UsageError("factorization does not match dims")
        if self.truth.bases.shape[1:] != (self.dims.n, self.dims.dx):
            raise UsageError("basis shape does not match dims")
        object.__setattr__(self, "thetas", self.truth.compose_all())

    @property
    def systems(self):
        return [DynamicsParameter(t) for t in self.thetas]

    @property
    def A(self):
        """Transition matrices, shape ``(m, dx, dx)``."""
        return np.ascontiguousarray(self.thetas[:, : self.dims.dx].transpose(0, 2, 1))

    @property
    def B(self):
        """Input matrices, shape ``(m, dx, du)``."""
        return np.ascontiguousarray(self.thetas[:, self.dims.dx :].transpose(0, 2, 1))

    def open_loop_radii(self):
        return np.array([spectral_radius(a) for a in self.A])

    def to_dict(self):
        d = self.dims
        return {
            "dims": {"m": d.m, "dx": d.dx, "du": d.du, "ell": d.ell},
            "sigma_xi": float(self.sigma_xi),
            "bases": [b.ravel().tolist() for b in self.truth.bases],
            "weights": self.truth.weights.tolist(),
            "rho_band": [float(self.rho_band[0]), float(self.rho_band[1])],
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            dd = doc["dims"]
            dims = Dimensions(int(dd["m"]), int(dd["dx"]), int(dd["du"]), int(dd["ell"]))
            bases = np.array(doc["bases"], dtype=float).reshape(dims.ell, dims.n, dims.dx)
            weights = np.array(doc["weights"], dtype=float).reshape(dims.m, dims.ell)
            return cls(
                dims=dims,
                truth=SharedBasisFactorization(bases, weights),
                sigma_xi=float(doc["sigma_xi"]),
                rho_band=tuple(float(v) for v in doc["rho_band"]),
                seed=int(doc["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"malformed ensemble document: {exc}") from exc


def dumps_ensemble(ens):
    # json writes floats with repr, which round-trips every double exactly
    return json.dumps(ens.to_dict(), indent=1)


def save_ensemble(ens, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_ensemble(ens))
        fh.write("\n")


def load_ensemble(path):
    with open(path, encoding="utf-8") as fh:
        return Ensemble.from_dict(json.load(fh))


def generate_ensemble(dims, rho_min=1.2, rho_max=1.5, sigma_xi=2.0, seed=0,
                      max_attempts=1000):
    """Draw a random shared-basis ensemble with open-loop radii in a band.

    Basis entries are standard normal scaled by ``1/sqrt(dx + du)`` and weight
    entries standard normal scaled by ``1/sqrt(ell)``. Each system then gets a
    target radius drawn uniformly from ``[rho_min, rho_max]`` and its weight
    row is rescaled to hit it; rescaling a weight row scales ``theta_i`` as a
    whole, so the shared-basis structure is preserved exactly. An attempt is
    rejected if any composed pair fails the stabilizability witness (a
    converged Riccati solve).

    Raises
    ------
    GenerationError
        If no attempt succeeds within ``max_attempts``.
    """
    from .riccati import CostMatrices, solve_dare
    from .errors import ConvergenceError

    if not 1.0 <= rho_min <= rho_max:
        raise UsageError(f"need 1 <= rho_min <= rho_max, got [{rho_min}, {rho_max}]")
    if not sigma_xi > 0:
        raise UsageError(f"sigma_xi must be positive, got {sigma_xi}")
    cost = CostMatrices.identity(dims.dx, dims.du)
    n = dims.n
    for attempt in range(max_attempts):
        rng = stream(seed, Purpose.ENSEMBLE, attempt)
        bases = rng.standard_normal((dims.ell, n, dims.dx)) / math.sqrt(n)
        weights = rng.standard_normal((dims.m, dims.ell)) / math.sqrt(dims.ell)
        targets = rng.uniform(rho_min, rho_max, size=dims.m)
        fact = SharedBasisFactorization(bases, weights)
        radii = np.array([spectral_radius(t[: dims.dx].T) for t in fact.compose_all()])
        if (radii < 1e-8).any():
            continue
        fact = SharedBasisFactorization(bases, weights * (targets / radii)[:, None])
        ens = Ensemble(dims, fact, float(sigma_xi), (float(rho_min), float(rho_max)), int(seed))
        radii = ens.open_loop_radii()
        slack = BAND_RTOL * rho_max
        if (radii < rho_min - slack).any() or (radii > rho_max + slack).any():
            continue
        try:
            for theta in ens.thetas:
                solve_dare(theta, cost)
        except ConvergenceError:
            continue
        return ens
    raise GenerationError(
        f"no admissible ensemble after {max_attempts} attempts", attempts=max_attempts
    )
