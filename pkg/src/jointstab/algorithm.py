"""Joint learning-based stabilization, end to end.

For each of ``k`` epochs a random feedback matrix is drawn and applied to all
systems at once, with independent Gaussian dither added per system and time
step. The collected data are fitted jointly, a Riccati gain is synthesized at
every estimated parameter, and success is judged against the true dynamics.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .ensemble import OVERFLOW_GUARD, Dimensions
from .errors import NumericalError, UsageError
from .estimator import FitOptions, TrajectoryDataset, fit_all_individual, fit_joint, per_system_losses
from .riccati import CostMatrices, closed_loop_radius, feedback_gain, solve_dare
from .rng import Purpose, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlgorithmConfig:
    T: int
    k: int
    sigma_g: float = 0.3
    sigma_eta: float = 2.0
    cost: CostMatrices = None
    fit: FitOptions = field(default_factory=FitOptions)
    seed: int = 0
    noiseless: bool = False
    r: float = 0.25

    def __post_init__(self):
        if self.k < 1 or self.T < self.k:
            raise UsageError(f"need 1 <= k <= T, got T={self.T}, k={self.k}")
        if self.sigma_g < 0 or self.sigma_eta < 0:
            raise UsageError("sigma_g and sigma_eta must be non-negative")

    def cost_for(self, dims):
        if self.cost is not None:
            return self.cost
        return CostMatrices.identity(dims.dx, dims.du, self.r)


def epoch_boundaries(T, k):
    """``(floor(j T / k))_{j=0..k}``."""
    if int(T) != T or int(k) != k or not 1 <= k <= T:
        raise UsageError(f"need integers 1 <= k <= T, got T={T}, k={k}")
    return tuple((j * int(T)) // int(k) for j in range(int(k) + 1))


def sample_feedback(sigma_g, dims, rng):
    """Random ``du x dx`` feedback whose rows are i.i.d. ``N(0, sigma_g^2 I)``."""
    if sigma_g < 0:
        raise UsageError("sigma_g must be non-negative")
    return sigma_g * rng.standard_normal((dims.du, dims.dx))


def collect_data(ensemble, cfg):
    """Run the excitation phase and return ``(dataset, feedbacks)``.

    Random streams: epoch ``j`` feedback from ``(FEEDBACK, 0, j)``; system
    ``i`` dither from ``(DITHER, i)`` and noise from ``(NOISE, i)``, drawn in
    time order, so changing ``T`` or ``k`` leaves all shared draws intact.
    """
    dims = ensemble.dims
    boundaries = epoch_boundaries(cfg.T, cfg.k)
    K = np.stack([
        sample_feedback(cfg.sigma_g, dims, stream(cfg.seed, Purpose.FEEDBACK, 0, j))
        for j in range(cfg.k)
    ])
    eta = np.stack([
        cfg.sigma_eta * stream(cfg.seed, Purpose.DITHER, i).standard_normal((cfg.T, dims.du))
        for i in range(dims.m)
    ])
    sigma_xi = 0.0 if cfg.noiseless else ensemble.sigma_xi
    xi = np.stack([
        sigma_xi * stream(cfg.seed, Purpose.NOISE, i).standard_normal((cfg.T, dims.dx))
        for i in range(dims.m)
    ])
    epoch_of_t = np.repeat(np.arange(cfg.k), np.diff(boundaries))
    Z, X_next, saturated = kernels.simulate(
        ensemble.A, ensemble.B, K, epoch_of_t, eta, xi, OVERFLOW_GUARD
    )
    data = TrajectoryDataset(Z, X_next, boundaries, saturated.astype(bool))
    if data.saturated.any():
        log.warning("%d trajectories exceeded the overflow guard", int(data.saturated.sum()))
    return data, K


@dataclass(frozen=True, eq=False)
class StabilizationOutcome:
    method: str
    gains: list
    per_system_stabilized: np.ndarray
    closed_loop_rho: np.ndarray
    estimates: np.ndarray = None
    estimate: object = None
    dataset: TrajectoryDataset = None
    losses: np.ndarray = None
    failure: str = None

    @property
    def fraction_stabilized(self):
        return float(np.mean(self.per_system_stabilized))

    @property
    def mean_rho(self):
        finite = self.closed_loop_rho[np.isfinite(self.closed_loop_rho)]
        return float(finite.mean()) if finite.size else math.nan

    def to_dict(self):
        return {
            "method": self.method,
            "fraction_stabilized": self.fraction_stabilized,
            "mean_rho": _json_float(self.mean_rho),
            "stabilized": [bool(v) for v in self.per_system_stabilized],
            "closed_loop_rho": [_json_float(v) for v in self.closed_loop_rho],
            "losses": None if self.losses is None else [_json_float(v) for v in self.losses],
            "synthesis_failed": [g is None for g in self.gains],
            "saturated": None if self.dataset is None else [bool(v) for v in self.dataset.saturated],
            "failure": self.failure,
        }


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def synthesize(ensemble, estimates, cost):
    """Riccati gains at each estimate, judged against the true systems.

    Returns ``(gains, stabilized, rho)``; a system whose Riccati solve fails
    gets gain ``None``, flag False and radius NaN.
    """
    gains, flags, rho = [], [], []
    for theta_hat, theta_true in zip(estimates, ensemble.thetas):
        try:
            K = feedback_gain(theta_hat, solve_dare(theta_hat, cost), cost)
            r = closed_loop_radius(theta_true, K)
        except NumericalError as exc:
            log.debug("gain synthesis failed: %s", exc)
            gains.append(None)
            flags.append(False)
            rho.append(math.nan)
            continue
        gains.append(K)
        flags.append(r < 1.0)
        rho.append(r)
    return gains, np.array(flags, dtype=bool), np.array(rho)


def _failed(method, m, data, reason):
    return StabilizationOutcome(
        method=method, gains=[None] * m,
        per_system_stabilized=np.zeros(m, dtype=bool),
        closed_loop_rho=np.full(m, math.nan), dataset=data, failure=reason,
    )


def joint_outcome(ensemble, data, cfg, estimate=None):
    """Fit jointly (unless ``estimate`` is given) and synthesize gains."""
    m = ensemble.dims.m
    if estimate is None:
        try:
            estimate = fit_joint(data, ensemble.dims.ell, replace(cfg.fit, seed=cfg.seed))
        except NumericalError as exc:
            return _failed("joint", m, data, str(exc))
    gains, flags, rho = synthesize(ensemble, estimate.per_system, cfg.cost_for(ensemble.dims))
    return StabilizationOutcome(
        method="joint", gains=gains, per_system_stabilized=flags, closed_loop_rho=rho,
        estimates=estimate.per_system, estimate=estimate, dataset=data,
        losses=per_system_losses(data, estimate.per_system, cfg.fit.rescale),
    )


def run_algorithm1(ensemble, cfg):
    """Excite, fit jointly, and synthesize gains for every system."""
    data, _ = collect_data(ensemble, cfg)
    return joint_outcome(ensemble, data, cfg)


def run_individual_baseline(ensemble, dataset, cfg, estimates=None):
    """Per-system least squares on the same dataset, then the same synthesis."""
    m = ensemble.dims.m
    if estimates is None:
        try:
            estimates = fit_all_individual(dataset, cfg.fit.ridge, cfg.fit.rescale)
        except NumericalError as exc:
            return _failed("individual", m, dataset, str(exc))
    gains, flags, rho = synthesize(ensemble, estimates, cfg.cost_for(ensemble.dims))
    return StabilizationOutcome(
        method="individual", gains=gains, per_system_stabilized=flags, closed_loop_rho=rho,
        estimates=estimates, dataset=dataset,
        losses=per_system_losses(dataset, estimates, cfg.fit.rescale),
    )
