"""Warmup-based tuning: mass matrix, step size, then number of leapfrog steps.

The order follows the usual workflow. The mass matrix comes from the
sample covariance of a warmup chain. The step size is then searched on a
log scale against a target acceptance rate with a small, fixed number of
steps. Finally the number of steps is chosen so that the trajectory length
is close to half a period of the dynamics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, EstimationError
from .hamiltonian import (
    DenseMass,
    DiagonalMass,
    Divergence,
    IdentityMass,
    LeapfrogConfig,
    MassMatrix,
    _integrate,
)
from .hmc import ChainResult, as_generator, run_chain
from .targets import TargetDensity

logger = logging.getLogger(__name__)

__all__ = [
    "MassEstimate",
    "estimate_mass",
    "Probe",
    "StepSizeReport",
    "tune_step_size",
    "TrajectorySuggestion",
    "suggest_trajectory",
    "TuningFailed",
    "WarmupResult",
    "default_accept_target",
    "warmup_pipeline",
]


@dataclass(frozen=True)
class MassEstimate:
    mode: str
    covariance: np.ndarray
    ridge: float
    mass: MassMatrix


def sample_covariance(samples: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance: sum of centered outer products over T - 1."""
    x = np.asarray(samples, dtype=float)
    centered = x - x.mean(axis=0)
    return centered.T @ centered / (x.shape[0] - 1)


def estimate_mass(samples, mode: str = "diagonal", ridge: float | None = None) -> MassEstimate:
    """Mass matrix from warmup draws: M^-1 = sample covariance + ridge * I.

    ``mode="dense"`` keeps the full covariance; ``mode="diagonal"`` uses only the
    marginal variances, so M = diag(1 / variance). The default ridge is
    ``1e-8 * trace / d``.

    Raises:
        EstimationError: too few draws, or a coordinate with zero variance after
            regularization, or a covariance that is not positive definite.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    t, d = x.shape
    if mode not in ("dense", "diagonal"):
        raise ContractViolation(f"mode must be 'dense' or 'diagonal', got {mode!r}")
    min_rows = d + 1 if mode == "dense" else 2
    if t < min_rows:
        raise EstimationError(f"{mode} estimation needs at least {min_rows} draws, got {t}")
    if not np.isfinite(x).all():
        raise EstimationError("warmup draws contain non-finite values")

    if mode == "diagonal":
        centered = x - x.mean(axis=0)
        var = (centered * centered).sum(axis=0) / (t - 1)
        lam = 1e-8 * var.sum() / d if ridge is None else float(ridge)
        var = var + lam
        bad = np.flatnonzero(~(var > 0))
        if bad.size:
            raise EstimationError(f"coordinate {int(bad[0])} has zero variance after regularization")
        return MassEstimate(mode, var, lam, DiagonalMass(1.0 / var))

    cov = sample_covariance(x)
    lam = 1e-8 * np.trace(cov) / d if ridge is None else float(ridge)
    cov = cov + lam * np.eye(d)
    diag = np.diag(cov)
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise EstimationError(f"coordinate {int(bad[0])} has zero variance after regularization")
    try:
        mass = DenseMass(inverse=cov)
    except ContractViolation as exc:
        raise EstimationError(f"estimated covariance is not positive definite: {exc}") from exc
    return MassEstimate(mode, cov, lam, mass)


@dataclass(frozen=True)
class Probe:
    step_size: float
    acceptance: float
    divergences: int


@dataclass(frozen=True)
class StepSizeReport:
    step_size: float
    target: float
    probes: tuple[Probe, ...]
    converged: bool
    message: str = ""

    @property
    def acceptance(self) -> float:
        """Probe acceptance at the chosen step size."""
        for pr in self.probes:
            if pr.step_size == self.step_size:
                return pr.acceptance
        return math.nan


def tune_step_size(target: TargetDensity, mass: MassMatrix | None, num_steps: int,
                   accept_target: float, x0=None, rng=None, *, probe_iterations: int = 500,
                   max_doublings: int = 40, max_bisections: int = 20) -> StepSizeReport:
    """Search for the step size whose acceptance matches ``accept_target``.

    Starting from 0.1 * d**-0.25, the step size is doubled or halved until two
    probes bracket the target, then the bracket is bisected on a log scale.
    Each probe is a ``probe_iterations``-long chain from ``x0``. All probes
    reuse one random stream (common random numbers), and acceptance is
    measured as the mean of min(1, exp(-delta H)). Both choices make the
    measured curve close to monotone in the step size.

    A failure to bracket is reported through ``converged=False`` rather than
    raised.
    """
    if not 0.05 < accept_target < 1.0:
        raise ContractViolation(f"acceptance target must lie in (0.05, 1), got {accept_target}")
    gen, _ = as_generator(rng)
    mass = IdentityMass(target.dim) if mass is None else mass
    probe_seed = int(gen.integers(2**63))
    probes: list[Probe] = []

    def probe(eps: float) -> float:
        chain = run_chain(target, mass, LeapfrogConfig(eps, num_steps), probe_iterations, x0,
                          np.random.default_rng(probe_seed))
        pr = Probe(eps, chain.mean_accept_prob, len(chain.divergences))
        probes.append(pr)
        logger.debug("step size probe %.6g -> acceptance %.4f", eps, pr.acceptance)
        return pr.acceptance

    tol = min(0.01, 0.1 * (1.0 - accept_target))
    eps = 0.1 * target.dim ** -0.25
    acc = probe(eps)
    lo = hi = None
    if acc >= accept_target:
        lo = eps
        for _ in range(max_doublings):
            eps *= 2.0
            if probe(eps) < accept_target:
                hi = eps
                break
            lo = eps
    else:
        hi = eps
        for _ in range(max_doublings):
            eps /= 2.0
            if probe(eps) >= accept_target:
                lo = eps
                break
            hi = eps

    if lo is None or hi is None:
        best = min(probes, key=lambda pr: abs(pr.acceptance - accept_target))
        return StepSizeReport(best.step_size, accept_target, tuple(probes), False,
                              f"could not bracket the target within {max_doublings} doublings")

    for _ in range(max_bisections):
        if abs(probes[-1].acceptance - accept_target) <= tol:
            break
        mid = math.sqrt(lo * hi)
        if probe(mid) >= accept_target:
            lo = mid
        else:
            hi = mid

    best = min(probes, key=lambda pr: (abs(pr.acceptance - accept_target), -pr.step_size))
    converged = abs(best.acceptance - accept_target) <= 0.05
    msg = "" if converged else "no probe came within 0.05 of the target"
    return StepSizeReport(best.step_size, accept_target, tuple(probes), converged, msg)


@dataclass(frozen=True)
class TrajectorySuggestion:
    num_steps: int
    uturn_time: float
    truncated: bool


def suggest_trajectory(target: TargetDensity, mass: MassMatrix | None, step_size: float,
                       budget_gradients: int, x0=None) -> TrajectorySuggestion:
    """Number of leapfrog steps that brings the trajectory length near a half period.

    A probe particle is released at rest from ``x0`` (default: the all-ones
    point) and integrated until the displacement ``x_t - x_0`` and the velocity
    ``M^-1 p_t`` first point in opposite directions. Released from rest, that
    happens at the far turning point, i.e. after half a period. The crossing
    time is linearly interpolated between steps, and the suggestion is
    ``clamp(round(t / step_size), 1, budget_gradients)``.

    If no U-turn occurs within the budget, the budget is returned with
    ``truncated=True``.
    """
    if not (math.isfinite(step_size) and step_size > 0):
        raise ContractViolation("step size must be positive")
    if budget_gradients < 1:
        raise ContractViolation("gradient budget must be at least 1")
    mass = IdentityMass(target.dim) if mass is None else mass
    x_start = np.ones(target.dim) if x0 is None else target._as_point(x0).copy()
    x, p = x_start, np.zeros(target.dim)
    prev = 0.0
    for k in range(1, budget_gradients + 1):
        try:
            x, p = _integrate(target, mass, x, p, step_size, 1)
        except Divergence:
            break
        inner = float((x - x_start) @ mass.velocity(p))
        if inner < 0:
            frac = prev / (prev - inner)
            t_star = step_size * (k - 1 + frac)
            n = int(min(max(round(t_star / step_size), 1), budget_gradients))
            return TrajectorySuggestion(n, t_star, False)
        prev = inner
    return TrajectorySuggestion(int(budget_gradients), math.nan, True)


def default_accept_target(dim: int) -> float:
    return 0.85 if dim < 20 else 0.651


class TuningFailed(RuntimeError):
    """A warmup stage could not reach its acceptance target."""

    def __init__(self, stage: str, report: StepSizeReport, partial: dict):
        self.stage = stage
        self.report = report
        self.partial = partial
        super().__init__(f"{stage}: {report.message}")


@dataclass(frozen=True)
class WarmupResult:
    mass: MassMatrix
    config: LeapfrogConfig
    warmup_chain: ChainResult
    mass_estimate: MassEstimate
    stage1: StepSizeReport
    stage2: StepSizeReport
    trajectory: TrajectorySuggestion | None = None
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        # Unpacks as (mass, config, warmup_chain).
        return iter((self.mass, self.config, self.warmup_chain))


def warmup_pipeline(target: TargetDensity, warmup_iterations: int, mode: str = "diagonal",
                    accept_target: float | None = None, rng=None, *, x0=None, tune_steps: int = 10,
                    num_steps: int | None = None, budget_gradients: int = 256) -> WarmupResult:
    """Two-stage warmup: naive HMC, then a preconditioned re-tune.

    Stage 1 tunes the step size with the identity mass and runs
    ``warmup_iterations`` HMC transitions. The second half of that chain gives
    the mass matrix (``mode`` is "diagonal" or "dense"). Stage 2 re-tunes the
    step size under the new mass from the last warmup draw. The number of
    steps is ``num_steps`` if given, else the half-period suggestion.

    ``rng`` is split into four independent streams: stage-1 tuning, the
    warmup chain, stage-2 tuning, and one spare.

    Raises:
        TuningFailed: if either step-size search misses its target.
    """
    if warmup_iterations < 1000:
        raise ContractViolation(f"warmup needs at least 1000 iterations, got {warmup_iterations}")
    gen, _ = as_generator(rng)
    streams = gen.spawn(4)
    if accept_target is None:
        accept_target = default_accept_target(target.dim)
    x0 = np.zeros(target.dim) if x0 is None else target._as_point(x0)

    identity = IdentityMass(target.dim)
    stage1 = tune_step_size(target, identity, tune_steps, accept_target, x0, streams[0])
    if not stage1.converged:
        raise TuningFailed("stage 1", stage1, {"stage1": stage1})
    logger.info("stage 1 step size %.4g (acceptance %.3f)", stage1.step_size, stage1.acceptance)
    chain = run_chain(target, identity, LeapfrogConfig(stage1.step_size, tune_steps),
                      warmup_iterations, x0, streams[1])

    estimate = estimate_mass(chain.samples[warmup_iterations // 2:], mode)
    x_last = chain.samples[-1]
    stage2 = tune_step_size(target, estimate.mass, tune_steps, accept_target, x_last, streams[2])
    if not stage2.converged:
        raise TuningFailed("stage 2", stage2,
                           {"stage1": stage1, "warmup_chain": chain, "mass_estimate": estimate, "stage2": stage2})
    logger.info("stage 2 step size %.4g (acceptance %.3f)", stage2.step_size, stage2.acceptance)

    suggestion = None
    if num_steps is None:
        suggestion = suggest_trajectory(target, estimate.mass, stage2.step_size, budget_gradients, x_last)
        num_steps = suggestion.num_steps
    return WarmupResult(estimate.mass, LeapfrogConfig(stage2.step_size, num_steps), chain, estimate,
                        stage1, stage2, suggestion)
