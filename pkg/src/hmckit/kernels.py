"""Metropolis-Hastings kernels and the Metropolis-Hastings-Green kernel with Jacobians.

All acceptance decisions are made on the log scale: a candidate is accepted
when ``log W < min(0, log r)`` with ``W ~ Uniform(0, 1)``. A non-finite
``log r`` rejects the candidate and marks the step divergent instead of
raising, so long chains keep running.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .hamiltonian import (
    DiagonalMass,
    Divergence,
    IdentityMass,
    LeapfrogConfig,
    MassMatrix,
    PhaseState,
    _integrate,
    gaussian_flow,
)
from .targets import TargetDensity

__all__ = [
    "Transition",
    "Proposal",
    "RandomWalkProposal",
    "MALAProposal",
    "rwm_proposal",
    "mala_proposal",
    "log_acceptance_ratio",
    "mh_step",
    "AuxiliaryConditional",
    "GaussianMomentum",
    "LogNormalScale",
    "Involution",
    "IdentityInvolution",
    "MomentumFlipInvolution",
    "GaussianFlowInvolution",
    "LeapfrogInvolution",
    "ScaleInvolution",
    "mhgj_log_ratio",
    "mhgj_step",
]

_LOG_2PI = math.log(2.0 * math.pi)


class Transition(NamedTuple):
    position: np.ndarray
    accepted: bool
    log_ratio: float
    divergent: bool
    log_density: float


def _accept(log_ratio: float, rng) -> bool:
    w = rng.random()
    return math.log(w) < min(0.0, log_ratio) if w > 0 else True


class Proposal:
    """Candidate generator q(. | x) with the log ratio log q(x | x*) - log q(x* | x)."""

    symmetric = False

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_density_ratio(self, x: np.ndarray, x_star: np.ndarray) -> float:
        raise NotImplementedError


class RandomWalkProposal(Proposal):
    """x* ~ N(x, h I). ``h`` is a variance."""

    symmetric = True

    def __init__(self, h: float):
        if not (math.isfinite(h) and h > 0):
            raise ConfigurationError(f"random-walk scale must be positive, got {h}")
        self.h = float(h)
        self._sd = math.sqrt(self.h)

    def sample(self, x, rng):
        return x + self._sd * rng.standard_normal(x.shape[0])

    def log_density_ratio(self, x, x_star):
        return 0.0


class MALAProposal(Proposal):
    """Langevin proposal x* ~ N(x + (h/2) grad log density(x), h I)."""

    def __init__(self, target: TargetDensity, h: float):
        if not (math.isfinite(h) and h > 0):
            raise ConfigurationError(f"MALA scale must be positive, got {h}")
        self.target = target
        self.h = float(h)
        self._sd = math.sqrt(self.h)

    def mean(self, x: np.ndarray) -> np.ndarray:
        return x + 0.5 * self.h * self.target._grad(x)

    def sample(self, x, rng):
        z = rng.standard_normal(x.shape[0])
        with np.errstate(over="ignore", invalid="ignore"):
            return self.mean(x) + self._sd * z

    def _log_q(self, to, frm):
        r = to - self.mean(frm)
        return -0.5 * (r @ r) / self.h

    def log_density_ratio(self, x, x_star):
        with np.errstate(over="ignore", invalid="ignore"):
            return float(self._log_q(x, x_star) - self._log_q(x_star, x))


def rwm_proposal(h: float) -> RandomWalkProposal:
    return RandomWalkProposal(h)


def mala_proposal(target: TargetDensity, h: float) -> MALAProposal:
    return MALAProposal(target, h)


def log_acceptance_ratio(target: TargetDensity, proposal: Proposal, x, x_star) -> float:
    """log r for moving from ``x`` to ``x_star``; ``-inf`` when the candidate has zero density."""
    x = target._as_point(x)
    x_star = target._as_point(x_star)
    lp_star = target.log_density(x_star)
    if lp_star == -math.inf:
        return -math.inf
    return lp_star - target.log_density(x) + proposal.log_density_ratio(x, x_star)


def mh_step(target: TargetDensity, proposal: Proposal, x, rng: np.random.Generator,
            log_px: float | None = None) -> Transition:
    """One Metropolis-Hastings transition.

    The candidate is drawn first, then the uniform used for the accept test,
    so chains are reproducible from the generator state alone. ``log_px``
    may carry the cached log density of ``x``.
    """
    if log_px is None:
        log_px = target.log_density(x)
    x_star = proposal.sample(x, rng)
    if not np.isfinite(x_star).all():
        rng.random()
        return Transition(x, False, math.nan, True, log_px)
    lp_star = target._log_density(x_star)
    if lp_star == -math.inf:
        rng.random()
        return Transition(x, False, -math.inf, False, log_px)
    log_r = lp_star - log_px + proposal.log_density_ratio(x, x_star)
    if math.isnan(log_r):
        rng.random()
        return Transition(x, False, log_r, True, log_px)
    if _accept(log_r, rng):
        return Transition(x_star, True, log_r, False, lp_star)
    return Transition(x, False, log_r, False, log_px)


# --- Metropolis-Hastings-Green with Jacobians --------------------------------


class AuxiliaryConditional:
    """Conditional distribution S(. | x) of the auxiliary variable."""

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, y: np.ndarray, x: np.ndarray) -> float:
        raise NotImplementedError


class GaussianMomentum(AuxiliaryConditional):
    """Momentum refresh y ~ N(0, M), independent of the position."""

    def __init__(self, mass: MassMatrix):
        self.mass = mass
        if isinstance(mass, IdentityMass):
            logdet = 0.0
        elif isinstance(mass, DiagonalMass):
            logdet = float(np.log(mass.diagonal).sum())
        else:
            logdet = float(np.linalg.slogdet(mass.matrix)[1])
        self._norm = -0.5 * (mass.dim * _LOG_2PI + logdet)

    def sample(self, x, rng):
        return self.mass.sample(rng)

    def log_density(self, y, x):
        return self._norm - self.mass.kinetic(y)


class LogNormalScale(AuxiliaryConditional):
    """Scalar multiplier u ~ LogNormal(0, sigma^2), stored as a length-1 vector."""

    def __init__(self, sigma: float = 0.5):
        if not sigma > 0:
            raise ConfigurationError("log-normal sigma must be positive")
        self.sigma = float(sigma)

    def sample(self, x, rng):
        return np.array([math.exp(self.sigma * rng.standard_normal())])

    def log_density(self, y, x):
        u = float(y[0])
        if u <= 0:
            return -math.inf
        lu = math.log(u)
        return -lu - math.log(self.sigma) - 0.5 * _LOG_2PI - 0.5 * (lu / self.sigma) ** 2


class Involution:
    """Self-inverse map g on the augmented space with its log |det Jacobian|."""

    def apply(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def log_abs_det_jacobian(self, x: np.ndarray, y: np.ndarray) -> float:
        return 0.0


class IdentityInvolution(Involution):
    def apply(self, x, y):
        return x, y


class MomentumFlipInvolution(Involution):
    """(x, p) -> (x, -p)."""

    def apply(self, x, y):
        return x, -y


class GaussianFlowInvolution(Involution):
    """Exact standard-normal flow for time ``s`` followed by a momentum flip."""

    def __init__(self, s: float):
        self.s = float(s)

    def apply(self, x, y):
        z = gaussian_flow(PhaseState(x, y), self.s)
        return z.position, -z.momentum


class LeapfrogInvolution(Involution):
    """Leapfrog trajectory followed by a momentum flip; volume preserving.

    Raises ``Divergence`` from ``apply`` when the trajectory blows up.
    """

    def __init__(self, target: TargetDensity, mass: MassMatrix, cfg: LeapfrogConfig):
        self.target = target
        self.mass = mass
        self.cfg = cfg

    def apply(self, x, y):
        xs, ps = _integrate(self.target, self.mass, x, y, self.cfg.step_size, self.cfg.num_steps)
        return xs, -ps


class ScaleInvolution(Involution):
    """(x, u) -> (u x, 1/u) for a positive scalar u.

    Not volume preserving: log |det| = (d - 2) log u.
    """

    def apply(self, x, y):
        u = y[0]
        return u * x, np.array([1.0 / u])

    def log_abs_det_jacobian(self, x, y):
        return (x.shape[0] - 2) * math.log(abs(y[0]))


def mhgj_log_ratio(target, aux, g, x, y) -> tuple[np.ndarray, np.ndarray, float]:
    """Apply ``g`` to (x, y) and return (x*, y*, log r)."""
    x_star, y_star = g.apply(x, y)
    lp_star = target._log_density(x_star)
    if lp_star == -math.inf:
        return x_star, y_star, -math.inf
    log_r = (lp_star + aux.log_density(y_star, x_star)
             - target._log_density(x) - aux.log_density(y, x)
             + g.log_abs_det_jacobian(x, y))
    return x_star, y_star, log_r


def mhgj_step(target: TargetDensity, aux: AuxiliaryConditional, g: Involution, x,
              rng: np.random.Generator, log_px: float | None = None) -> Transition:
    """Gibbs refresh of the auxiliary variable, then a deterministic involutive proposal.

    The auxiliary draw is discarded whatever the outcome.
    """
    if log_px is None:
        log_px = target.log_density(x)
    y = aux.sample(x, rng)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            x_star, y_star = g.apply(x, y)
    except Divergence:
        rng.random()
        return Transition(x, False, math.nan, True, log_px)
    lp_star = target._log_density(x_star) if np.isfinite(x_star).all() else math.nan
    if lp_star == -math.inf:
        rng.random()
        return Transition(x, False, -math.inf, False, log_px)
    with np.errstate(over="ignore", invalid="ignore"):
        log_r = (lp_star + aux.log_density(y_star, x_star) - log_px
                 - aux.log_density(y, x) + g.log_abs_det_jacobian(x, y))
    if not math.isfinite(log_r) and log_r != -math.inf:
        rng.random()
        return Transition(x, False, log_r, True, log_px)
    if _accept(log_r, rng):
        return Transition(x_star, True, log_r, False, lp_star)
    return Transition(x, False, log_r, False, log_px)
