"""Hamiltonian Monte Carlo samplers and chain drivers.

``run_chain`` is leapfrog HMC with a fixed (step size, number of steps) pair
and a fixed mass matrix. ``ideal_hmc_chain`` uses the exact flow of the
standard normal and therefore never rejects. ``run_mh_chain`` and
``run_mhgj_chain`` drive the kernels in :mod:`hmckit.kernels` with the same
bookkeeping.

A chain of ``T`` iterations stores the ``T`` post-transition states; the
starting point itself is not a row. Momenta are never stored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractViolation
from .hamiltonian import (
    DIVERGENCE_THRESHOLD,
    Divergence,
    IdentityMass,
    LeapfrogConfig,
    MassMatrix,
    _integrate,
)
from .kernels import AuxiliaryConditional, Involution, Proposal, mh_step, mhgj_step
from .targets import GaussianTarget, TargetDensity

logger = logging.getLogger(__name__)

__all__ = [
    "ChainResult",
    "HMCTransition",
    "as_generator",
    "hmc_step",
    "run_chain",
    "ideal_hmc_chain",
    "run_mh_chain",
    "run_mhgj_chain",
]


def as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Accept a Generator or an integer seed; return the generator and the seed if known."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng), None if rng is None else int(rng)
    raise TypeError(f"expected a numpy Generator or an integer seed, got {type(rng).__name__}")


@dataclass(frozen=True)
class ChainResult:
    samples: np.ndarray
    accepted: np.ndarray
    delta_h: np.ndarray
    divergences: np.ndarray
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.samples, self.accepted, self.delta_h, self.divergences):
            arr.setflags(write=False)

    @property
    def iterations(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    @property
    def mean_accept_prob(self) -> float:
        """Average of min(1, exp(-delta H)); divergent steps count as zero."""
        with np.errstate(over="ignore"):
            alpha = np.minimum(1.0, np.exp(-self.delta_h))
        alpha[~np.isfinite(self.delta_h)] = 0.0
        return float(alpha.mean())


class HMCTransition(NamedTuple):
    position: np.ndarray
    accepted: bool
    delta_h: float
    divergent: bool
    log_density: float


def hmc_step(target: TargetDensity, mass: MassMatrix, cfg: LeapfrogConfig, x,
             rng: np.random.Generator, log_px: float | None = None) -> HMCTransition:
    """One leapfrog HMC transition from ``x``.

    Draws p ~ N(0, M), integrates, and accepts with probability
    min(1, exp(-delta H)). A trajectory that goes non-finite, or whose energy
    rises by more than ``DIVERGENCE_THRESHOLD``, is rejected and reported as
    divergent. The uniform for the accept test is drawn in every case.
    """
    if log_px is None:
        log_px = target.log_density(x)
    p = mass.sample(rng)
    try:
        x_new, p_new = _integrate(target, mass, x, p, cfg.step_size, cfg.num_steps)
        lp_new = target._log_density(x_new)
        with np.errstate(over="ignore", invalid="ignore"):
            delta_h = (mass.kinetic(p_new) - lp_new) - (mass.kinetic(p) - log_px)
        divergent = not (delta_h <= DIVERGENCE_THRESHOLD)
    except Divergence:
        delta_h, divergent = math.inf, True
    w = rng.random()
    if not divergent and (w == 0 or math.log(w) < min(0.0, -delta_h)):
        return HMCTransition(x_new, True, delta_h, False, lp_new)
    return HMCTransition(x, False, delta_h, divergent, log_px)


def _drive(step: Callable, x0, log_p0: float, iterations: int, seed, config: dict,
           delta_from: Callable | None = None) -> ChainResult:
    if iterations < 1:
        raise ContractViolation("a chain needs at least one iteration")
    x = np.array(x0, dtype=float)
    d = x.shape[0]
    samples = np.empty((iterations, d))
    accepted = np.zeros(iterations, dtype=bool)
    delta_h = np.full(iterations, math.nan)
    divergences = []
    lp = log_p0
    for t in range(iterations):
        tr = step(x, lp)
        x, lp = tr.position, tr.log_density
        samples[t] = x
        accepted[t] = tr.accepted
        if delta_from is not None:
            delta_h[t] = delta_from(tr)
        if tr.divergent:
            divergences.append(t)
        if (t + 1) % 1000 == 0:
            logger.debug("%s: iteration %d/%d, acceptance so far %.4f",
                         config.get("kernel", "chain"), t + 1, iterations, accepted[: t + 1].mean())
    return ChainResult(samples, accepted, delta_h, np.array(divergences, dtype=int), seed, config)


def _start(target: TargetDensity, x0):
    x0 = np.zeros(target.dim) if x0 is None else target._as_point(x0).copy()
    lp = target.log_density(x0)
    if not math.isfinite(lp):
        raise ContractViolation("the starting point must have finite log density")
    return x0, lp


def run_chain(target: TargetDensity, mass: MassMatrix | None, cfg: LeapfrogConfig,
              iterations: int, x0=None, rng=None) -> ChainResult:
    """Leapfrog HMC for ``iterations`` transitions starting at ``x0`` (default: origin).

    ``rng`` is a Generator or an integer seed; the result is a deterministic
    function of the inputs and the generator state.
    """
    gen, seed = as_generator(rng)
    mass = IdentityMass(target.dim) if mass is None else mass
    if mass.dim != target.dim:
        raise ContractViolation("mass matrix and target dimensions differ")
    x, lp = _start(target, x0)
    config = {
        "kernel": "hmc",
        "step_size": cfg.step_size,
        "num_steps": cfg.num_steps,
        "trajectory_length": cfg.trajectory_length,
        "mass": mass.describe(),
        "target": target.name,
    }
    return _drive(lambda xx, lpx: hmc_step(target, mass, cfg, xx, gen, lpx),
                  x, lp, iterations, seed, config, delta_from=lambda tr: tr.delta_h)


def ideal_hmc_chain(s: float, iterations: int, x0: float = 0.0, rng=None) -> ChainResult:
    """HMC with the exact flow of the standard normal (unit mass).

    Every proposal conserves energy, so every proposal is accepted and no
    uniform is drawn.
    """
    if not s > 0:
        raise ContractViolation("trajectory length must be positive")
    if iterations < 1:
        raise ContractViolation("a chain needs at least one iteration")
    gen, seed = as_generator(rng)
    c, sn = math.cos(s), math.sin(s)
    x = float(np.asarray(x0, dtype=float).reshape(-1)[0])
    out = np.empty(iterations)
    delta_h = np.empty(iterations)
    momenta = gen.standard_normal(iterations)
    for t in range(iterations):
        p = momenta[t]
        x_new = x * c + p * sn
        p_new = -x * sn + p * c
        delta_h[t] = 0.5 * (x_new * x_new + p_new * p_new) - 0.5 * (x * x + p * p)
        x = x_new
        out[t] = x
    config = {"kernel": "ideal-hmc", "trajectory_length": float(s), "mass": {"form": "identity", "dim": 1},
              "target": GaussianTarget.name}
    return ChainResult(out[:, None], np.ones(iterations, dtype=bool), delta_h,
                       np.array([], dtype=int), seed, config)


def run_mh_chain(target: TargetDensity, proposal: Proposal, iterations: int, x0=None, rng=None,
                 kernel: str = "mh") -> ChainResult:
    gen, seed = as_generator(rng)
    x, lp = _start(target, x0)
    config = {"kernel": kernel, "proposal": type(proposal).__name__,
              "scale": getattr(proposal, "h", None), "target": target.name}
    return _drive(lambda xx, lpx: mh_step(target, proposal, xx, gen, lpx), x, lp, iterations, seed, config,
                  delta_from=lambda tr: -tr.log_ratio)


def run_mhgj_chain(target: TargetDensity, aux: AuxiliaryConditional, g: Involution, iterations: int,
                   x0=None, rng=None) -> ChainResult:
    gen, seed = as_generator(rng)
    x, lp = _start(target, x0)
    config = {"kernel": "mhgj", "auxiliary": type(aux).__name__, "involution": type(g).__name__,
              "target": target.name}
    return _drive(lambda xx, lpx: mhgj_step(target, aux, g, xx, gen, lpx), x, lp, iterations, seed, config,
                  delta_from=lambda tr: -tr.log_ratio)
