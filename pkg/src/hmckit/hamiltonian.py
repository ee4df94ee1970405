"""Phase-space machinery: mass matrices, energies, flows and the leapfrog integrator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import ContractViolation, UnsupportedConfiguration
from .targets import TargetDensity

__all__ = [
    "PhaseState",
    "MassMatrix",
    "IdentityMass",
    "DiagonalMass",
    "DenseMass",
    "LeapfrogConfig",
    "Divergence",
    "kinetic_energy",
    "sample_momentum",
    "hamiltonian",
    "momentum_flip",
    "gaussian_flow",
    "leapfrog",
    "leapfrog_trajectory",
    "jacobian_logdet",
    "leapfrog_jacobian_logdet",
]

# A trajectory whose energy rises by more than this is treated as divergent.
DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class PhaseState:
    position: np.ndarray
    momentum: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.position, dtype=float))
        p = np.atleast_1d(np.asarray(self.momentum, dtype=float))
        if x.shape != p.shape or x.ndim != 1:
            raise ContractViolation(
                f"position {x.shape} and momentum {p.shape} must be vectors of equal length"
            )
        object.__setattr__(self, "position", x)
        object.__setattr__(self, "momentum", p)

    @property
    def dim(self) -> int:
        return self.position.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.momentum])

    @classmethod
    def from_vector(cls, v) -> PhaseState:
        v = np.asarray(v, dtype=float)
        d = v.shape[0] // 2
        return cls(v[:d], v[d:])


class MassMatrix:
    """Covariance of the momentum refresh; defines K(p) = p' M^-1 p / 2.

    Immutable after construction.
    """

    form = "abstract"
    dim: int

    def velocity(self, p: np.ndarray) -> np.ndarray:
        """M^-1 p, the time derivative of position."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def kinetic(self, p: np.ndarray) -> float:
        return 0.5 * float(p @ self.velocity(p))

    def describe(self) -> dict:
        return {"form": self.form, "dim": self.dim}

    def _check(self, p) -> np.ndarray:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (self.dim,):
            raise ContractViolation(f"momentum must have shape ({self.dim},), got {p.shape}")
        return p


class IdentityMass(MassMatrix):
    form = "identity"

    def __init__(self, dim: int):
        if dim < 1:
            raise ContractViolation("dimension must be positive")
        self.dim = int(dim)

    def velocity(self, p):
        return p

    def sample(self, rng):
        return rng.standard_normal(self.dim)

    def kinetic(self, p):
        return 0.5 * float(p @ p)


class DiagonalMass(MassMatrix):
    form = "diagonal"

    def __init__(self, diagonal):
        m = np.atleast_1d(np.asarray(diagonal, dtype=float))
        if m.ndim != 1 or not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ContractViolation("diagonal mass entries must be finite and strictly positive")
        m.setflags(write=False)
        self.diagonal = m
        self.dim = m.shape[0]
        self._inv = 1.0 / m
        self._sqrt = np.sqrt(m)

    def velocity(self, p):
        return self._inv * p

    def sample(self, rng):
        return self._sqrt * rng.standard_normal(self.dim)

    def describe(self):
        return {"form": self.form, "dim": self.dim, "diagonal": self.diagonal.tolist()}


class DenseMass(MassMatrix):
    """Full SPD mass matrix, stored as a Cholesky factor.

    Build it from ``matrix`` (M itself) or from ``inverse`` (M^-1, e.g. an
    estimated posterior covariance). With ``matrix``, M^-1 p is a triangular
    solve; with ``inverse`` it is a matrix-vector product and momentum draws
    use a triangular solve instead.
    """

    form = "dense"

    def __init__(self, matrix=None, *, inverse=None):
        if (matrix is None) == (inverse is None):
            raise ContractViolation("give exactly one of matrix or inverse")
        a = np.asarray(matrix if matrix is not None else inverse, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractViolation("mass matrix must be square")
        if not np.allclose(a, a.T, rtol=1e-12, atol=0):
            raise ContractViolation("mass matrix must be symmetric")
        try:
            factor = cho_factor(a, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation("mass matrix is not positive definite") from exc
        self.dim = a.shape[0]
        self._from_inverse = inverse is not None
        self._a = a
        self._factor = factor
        self._lower = np.tril(factor[0])

    @property
    def matrix(self) -> np.ndarray:
        if self._from_inverse:
            return cho_solve(self._factor, np.eye(self.dim))
        return self._a

    def velocity(self, p):
        if self._from_inverse:
            return self._a @ p
        return cho_solve(self._factor, p)

    def sample(self, rng):
        z = rng.standard_normal(self.dim)
        if self._from_inverse:
            # M^-1 = C C' so C^-T z has covariance M.
            return solve_triangular(self._lower, z, lower=True, trans="T")
        return self._lower @ z

    def describe(self):
        return {"form": self.form, "dim": self.dim, "matrix": self.matrix.tolist()}


@dataclass(frozen=True)
class LeapfrogConfig:
    step_size: float
    num_steps: int

    def __post_init__(self):
        eps = float(self.step_size)
        if not (math.isfinite(eps) and eps > 0):
            raise ContractViolation(f"step size must be finite and positive, got {self.step_size}")
        if int(self.num_steps) != self.num_steps or self.num_steps < 1:
            raise ContractViolation(f"number of steps must be an integer >= 1, got {self.num_steps}")
        object.__setattr__(self, "step_size", eps)
        object.__setattr__(self, "num_steps", int(self.num_steps))

    @property
    def trajectory_length(self) -> float:
        return self.step_size * self.num_steps


class Divergence(Exception):
    """Raised when a leapfrog trajectory produces non-finite values."""

    def __init__(self, step: int, reason: str = "non-finite state"):
        self.step = step
        self.reason = reason
        super().__init__(f"divergence at leapfrog step {step}: {reason}")


def kinetic_energy(mass: MassMatrix, p) -> float:
    return mass.kinetic(mass._check(p))


def sample_momentum(mass: MassMatrix, rng: np.random.Generator) -> np.ndarray:
    """Draw p ~ N(0, M)."""
    return mass.sample(rng)


def hamiltonian(target: TargetDensity, mass: MassMatrix, z: PhaseState) -> float:
    """H(x, p) = -log density(x) + K(p); ``+inf`` where the density vanishes."""
    logp = target.log_density(z.position)
    if logp == -math.inf:
        return math.inf
    return -logp + kinetic_energy(mass, z.momentum)


def momentum_flip(z: PhaseState) -> PhaseState:
    return PhaseState(z.position, -z.momentum)


def gaussian_flow(z: PhaseState, s: float) -> PhaseState:
    """Exact Hamiltonian flow for the standard normal with unit mass, run for time ``s``."""
    if z.dim != 1:
        raise UnsupportedConfiguration("the analytic flow is only available in one dimension")
    if not s >= 0:
        raise ContractViolation("flow time must be non-negative")
    c, sn = math.cos(s), math.sin(s)
    x, p = z.position[0], z.momentum[0]
    return PhaseState([x * c + p * sn], [-x * sn + p * c])


def _integrate(target, mass, x, p, eps, n_steps):
    """Fused leapfrog on raw arrays; L+1 gradient evaluations. Raises Divergence."""
    grad = target._grad
    velocity = mass.velocity
    half = 0.5 * eps
    with np.errstate(over="ignore", invalid="ignore"):
        g = grad(x)
        if not math.isfinite(g @ g):
            raise Divergence(0, "non-finite gradient")
        p = p + half * g
        for step in range(1, n_steps + 1):
            x = x + eps * velocity(p)
            g = grad(x)
            if not math.isfinite(g @ g):
                raise Divergence(step, "non-finite gradient")
            if step < n_steps:
                p = p + eps * g
        p = p + half * g
        if not (math.isfinite(x @ x) and math.isfinite(p @ p)):
            raise Divergence(n_steps, "non-finite position or momentum")
    return x, p


def leapfrog(target: TargetDensity, mass: MassMatrix, z: PhaseState, cfg: LeapfrogConfig) -> PhaseState:
    """Run ``cfg.num_steps`` leapfrog steps of size ``cfg.step_size`` from ``z``.

    A half kick, then alternating drifts and full kicks, then a closing half
    kick. The returned momentum is not flipped.

    Raises:
        Divergence: if the position, momentum or gradient becomes non-finite.
    """
    if z.dim != target.dim or mass.dim != target.dim:
        raise ContractViolation("target, mass matrix and state dimensions differ")
    if not (np.isfinite(z.position).all() and np.isfinite(z.momentum).all()):
        raise Divergence(0, "non-finite initial state")
    x, p = _integrate(target, mass, z.position, z.momentum, cfg.step_size, cfg.num_steps)
    return PhaseState(x, p)


def leapfrog_trajectory(target: TargetDensity, mass: MassMatrix, z: PhaseState, cfg: LeapfrogConfig):
    """Positions and momenta after each of the L steps, including the start.

    Returns two arrays of shape ``(L + 1, d)``. Momenta are synchronized with
    positions (each step is a complete half-kick/drift/half-kick), so energies
    can be evaluated at every row.
    """
    eps, n = cfg.step_size, cfg.num_steps
    xs = np.empty((n + 1, z.dim))
    ps = np.empty((n + 1, z.dim))
    x, p = z.position, z.momentum
    xs[0], ps[0] = x, p
    for k in range(1, n + 1):
        x, p = _integrate(target, mass, x, p, eps, 1)
        xs[k], ps[k] = x, p
    return xs, ps


def jacobian_logdet(fn: Callable[[PhaseState], PhaseState], z: PhaseState, h: float = 1e-5) -> float:
    """log |det| of the Jacobian of a phase-space map, by central differences."""
    v = z.as_vector()
    n = v.shape[0]
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        plus = fn(PhaseState.from_vector(v + e)).as_vector()
        minus = fn(PhaseState.from_vector(v - e)).as_vector()
        jac[:, j] = (plus - minus) / (2.0 * h)
    sign, logdet = np.linalg.slogdet(jac)
    if sign == 0:
        return -math.inf
    return float(logdet)


def leapfrog_jacobian_logdet(target, mass, z, cfg, h: float = 1e-5) -> float:
    """Finite-difference log |det| of the leapfrog map; zero for a symplectic map."""
    if z.dim > 5:
        raise UnsupportedConfiguration("finite-difference Jacobian is limited to d <= 5")
    return jacobian_logdet(lambda w: leapfrog(target, mass, w, cfg), z, h)
