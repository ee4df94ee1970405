"""Target densities known up to a normalizing constant.

Every target exposes ``log_density`` (log of the unnormalized density, ``-inf``
outside the support) and ``grad_log_density``. Subclasses implement the
unchecked hooks ``_log_density`` and ``_grad``; the public methods validate
their input first. Samplers that already guarantee finite, correctly shaped
input call the hooks directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from .errors import (
    ContractViolation,
    DatasetError,
    DatasetNotFound,
    MissingColumnError,
    MissingValueError,
    NonBinaryResponseError,
)

__all__ = [
    "TargetDensity",
    "GaussianTarget",
    "LabeledDataset",
    "LogisticPosterior",
    "check_gradient",
    "load_dataset",
    "load_pima",
]


class TargetDensity:
    """Unnormalized log-density on R^d with its gradient.

    Instances are immutable after construction and safe to share between
    threads.
    """

    name = "target"
    dim: int

    def _log_density(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _as_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape != (self.dim,):
            raise ContractViolation(
                f"{self.name}: expected a point of shape ({self.dim},), got {x.shape}"
            )
        return x

    def log_density(self, x) -> float:
        """Return log of the unnormalized density at ``x`` (``-inf`` off support)."""
        x = self._as_point(x)
        if np.isnan(x).any():
            raise ContractViolation(f"{self.name}: log_density called at NaN")
        return float(self._log_density(x))

    def grad_log_density(self, x) -> np.ndarray:
        x = self._as_point(x)
        if not np.isfinite(x).all():
            raise ContractViolation(f"{self.name}: gradient requested at non-finite point")
        return self._grad(x)

    def potential(self, x) -> float:
        """Potential energy U(x) = -log density."""
        return -self.log_density(x)


class GaussianTarget(TargetDensity):
    """Gaussian N(mean, cov) with log density ``-(x - mean)' cov^-1 (x - mean) / 2``.

    ``cov`` may be omitted (identity), a vector of marginal variances, or a
    full symmetric positive definite matrix. The default is the standard
    normal in one dimension, whose log density is ``-x**2 / 2``.
    """

    name = "gaussian"

    def __init__(self, dim: int = 1, mean=None, cov=None):
        if cov is not None:
            cov = np.asarray(cov, dtype=float)
            dim = cov.shape[0]
        if dim < 1:
            raise ContractViolation("dimension must be positive")
        self.dim = int(dim)
        self.mean = np.zeros(self.dim) if mean is None else np.asarray(mean, dtype=float)
        if self.mean.shape != (self.dim,):
            raise ContractViolation("mean has the wrong shape")
        self._precision_diag = None
        self._cho = None
        if cov is None:
            self.cov = np.eye(self.dim)
        elif cov.ndim == 1:
            if np.any(cov <= 0):
                raise ContractViolation("variances must be positive")
            self.cov = np.diag(cov)
            self._precision_diag = 1.0 / cov
        else:
            if cov.shape != (self.dim, self.dim):
                raise ContractViolation("covariance must be square")
            self.cov = cov
            try:
                self._cho = cho_factor(cov, lower=True)
            except np.linalg.LinAlgError as exc:
                raise ContractViolation("covariance is not positive definite") from exc
        self._centered = mean is not None

    def _residual(self, x):
        return x - self.mean if self._centered else x

    def _log_density(self, x):
        r = self._residual(x)
        if self._cho is not None:
            return -0.5 * r @ cho_solve(self._cho, r)
        if self._precision_diag is not None:
            return -0.5 * r @ (self._precision_diag * r)
        return -0.5 * r @ r

    def _grad(self, x):
        r = self._residual(x)
        if self._cho is not None:
            return -cho_solve(self._cho, r)
        if self._precision_diag is not None:
            return -self._precision_diag * r
        return -r


@dataclass(frozen=True)
class LabeledDataset:
    """Binary responses with a design matrix whose first column is the intercept."""

    responses: np.ndarray
    design: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=float)
        z = np.asarray(self.design, dtype=float)
        if z.ndim != 2 or y.shape != (z.shape[0],):
            raise DatasetError("responses and design rows disagree")
        n, d = z.shape
        if not (np.isfinite(z).all() and np.isfinite(y).all()):
            raise DatasetError("dataset contains missing or non-finite values")
        if not np.isin(y, (0.0, 1.0)).all():
            raise NonBinaryResponseError("responses must be 0/1")
        ones = np.all(z == 1.0, axis=0)
        if not ones[0] or ones.sum() != 1:
            raise DatasetError("design must have exactly one all-ones column, placed first")
        if n < d:
            raise DatasetError(f"need at least as many rows as columns (n={n}, d={d})")
        names = tuple(self.names) or ("intercept",) + tuple(f"z{j}" for j in range(1, d))
        if len(names) != d:
            raise DatasetError("one name per design column is required")
        y.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "design", z)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    @classmethod
    def from_covariates(cls, covariates, responses, names=None):
        """Prepend the intercept column to raw covariates."""
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        design = np.column_stack([np.ones(x.shape[0]), x])
        if names is not None:
            names = ("intercept",) + tuple(names)
        return cls(np.asarray(responses, dtype=float), design, names or ())


_TRUE = {"1", "1.0", "yes", "true", "y", "t"}
_FALSE = {"0", "0.0", "no", "false", "n", "f"}


def _coerce_response(value: str, row: int, column: str) -> float:
    v = value.strip().lower()
    if v in _TRUE:
        return 1.0
    if v in _FALSE:
        return 0.0
    raise NonBinaryResponseError(
        f"row {row}, column {column!r}: response {value!r} is not binary"
    )


def load_dataset(path, response_column: str) -> LabeledDataset:
    """Read a comma-separated file with a header row into a ``LabeledDataset``.

    Every column other than ``response_column`` becomes a covariate, in file
    order. Covariates are used on their original scale. Rows are numbered from
    1, excluding the header.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetNotFound(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        if response_column not in header:
            raise MissingColumnError(
                f"response column {response_column!r} not in header {header}"
            )
        yi = header.index(response_column)
        covariate_names = [h for j, h in enumerate(header) if j != yi]
        ys, rows = [], []
        for row_no, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DatasetError(f"row {row_no} has {len(record)} fields, expected {len(header)}")
            values = []
            for j, cell in enumerate(record):
                cell = cell.strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    raise MissingValueError(row_no, header[j])
                if j == yi:
                    ys.append(_coerce_response(cell, row_no, header[j]))
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"row {row_no}, column {header[j]!r}: {cell!r} is not numeric"
                    ) from None
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path} has no data rows")
    return LabeledDataset.from_covariates(np.array(rows), np.array(ys), covariate_names)


def pima_path() -> Path:
    return Path(str(resources.files("hmckit") / "data" / "pima.csv"))


def load_pima() -> LabeledDataset:
    """The bundled 200-row Pima training subset, response column ``type``."""
    return load_dataset(pima_path(), "type")


def _softplus(u):
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


class LogisticPosterior(TargetDensity):
    """Posterior of a logistic regression with an isotropic Gaussian prior.

    log density(beta) = sum_i [y_i u_i - log(1 + exp(u_i))] - beta'beta / (2 prior_variance),
    with u = Z beta. Finite for every finite beta.
    """

    name = "logistic"

    def __init__(self, dataset: LabeledDataset, prior_variance: float = 100.0):
        if not prior_variance > 0:
            raise ContractViolation("prior variance must be positive")
        self.dataset = dataset
        self.prior_variance = float(prior_variance)
        self.dim = dataset.d
        self._z = dataset.design
        self._y = dataset.responses

    @property
    def names(self):
        return self.dataset.names

    def _log_density(self, beta):
        u = self._z @ beta
        return self._y @ u - _softplus(u).sum() - (beta @ beta) / (2.0 * self.prior_variance)

    def _grad(self, beta):
        u = self._z @ beta
        return self._z.T @ (self._y - expit(u)) - beta / self.prior_variance


def check_gradient(target: TargetDensity, x, h: float = 1e-5) -> float:
    """Largest coordinate-wise gap between the analytic and central-difference gradient.

    Each gap is scaled by ``max(1, |analytic|)``.
    """
    if not h > 0:
        raise ContractViolation("finite-difference step must be positive")
    x = target._as_point(x)
    analytic = target.grad_log_density(x)
    worst = 0.0
    for i in range(target.dim):
        e = np.zeros(target.dim)
        e[i] = h
        fd = (target.log_density(x + e) - target.log_density(x - e)) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(analytic[i])))
    return worst
