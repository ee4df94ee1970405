"""Chain diagnostics: autocorrelation, effective sample size and summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DegenerateSeriesError
from .hmc import ChainResult

__all__ = ["acf", "ess", "histogram", "SummaryReport", "summarize"]


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/T) autocovariance at every lag, via a zero-padded FFT."""
    t = x.shape[0]
    centered = x - x.mean()
    n = 1 << (2 * t - 1).bit_length()
    f = np.fft.rfft(centered, n)
    return np.fft.irfft(f * np.conj(f), n)[:t] / t


def _checked_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ContractViolation("series contains non-finite values")
    if x.size == 0 or np.all(x == x[0]):
        raise DegenerateSeriesError("series is constant")
    return x


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations rho(0..max_lag) with the biased estimator gamma(k) / gamma(0)."""
    x = _checked_series(series)
    if not 0 <= max_lag < x.shape[0]:
        raise ContractViolation(f"max_lag must lie in [0, {x.shape[0] - 1}], got {max_lag}")
    gamma = _autocovariance(x)
    rho = gamma[: max_lag + 1] / gamma[0]
    rho[0] = 1.0
    return rho


def ess(series) -> float:
    """Effective sample size T / tau with Geyer's initial positive sequence.

    tau = -1 + 2 * sum of the pair sums rho(2k) + rho(2k+1), accumulated while
    they stay positive. For antithetic chains tau can drop below 1, so ESS
    can exceed T. tau is floored at 1 / log10(T), which caps ESS at
    T * log10(T).
    """
    x = _checked_series(series)
    t = x.shape[0]
    if t < 100:
        raise ContractViolation(f"ESS needs at least 100 draws, got {t}")
    gamma = _autocovariance(x)
    rho = gamma / gamma[0]
    rho[0] = 1.0
    n_pairs = t // 2
    pairs = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    negative = np.flatnonzero(pairs <= 0)
    stop = negative[0] if negative.size else n_pairs
    tau = -1.0 + 2.0 * float(pairs[:stop].sum())
    tau = max(tau, 1.0 / math.log10(t))
    return t / tau


def histogram(series, bins: int = 50):
    """Density-plot data as (left edges, right edges, counts)."""
    counts, edges = np.histogram(np.asarray(series, dtype=float), bins=bins)
    return edges[:-1], edges[1:], counts


@dataclass(frozen=True)
class SummaryReport:
    names: tuple[str, ...]
    mean: np.ndarray
    variance: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    ess: np.ndarray
    acf: np.ndarray
    degenerate: np.ndarray
    acceptance_rate: float
    divergences: int
    iterations: int

    def rows(self):
        """One dict per coordinate, in coordinate order."""
        for j, name in enumerate(self.names):
            yield {
                "coordinate": name,
                "mean": self.mean[j],
                "variance": self.variance[j],
                "q05": self.q05[j],
                "q50": self.q50[j],
                "q95": self.q95[j],
                "ess": self.ess[j],
                "degenerate": bool(self.degenerate[j]),
            }


def summarize(chain: ChainResult, max_lag: int = 40, names=None) -> SummaryReport:
    """Per-coordinate mean, variance, 5/50/95% quantiles, ESS and ACF, plus acceptance.

    Quantiles interpolate linearly between order statistics. A constant
    coordinate gets variance 0, ESS NaN, ACF NaN and ``degenerate=True``.
    """
    x = np.asarray(chain.samples, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractViolation("chain has no samples")
    t, d = x.shape
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(d))
    if len(names) != d:
        raise ContractViolation("one name per coordinate is required")
    lag = min(max_lag, t - 1)
    q05, q50, q95 = np.quantile(x, [0.05, 0.5, 0.95], axis=0, method="linear")
    ess_v = np.full(d, math.nan)
    acf_m = np.full((d, lag + 1), math.nan)
    degenerate = np.zeros(d, dtype=bool)
    for j in range(d):
        try:
            acf_m[j] = acf(x[:, j], lag)
            ess_v[j] = ess(x[:, j]) if t >= 100 else math.nan
        except DegenerateSeriesError:
            degenerate[j] = True
    return SummaryReport(
        names=names,
        mean=x.mean(axis=0),
        variance=x.var(axis=0, ddof=1) if t > 1 else np.zeros(d),
        q05=q05,
        q50=q50,
        q95=q95,
        ess=ess_v,
        acf=acf_m,
        degenerate=degenerate,
        acceptance_rate=chain.acceptance_rate,
        divergences=int(len(chain.divergences)),
        iterations=t,
    )
