"""Confidence intervals and collection-level aggregation.

Two interval flavors are provided: a normal approximation
mean +/- z_{1-delta/2} * sigma_hat / sqrt(B), and the percentile bootstrap
(empirical delta/2 and 1-delta/2 quantiles of the replica scores).
Percentile is the default in reports; collection-level intervals bootstrap
over queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInput

DEFAULT_DELTA = 0.05
DEFAULT_BOOT_RESAMPLES = 1000


def sample_mean(values: Sequence[float]) -> float:
    """Mean that is exact on constant samples (no summation roundoff)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInput("values must be nonempty")
    if np.all(arr == arr[0]):
        return float(arr[0])
    return float(arr.mean())


def sample_sigma(values: Sequence[float]) -> float:
    """Sample (n-1) standard deviation; exactly 0 on constant samples."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInput("values must be nonempty")
    if arr.size == 1 or np.all(arr == arr[0]):
        return 0.0
    return float(arr.std(ddof=1))

# Acklam's rational approximation of the inverse standard normal CDF.
# Peak absolute error of the raw approximation is ~1.15e-9; one Halley
# refinement step against erfc pushes it to full double precision.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Quantile of the standard normal distribution."""
    if not 0.0 < p < 1.0:
        raise InvalidInput(f"quantile probability must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: str  # "normal" | "percentile"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InvalidInput("interval bounds must be finite")
        if self.lower > self.upper:
            raise InvalidInput(
                f"lower bound {self.lower} exceeds upper bound {self.upper}"
            )
        if not 0.0 < self.level < 1.0:
            raise InvalidInput("confidence level must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "method": self.method,
        }


def normal_ci(
    mean: float, sigma_hat: float, B: int, delta: float
) -> ConfidenceInterval:
    """Normal-approximation interval mean +/- z_{1-delta/2} sigma_hat/sqrt(B)."""
    if B < 1:
        raise InvalidInput("B must be >= 1")
    if sigma_hat < 0:
        raise InvalidInput("sigma_hat must be >= 0")
    if not 0.0 < delta < 1.0:
        raise InvalidInput("delta must lie in (0, 1)")
    z = inverse_normal_cdf(1.0 - delta / 2.0)
    half = z * sigma_hat / math.sqrt(B)
    return ConfidenceInterval(mean - half, mean + half, 1.0 - delta, "normal")


def percentile_ci(samples: Sequence[float], delta: float) -> ConfidenceInterval:
    """Empirical delta/2 and 1-delta/2 quantiles of the samples.

    Quantiles use linear interpolation between closest order statistics
    (Hyndman-Fan type 7, numpy's default): the q-quantile of n sorted
    samples sits at fractional index q*(n-1).
    """
    if len(samples) == 0:
        raise InvalidInput("samples must be nonempty")
    if not 0.0 < delta < 1.0:
        raise InvalidInput("delta must lie in (0, 1)")
    lower, upper = np.quantile(
        np.asarray(samples, dtype=np.float64),
        [delta / 2.0, 1.0 - delta / 2.0],
        method="linear",
    )
    return ConfidenceInterval(float(lower), float(upper), 1.0 - delta, "percentile")


@dataclass(frozen=True)
class QueryEstimate:
    """Per-query headline numbers feeding collection aggregation."""

    es_hat: float
    vb_hat: float
    ci: ConfidenceInterval


@dataclass(frozen=True)
class CollectionReport:
    """Macro-averaged scores over a query collection with bootstrap CIs."""

    per_query: Mapping[str, QueryEstimate]
    macro_es: float
    macro_vb: float
    macro_ci: ConfidenceInterval
    macro_es_ci: ConfidenceInterval
    config_echo: Mapping = field(default_factory=dict)
    excluded_replicas: int = 0


def _bootstrap_macro_ci(
    values: np.ndarray, delta: float, resamples: int, rng: np.random.Generator
) -> ConfidenceInterval:
    n = values.size
    if np.all(values == values[0]):
        # degenerate collection: every resample has the same mean
        v = float(values[0])
        return ConfidenceInterval(v, v, 1.0 - delta, "percentile")
    indexes = rng.integers(0, n, size=(resamples, n))
    means = values[indexes].mean(axis=1)
    return percentile_ci(means, delta)


def collection_aggregate(
    per_query: Mapping[str, QueryEstimate],
    delta: float = DEFAULT_DELTA,
    boot_resamples: int = DEFAULT_BOOT_RESAMPLES,
    *,
    seed: int = 0,
    config_echo: Mapping | None = None,
    excluded_replicas: int = 0,
) -> CollectionReport:
    """Macro-average per-query estimates and bootstrap queries for CIs.

    Queries are resampled with replacement ``boot_resamples`` times from a
    dedicated seeded stream, so collection CIs are reproducible and
    independent of scoring concurrency.
    """
    if not per_query:
        raise InvalidInput("at least one query estimate is required")
    if boot_resamples < 1:
        raise InvalidInput("boot_resamples must be >= 1")
    vb_values = np.array([q.vb_hat for q in per_query.values()], dtype=np.float64)
    es_values = np.array([q.es_hat for q in per_query.values()], dtype=np.float64)
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(0xB005, 0))
    )
    macro_ci = _bootstrap_macro_ci(vb_values, delta, boot_resamples, rng)
    macro_es_ci = _bootstrap_macro_ci(es_values, delta, boot_resamples, rng)
    return CollectionReport(
        per_query=dict(per_query),
        macro_es=sample_mean(es_values),
        macro_vb=sample_mean(vb_values),
        macro_ci=macro_ci,
        macro_es_ci=macro_es_ci,
        config_echo=dict(config_echo or {}),
        excluded_replicas=excluded_replicas,
    )
