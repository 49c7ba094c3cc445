"""Expected success and the variance-bounded score.

Expected success (ES) is the probability that a randomly drawn intent is
covered by the run: the dot product of intent probabilities and per-intent
gains. Treating success as a Bernoulli trial with mean ES, the
variance-bounded score subtracts a penalty proportional to the Bernoulli
standard deviation:

    vb_raw = es - alpha * sqrt(es * (1 - es))

The raw value can dip below zero for small ES and large alpha; headline
reports use the value clamped to [0, 1] while ``vb_raw`` stays
inspectable in the breakdown.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .gains import GainVector
from .intent import IntentDistribution

DEFAULT_ALPHA = 0.5
ALPHA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ScoreBreakdown:
    """One (distribution, gains) pair's scores with their ingredients."""

    es: float
    variance: float
    alpha: float
    vb_raw: float
    vb: float
    k: int = 0
    gain_mode: str = "binary"


def expected_success(dist: IntentDistribution, gains: GainVector) -> float:
    """Dot product of intent probabilities and aligned gains.

    Full coverage is exact: when every gain is 1 the result is 1.0 by the
    distribution's sum-to-one invariant, with no float drift at the
    ceiling.
    """
    if dist.entity_ids() != gains.entity_ids():
        raise InvalidInput(
            "distribution and gain vector are misaligned "
            f"({dist.entity_ids()} vs {gains.entity_ids()})"
        )
    values = gains.values()
    if all(g == 1.0 for g in values):
        return 1.0
    value = float(np.dot(dist.probabilities(), np.array(values)))
    return min(1.0, max(0.0, value))


def bernoulli_variance(es: float) -> float:
    """Variance of a Bernoulli success indicator with mean ``es``."""
    if not (math.isfinite(es) and 0.0 <= es <= 1.0):
        raise InvalidInput(f"es must lie in [0, 1], got {es}")
    return es * (1.0 - es)


def vb_score(
    es: float, alpha: float, k: int = 0, gain_mode: str = "binary"
) -> ScoreBreakdown:
    """Penalize ES by ``alpha`` times the Bernoulli standard deviation.

    ``k`` and ``gain_mode`` are carried through for provenance only.
    """
    if not (math.isfinite(alpha) and alpha >= 0.0):
        raise InvalidInput(f"alpha must be >= 0, got {alpha}")
    variance = bernoulli_variance(es)
    vb_raw = es - alpha * math.sqrt(variance)
    return ScoreBreakdown(
        es=es,
        variance=variance,
        alpha=alpha,
        vb_raw=vb_raw,
        vb=min(1.0, max(0.0, vb_raw)),
        k=k,
        gain_mode=gain_mode,
    )
