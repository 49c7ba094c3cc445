"""Synthetic worlds with known ground truth, and executable checks of the
framework's guarantees.

The generator plants, per query, an exactly known intent distribution and
an (entity, rank) relevance table; expected success can then be verified
by brute-force enumeration against the table, independent of the
dot-product implementation. ``validate_theorems`` fuzzes the four core
guarantees (range, monotonicity, stability, Monte Carlo concentration)
and reports observed versus theoretical bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import InvalidInput
from .gains import GainVector, RankedRun, ResultItem
from .intent import CandidateEntity, IntentDistribution, ScoredCandidate
from .metric import ALPHA_GRID, expected_success, vb_score

DEFAULT_CONCENTRATION_CASES = ((20, 0.1, 0.67), (50, 0.05, 0.37))


@dataclass(frozen=True)
class SyntheticQuery:
    """One planted query: exact probabilities, a relevance table deciding
    which (entity, rank) pairs count as covered, and a planted run whose
    item titles are taggable back to the relevant entities."""

    query_id: str
    dist: IntentDistribution
    relevance: Mapping[tuple[str, int], bool]
    run: RankedRun


@dataclass(frozen=True)
class SyntheticWorld:
    seed: int
    k: int
    coverage_prob: float
    queries: tuple[SyntheticQuery, ...]

    def query(self, query_id: str) -> SyntheticQuery:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise InvalidInput(f"unknown query {query_id!r}")


def generate_world(
    seed: int,
    n_queries: int,
    n_entities: int,
    k: int,
    coverage_prob: float,
) -> SyntheticWorld:
    """Generate a seeded world; regeneration with the same seed is
    bitwise identical.

    Intent probabilities are drawn from a symmetric Dirichlet(1) (uniform
    on the simplex); each (entity, rank <= k) pair is relevant
    independently with ``coverage_prob``. Each planted run item carries
    the surface name of the relevant entity with the smallest id at that
    rank, or a no-match filler title.
    """
    if n_entities < 1 or n_queries < 1 or k < 1:
        raise InvalidInput("n_queries, n_entities, and k must all be >= 1")
    if not 0.0 <= coverage_prob <= 1.0:
        raise InvalidInput("coverage_prob must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xA11CE,)))
    queries = []
    for qi in range(n_queries):
        query_id = f"q{qi:04d}"
        probs = rng.dirichlet(np.ones(n_entities))
        entities = _entity_pool(n_entities)
        dist = IntentDistribution(
            tuple((e, float(p)) for e, p in zip(entities, probs))
        )
        relevance: dict[tuple[str, int], bool] = {}
        for rank in range(1, k + 1):
            for entity in entities:
                relevance[(entity.entity_id, rank)] = bool(
                    rng.random() < coverage_prob
                )
        items = []
        for rank in range(1, k + 1):
            covered = sorted(
                eid for (eid, r), rel in relevance.items() if r == rank and rel
            )
            if covered:
                title = next(
                    e.surface_name for e in entities if e.entity_id == covered[0]
                )
            else:
                title = f"unrelated filler document {rank}"
            items.append(
                ResultItem(doc_id=f"{query_id}-r{rank}", rank=rank, title=title)
            )
        run = RankedRun(query_id=query_id, items=tuple(items), cutoff_k=k)
        queries.append(
            SyntheticQuery(query_id=query_id, dist=dist, relevance=relevance, run=run)
        )
    return SyntheticWorld(
        seed=seed, k=k, coverage_prob=coverage_prob, queries=tuple(queries)
    )


@lru_cache(maxsize=None)
def _entity_pool(n: int) -> tuple[CandidateEntity, ...]:
    # single-token names keep rule tagging unambiguous across entities
    return tuple(
        CandidateEntity(entity_id=f"E{j:03d}", surface_name=f"Entity{j:03d}")
        for j in range(n)
    )


def export_collection(world: SyntheticWorld):
    """Materialize a world as (queries, runs) suitable for the file
    formats and the CLI.

    Candidate scores are set to log(pi) so the softmax at T=1 reproduces
    the planted probabilities (up to float rounding).
    """
    from .io import Query  # local import: io depends on the core modules

    queries = []
    runs = []
    for sq in world.queries:
        candidates = tuple(
            ScoredCandidate(entity=e, raw_score=math.log(max(p, 1e-300)))
            for e, p in sq.dist.entries
        )
        queries.append(
            Query(query_id=sq.query_id, text=f"synthetic query {sq.query_id}", candidates=candidates)
        )
        runs.append(sq.run)
    return queries, runs


def coverage_gains(query: SyntheticQuery, k: int) -> GainVector:
    """Binary gains read directly off the world's relevance table."""
    per_intent = tuple(
        (
            eid,
            1.0
            if any(query.relevance.get((eid, r), False) for r in range(1, k + 1))
            else 0.0,
        )
        for eid in query.dist.entity_ids()
    )
    return GainVector(per_intent, mode="binary")


def brute_force_es(world: SyntheticWorld, query_id: str, k: int) -> float:
    """Independent oracle for expected success.

    Enumerates every intent and accumulates its probability when the
    relevance table covers it anywhere in the top k; no vector algebra
    involved.
    """
    query = world.query(query_id)
    total = 0.0
    for entity, prob in query.dist.entries:
        covered = False
        for rank in range(1, k + 1):
            if query.relevance.get((entity.entity_id, rank), False):
                covered = True
                break
        if covered:
            total += prob
    return total


@dataclass(frozen=True)
class TheoremValidationConfig:
    trials: int = 10_000
    seed: int = 7
    alpha_values: tuple[float, ...] = ALPHA_GRID
    concentration_cases: tuple[tuple[int, float, float], ...] = (
        DEFAULT_CONCENTRATION_CASES
    )
    max_entities: int = 8

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise InvalidInput("trials must be >= 1")
        if self.max_entities < 1:
            raise InvalidInput("max_entities must be >= 1")


def _suite_rng(seed: int, suite: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(suite,)))


def _random_distribution(
    rng: np.random.Generator, max_entities: int
) -> IntentDistribution:
    n = int(rng.integers(1, max_entities + 1))
    probs = rng.dirichlet(np.ones(n))
    return IntentDistribution(
        tuple((e, float(p)) for e, p in zip(_entity_pool(n), probs))
    )


def _gain_vector_for(dist: IntentDistribution, values: np.ndarray) -> GainVector:
    return GainVector(
        tuple((eid, float(g)) for eid, g in zip(dist.entity_ids(), values)),
        mode="dcg",
    )


def _range_suite(config: TheoremValidationConfig) -> dict:
    rng = _suite_rng(config.seed, 1)
    violations = 0
    for _ in range(config.trials):
        dist = _random_distribution(rng, config.max_entities)
        gains = _gain_vector_for(dist, rng.random(len(dist.entries)))
        es = expected_success(dist, gains)
        if not 0.0 <= es <= 1.0:
            violations += 1
            continue
        for alpha in config.alpha_values:
            breakdown = vb_score(es, alpha)
            if not 0.0 <= breakdown.vb <= 1.0:
                violations += 1
            if breakdown.vb_raw > es:
                violations += 1
            if alpha == 0.0 and breakdown.vb != es:
                violations += 1
            if es in (0.0, 1.0) and breakdown.vb != es:
                violations += 1
    # exact endpoints: the variance term vanishes and vb equals es
    for endpoint in (0.0, 1.0):
        for alpha in config.alpha_values:
            if vb_score(endpoint, alpha).vb != endpoint:
                violations += 1
    return {"trials": config.trials, "violations": violations, "passed": violations == 0}


def _monotonicity_suite(config: TheoremValidationConfig) -> dict:
    rng = _suite_rng(config.seed, 2)
    violations = 0
    for _ in range(config.trials):
        dist = _random_distribution(rng, config.max_entities)
        probs = dist.probabilities()
        gains = rng.random(len(probs))
        # lift one coordinate with non-negligible mass by a solid margin so
        # strictness is decidable in floating point
        eligible = np.flatnonzero(probs >= 1e-6)
        j = int(eligible[int(rng.integers(0, eligible.size))])
        gains[j] = rng.uniform(0.0, 0.75)
        lifted = gains.copy()
        lifted[j] = gains[j] + rng.uniform(0.25, 1.0) * (1.0 - gains[j])
        es_before = expected_success(dist, _gain_vector_for(dist, gains))
        es_after = expected_success(dist, _gain_vector_for(dist, lifted))
        if not es_after > es_before:
            violations += 1
    return {"trials": config.trials, "violations": violations, "passed": violations == 0}


def _stability_suite(config: TheoremValidationConfig) -> dict:
    rng = _suite_rng(config.seed, 3)
    violations = 0
    for _ in range(config.trials):
        n = int(rng.integers(1, config.max_entities + 1))
        pool = _entity_pool(n)
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        gains_values = rng.random(n)
        dist_p = IntentDistribution(tuple((e, float(x)) for e, x in zip(pool, p)))
        dist_q = IntentDistribution(tuple((e, float(x)) for e, x in zip(pool, q)))
        es_p = expected_success(dist_p, _gain_vector_for(dist_p, gains_values))
        es_q = expected_success(dist_q, _gain_vector_for(dist_q, gains_values))
        l1 = float(np.abs(p - q).sum())
        if abs(es_p - es_q) > l1 + 1e-12:
            violations += 1
    return {"trials": config.trials, "violations": violations, "passed": violations == 0}


def synthetic_replica_scores(
    rng: np.random.Generator, repetitions: int, B: int
) -> np.ndarray:
    """Replica-score draws with exactly known mean 0.5: iid Uniform(0, 1).

    Shape (repetitions, B); used by the concentration and CI-coverage
    checks.
    """
    return rng.random((repetitions, B))


SYNTHETIC_REPLICA_MEAN = 0.5


def _concentration_suite(config: TheoremValidationConfig) -> dict:
    rng = _suite_rng(config.seed, 4)
    cases = []
    for B, delta, cap in config.concentration_cases:
        scores = synthetic_replica_scores(rng, config.trials, B)
        deviations = np.abs(scores.mean(axis=1) - SYNTHETIC_REPLICA_MEAN)
        empirical = float(np.mean(deviations >= delta))
        hoeffding = 2.0 * math.exp(-2.0 * B * delta * delta)
        cases.append(
            {
                "B": B,
                "delta": delta,
                "repetitions": config.trials,
                "empirical_frequency": empirical,
                "hoeffding_bound": hoeffding,
                "cap": cap,
                "passed": empirical <= min(cap, hoeffding, 1.0),
            }
        )
    return {"cases": cases, "passed": all(c["passed"] for c in cases)}


def validate_theorems(config: TheoremValidationConfig | None = None) -> dict:
    """Run all four property suites and report observed vs theoretical bounds.

    Failures are report contents, not exceptions.
    """
    config = config or TheoremValidationConfig()
    report = {
        "config": {
            "trials": config.trials,
            "seed": config.seed,
            "alpha_values": list(config.alpha_values),
            "concentration_cases": [list(c) for c in config.concentration_cases],
            "max_entities": config.max_entities,
        },
        "range_and_bernoulli": _range_suite(config),
        "monotonicity": _monotonicity_suite(config),
        "stability": _stability_suite(config),
        "concentration": _concentration_suite(config),
    }
    report["all_passed"] = all(
        report[name]["passed"]
        for name in ("range_and_bernoulli", "monotonicity", "stability", "concentration")
    )
    return report
