"""Monte Carlo replica engine.

Each replica perturbs the input side of the pipeline (linker scores,
constraint weights, candidate membership, paraphrase variants), rebuilds
the intent distribution, re-tags the fixed system output against it, and
scores the result. Replica b draws from an RNG derived purely from
(master_seed, query_id, b), so runs are reproducible and independent of
scheduling order.
"""
from __future__ import annotations

import hashlib
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EstimationFailed, InvalidInput, TaggerUnavailable
from .gains import GainVector, RankedRun, Tagger, gain_vector, tag_results
from .intent import (
    Constraint,
    IntentDistribution,
    ScoredCandidate,
    TruncationPolicy,
    build_distribution,
)
from .metric import DEFAULT_ALPHA, ScoreBreakdown, expected_success, vb_score
from .uncertainty import sample_mean, sample_sigma

PERTURBATION_KINDS = (
    "score_jitter",
    "weight_rescale",
    "candidate_dropout",
    "paraphrase_variants",
)


@dataclass(frozen=True)
class PerturbationSpec:
    """One seeded perturbation of the replica inputs.

    - ``score_jitter``: add N(0, sigma) noise to every linker score.
    - ``weight_rescale``: multiply each constraint weight by an independent
      lognormal factor with the given log-sd.
    - ``candidate_dropout``: drop each non-top candidate independently with
      probability p (the top-scored candidate always survives).
    - ``paraphrase_variants``: replace the candidate set by one drawn
      uniformly from the query's named alternate sets (``variant_ids``
      restricts the pool; empty means all).
    """

    kind: str
    sigma: float = 0.0
    log_sd: float = 0.0
    dropout_p: float = 0.0
    variant_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise InvalidInput(f"unknown perturbation kind {self.kind!r}")
        if self.sigma < 0 or self.log_sd < 0:
            raise InvalidInput("noise scales must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidInput("dropout probability must lie in [0, 1)")

    @classmethod
    def parse(cls, text: str) -> "PerturbationSpec":
        """Parse CLI spellings like ``score_jitter:0.1`` or
        ``paraphrase_variants``."""
        kind, sep, raw = text.partition(":")
        if kind == "paraphrase_variants":
            ids = tuple(x for x in raw.split(",") if x) if sep else ()
            return cls(kind=kind, variant_ids=ids)
        if kind not in PERTURBATION_KINDS:
            raise InvalidInput(f"unknown perturbation kind {kind!r}")
        if not sep:
            raise InvalidInput(f"perturbation {kind!r} needs a parameter")
        try:
            value = float(raw)
        except ValueError as exc:
            raise InvalidInput(f"bad perturbation parameter {raw!r}") from exc
        if kind == "score_jitter":
            return cls(kind=kind, sigma=value)
        if kind == "weight_rescale":
            return cls(kind=kind, log_sd=value)
        return cls(kind=kind, dropout_p=value)

    def spelling(self) -> str:
        if self.kind == "score_jitter":
            return f"score_jitter:{self.sigma}"
        if self.kind == "weight_rescale":
            return f"weight_rescale:{self.log_sd}"
        if self.kind == "candidate_dropout":
            return f"candidate_dropout:{self.dropout_p}"
        ids = ",".join(self.variant_ids)
        return f"paraphrase_variants:{ids}" if ids else "paraphrase_variants"


@dataclass(frozen=True)
class ReplicaConfig:
    """Knobs for one Monte Carlo estimation run."""

    replica_count: int = 20
    master_seed: int = 42
    perturbations: tuple[PerturbationSpec, ...] = ()
    alpha: float = DEFAULT_ALPHA
    k: int = 10
    gain_mode: str = "binary"
    truncation: TruncationPolicy | None = None
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.replica_count < 1:
            raise InvalidInput("replica count B must be >= 1")
        if self.k < 1:
            raise InvalidInput("k must be >= 1")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise InvalidInput("alpha must be >= 0")
        if not 0 <= self.master_seed < 2**64:
            raise InvalidInput("master_seed must be a 64-bit unsigned integer")
        if self.gain_mode not in ("binary", "dcg"):
            raise InvalidInput(f"unknown gain mode {self.gain_mode!r}")
        if self.temperature <= 0:
            raise InvalidInput("temperature must be positive")


@dataclass(frozen=True)
class ReplicaResult:
    """Outcome of one replica; failed replicas carry a reason and no scores."""

    replica_index: int
    dist: IntentDistribution | None
    gains: GainVector | None
    es: float | None
    vb: ScoreBreakdown | None
    status: str = "ok"
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def replica_rng(
    master_seed: int, query_id: str, replica_index: int
) -> np.random.Generator:
    """Counter-style RNG split: stream depends only on the three keys.

    The query id is hashed with SHA-256 (stable across processes and
    platforms) and folded into the SeedSequence spawn key as two 32-bit
    words alongside the replica index.
    """
    digest = hashlib.sha256(query_id.encode("utf-8")).digest()
    qhash = int.from_bytes(digest[:8], "big")
    spawn_key = (qhash >> 32, qhash & 0xFFFFFFFF, replica_index)
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=spawn_key)
    )


def _top_candidate_index(candidates: Sequence[ScoredCandidate]) -> int:
    return min(
        range(len(candidates)),
        key=lambda i: (-candidates[i].raw_score, candidates[i].entity.entity_id),
    )


def apply_perturbation(
    spec: PerturbationSpec,
    candidates: list[ScoredCandidate],
    constraints: list[Constraint],
    variants: Mapping[str, Sequence[ScoredCandidate]],
    rng: np.random.Generator,
) -> tuple[list[ScoredCandidate], list[Constraint]]:
    """Apply one perturbation; RNG draws follow input order so results are
    reproducible."""
    if spec.kind == "score_jitter":
        candidates = [
            ScoredCandidate(c.entity, c.raw_score + float(rng.normal(0.0, spec.sigma)))
            for c in candidates
        ]
    elif spec.kind == "weight_rescale":
        constraints = [
            Constraint(
                constraint_id=c.constraint_id,
                attribute=c.attribute,
                value=c.value,
                op=c.op,
                weight=c.weight * float(np.exp(rng.normal(0.0, spec.log_sd))),
            )
            for c in constraints
        ]
    elif spec.kind == "candidate_dropout":
        keep = _top_candidate_index(candidates)
        survivors = []
        for i, cand in enumerate(candidates):
            drop = rng.random() < spec.dropout_p
            if i == keep or not drop:
                survivors.append(cand)
        candidates = survivors
    else:  # paraphrase_variants
        pool = list(spec.variant_ids) if spec.variant_ids else sorted(variants)
        missing = [vid for vid in pool if vid not in variants]
        if missing:
            raise InvalidInput(f"unknown paraphrase variant ids: {missing}")
        if pool:
            chosen = pool[int(rng.integers(0, len(pool)))]
            candidates = list(variants[chosen])
    return candidates, constraints


class _AssignmentMemo:
    """Reuses tag assignments across replicas with identical candidate sets.

    Only valid for deterministic taggers; keyed on the tagging-relevant
    content of the distribution's entities.
    """

    def __init__(self):
        self._cache: dict[tuple, list] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(dist: IntentDistribution) -> tuple:
        return tuple(
            (e.entity_id, e.surface_name, e.aliases) for e in dist.entities()
        )

    def get_or_compute(self, dist, run, tagger):
        key = self.key(dist)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        assignments = tag_results(run, dist, tagger)
        with self._lock:
            self._cache.setdefault(key, assignments)
        return assignments


def _run_one_replica(
    index: int,
    query,
    run: RankedRun,
    config: ReplicaConfig,
    tagger: Tagger,
    memo: _AssignmentMemo | None,
) -> ReplicaResult:
    rng = replica_rng(config.master_seed, query.query_id, index)
    candidates = list(query.candidates)
    constraints = list(query.constraints)
    try:
        for spec in config.perturbations:
            candidates, constraints = apply_perturbation(
                spec, candidates, constraints, query.paraphrase_variants, rng
            )
        dist = build_distribution(
            candidates,
            constraints,
            config.temperature,
            alias_table=query.alias_table,
            truncation=config.truncation,
        )
        if memo is not None:
            assignments = memo.get_or_compute(dist, run, tagger)
        else:
            assignments = tag_results(run, dist, tagger)
        gains = gain_vector(assignments, dist, config.k, config.gain_mode)
        es = expected_success(dist, gains)
        breakdown = vb_score(es, config.alpha, k=config.k, gain_mode=config.gain_mode)
    except TaggerUnavailable as exc:
        return ReplicaResult(
            replica_index=index,
            dist=None,
            gains=None,
            es=None,
            vb=None,
            status="failed",
            reason=str(exc),
        )
    return ReplicaResult(
        replica_index=index,
        dist=dist,
        gains=gains,
        es=es,
        vb=breakdown,
    )


def run_replicas(
    query,
    run: RankedRun,
    config: ReplicaConfig,
    tagger: Tagger,
    *,
    workers: int = 1,
) -> list[ReplicaResult]:
    """Produce B replica scores for one (query, run) pair.

    Results are ordered by replica index and identical for any worker
    count. Raises EstimationFailed when every replica failed.
    """
    if query.query_id != run.query_id:
        raise InvalidInput(
            f"query {query.query_id!r} does not match run {run.query_id!r}"
        )
    if not query.candidates:
        raise InvalidInput(f"query {query.query_id!r} has no candidates")
    memo = _AssignmentMemo() if getattr(tagger, "deterministic", False) else None
    serial_tagger = not getattr(tagger, "concurrency_safe", True)
    indices = range(config.replica_count)
    if workers <= 1 or config.replica_count == 1 or serial_tagger:
        results = [
            _run_one_replica(i, query, run, config, tagger, memo) for i in indices
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(
                    lambda i: _run_one_replica(i, query, run, config, tagger, memo),
                    indices,
                )
            )
    if not any(r.ok for r in results):
        reasons = {r.reason for r in results if r.reason}
        raise EstimationFailed(
            f"all {config.replica_count} replicas failed for query "
            f"{query.query_id!r}: {sorted(reasons)}"
        )
    return results


def estimate_es(replicas: Sequence[ReplicaResult]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation of surviving replica ES.

    A constant sample has sigma exactly 0 (no roundoff from the mean
    subtraction), so degenerate replica sets yield degenerate intervals.
    """
    values = [r.es for r in replicas if r.ok]
    if not values:
        raise EstimationFailed("no surviving replicas to estimate from")
    return sample_mean(values), sample_sigma(values)


def estimate_vb(replicas: Sequence[ReplicaResult], alpha: float) -> float:
    """Mean of per-replica clamped VB at the given alpha.

    Recomputed from each replica's ES so alpha sweeps do not need to
    regenerate replicas.
    """
    values = [vb_score(r.es, alpha).vb for r in replicas if r.ok]
    if not values:
        raise EstimationFailed("no surviving replicas to estimate from")
    return sample_mean(values)


def vb_samples(replicas: Sequence[ReplicaResult], alpha: float) -> list[float]:
    """Per-replica clamped VB values (surviving replicas only)."""
    return [vb_score(r.es, alpha).vb for r in replicas if r.ok]


def es_samples(replicas: Sequence[ReplicaResult]) -> list[float]:
    return [r.es for r in replicas if r.ok]
