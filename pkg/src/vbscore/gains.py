"""Per-intent gains of a ranked run at cutoff k.

Each retrieved item is assigned to the candidate entity it is about (via a
pluggable tagger), and every intent receives a gain in [0, 1]: binary
coverage (is any top-k result about this entity?) or a rank-discounted
variant where the best matching rank r contributes 1/log2(r + 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

from .errors import InvalidInput
from .intent import CandidateEntity, IntentDistribution

GAIN_MODES = ("binary", "dcg")


@dataclass(frozen=True)
class ResultItem:
    """One entry of a system's ranked output."""

    doc_id: str
    rank: int
    title: str = ""
    snippet: str = ""
    url: str | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise InvalidInput("doc_id must be nonempty")
        if self.rank < 1:
            raise InvalidInput(f"rank must be >= 1, got {self.rank}")


@dataclass(frozen=True)
class RankedRun:
    """A system's ranked list for one query.

    Ranks must be contiguous 1..len(items); lists shorter than
    ``cutoff_k`` are legal (missing ranks contribute zero gain).
    """

    query_id: str
    items: tuple[ResultItem, ...]
    cutoff_k: int

    def __post_init__(self) -> None:
        if not self.query_id:
            raise InvalidInput("query_id must be nonempty")
        if self.cutoff_k < 1:
            raise InvalidInput("cutoff_k must be >= 1")
        for position, item in enumerate(self.items, start=1):
            if item.rank != position:
                raise InvalidInput(
                    f"run {self.query_id!r}: ranks must be contiguous from 1, "
                    f"found rank {item.rank} at position {position}"
                )


@dataclass(frozen=True)
class EntityAssignment:
    """Outcome of tagging one result; ``assigned_entity_id`` is None when
    no candidate matched."""

    doc_id: str
    assigned_entity_id: str | None = None
    confidence: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInput(
                f"confidence must lie in [0, 1], got {self.confidence}"
            )


@dataclass(frozen=True)
class GainVector:
    """Per-intent gains aligned 1:1 with an IntentDistribution."""

    per_intent: tuple[tuple[str, float], ...]
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in GAIN_MODES:
            raise InvalidInput(f"unknown gain mode {self.mode!r}")
        for entity_id, gain in self.per_intent:
            if not 0.0 <= gain <= 1.0:
                raise InvalidInput(
                    f"gain for {entity_id!r} outside [0, 1]: {gain}"
                )

    def entity_ids(self) -> tuple[str, ...]:
        return tuple(entity_id for entity_id, _ in self.per_intent)

    def values(self) -> tuple[float, ...]:
        return tuple(gain for _, gain in self.per_intent)


@runtime_checkable
class Tagger(Protocol):
    """Assigns a result item to one of the candidate entities (or none).

    ``deterministic`` lets callers reuse assignments across Monte Carlo
    replicas whose candidate sets are identical; ``concurrency_safe``
    tells the engine whether calls may run in parallel.
    """

    deterministic: bool
    concurrency_safe: bool

    def tag(
        self,
        item: ResultItem,
        candidates: Sequence[CandidateEntity],
        *,
        query_id: str = "",
    ) -> EntityAssignment: ...


def tag_results(
    run: RankedRun, dist: IntentDistribution, tagger: Tagger
) -> list[EntityAssignment]:
    """Tag every item of the run against the distribution's entities.

    Returns one assignment per item, in rank order. Assignments naming an
    entity outside the (possibly truncated) distribution are demoted to
    unassigned so gains always align with the distribution's support.
    """
    candidates = dist.entities()
    known = set(dist.entity_ids())
    assignments: list[EntityAssignment] = []
    for item in run.items:
        assignment = tagger.tag(item, candidates, query_id=run.query_id)
        if (
            assignment.assigned_entity_id is not None
            and assignment.assigned_entity_id not in known
        ):
            assignment = EntityAssignment(doc_id=item.doc_id)
        assignments.append(assignment)
    return assignments


def _first_match_ranks(
    assignments: Sequence[EntityAssignment], k: int
) -> dict[str, int]:
    """Smallest rank (1-based position) per entity within the top k.

    Assignments must be in rank order, as produced by ``tag_results``.
    """
    first: dict[str, int] = {}
    for position, assignment in enumerate(assignments[:k], start=1):
        entity_id = assignment.assigned_entity_id
        if entity_id is not None and entity_id not in first:
            first[entity_id] = position
    return first


def binary_gain(
    assignments: Sequence[EntityAssignment], dist: IntentDistribution, k: int
) -> GainVector:
    """Coverage indicator: 1 iff some top-k result is about the entity."""
    if k < 1:
        raise InvalidInput("k must be >= 1")
    first = _first_match_ranks(assignments, k)
    per_intent = tuple(
        (entity_id, 1.0 if entity_id in first else 0.0)
        for entity_id in dist.entity_ids()
    )
    return GainVector(per_intent, mode="binary")


def dcg_gain(
    assignments: Sequence[EntityAssignment], dist: IntentDistribution, k: int
) -> GainVector:
    """Rank-discounted coverage: the best matching rank r in the top k
    contributes 1/log2(r + 1), so a rank-1 match scores exactly 1.0."""
    if k < 1:
        raise InvalidInput("k must be >= 1")
    first = _first_match_ranks(assignments, k)
    per_intent = tuple(
        (
            entity_id,
            1.0 / math.log2(first[entity_id] + 1) if entity_id in first else 0.0,
        )
        for entity_id in dist.entity_ids()
    )
    return GainVector(per_intent, mode="dcg")


def gain_vector(
    assignments: Sequence[EntityAssignment],
    dist: IntentDistribution,
    k: int,
    mode: str,
) -> GainVector:
    if mode == "binary":
        return binary_gain(assignments, dist, k)
    if mode == "dcg":
        return dcg_gain(assignments, dist, k)
    raise InvalidInput(f"unknown gain mode {mode!r}")
