"""Distributions over plausible query interpretations.

Builds a probability vector over candidate entities from linker scores
(temperature-scaled softmax), reweights it by how well each candidate
satisfies the query's attribute constraints (exponential penalty on the
weighted violation count), then canonicalizes duplicates and truncates
negligible mass before renormalizing.

All functions here are pure and safe to call concurrently.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInput

PROB_SUM_TOL = 1e-9

# A canonicalizer maps an entity to a merge key (None = no opinion). The
# built-in ones are KB-id (via the alias table) and normalized surface
# name; heavier strategies such as embedding-similarity clustering can be
# plugged in through this hook without touching the merge logic.
Canonicalizer = Callable[["CandidateEntity"], "str | None"]

_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_surface(text: str) -> str:
    """Case-fold, strip punctuation, and collapse whitespace.

    This is the canonical string form used both for duplicate merging and
    for exact-name matching in the rule tagger.
    """
    return " ".join(_PUNCT_RE.sub(" ", text.casefold()).split())


@dataclass(frozen=True)
class CandidateEntity:
    """One plausible interpretation of a query.

    ``attributes`` holds the entity's known attribute values, consulted by
    constraint predicates. ``aliases`` are alternate surface strings; they
    are de-duplicated case-insensitively at construction.
    """

    entity_id: str
    surface_name: str
    aliases: tuple[str, ...] = ()
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.entity_id:
            raise InvalidInput("entity_id must be nonempty")
        seen: set[str] = set()
        unique: list[str] = []
        for alias in self.aliases:
            key = alias.casefold()
            if key not in seen:
                seen.add(key)
                unique.append(alias)
        object.__setattr__(self, "aliases", tuple(unique))


@dataclass(frozen=True)
class ScoredCandidate:
    """A candidate entity paired with its (unbounded) linker score."""

    entity: CandidateEntity
    raw_score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.raw_score):
            raise InvalidInput(
                f"raw_score for {self.entity.entity_id!r} must be finite"
            )


@dataclass(frozen=True)
class Constraint:
    """Weighted attribute test against ``CandidateEntity.attributes``.

    ``op`` is ``"equals"`` (case-folded equality) or ``"contains"``
    (case-folded substring). A candidate missing the attribute counts as a
    violation.
    """

    constraint_id: str
    attribute: str
    value: str
    op: str = "equals"
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.op not in ("equals", "contains"):
            raise InvalidInput(f"unknown constraint op {self.op!r}")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise InvalidInput(
                f"constraint {self.constraint_id!r} weight must be >= 0"
            )

    def satisfied_by(self, entity: CandidateEntity) -> bool:
        actual = entity.attributes.get(self.attribute)
        if actual is None:
            return False
        if self.op == "equals":
            return actual.casefold() == self.value.casefold()
        return self.value.casefold() in actual.casefold()


@dataclass(frozen=True)
class IntentDistribution:
    """Probability vector over candidate entities.

    Invariants enforced at construction: probabilities are nonnegative,
    sum to 1 within ``PROB_SUM_TOL``, and entity ids are unique.
    ``provenance`` records how probabilities were derived: ``softmax``
    (scores only), ``relaxation`` (constraints only), or ``merged``
    (both combined). Deduplication and truncation preserve provenance.
    """

    entries: tuple[tuple[CandidateEntity, float], ...]
    temperature_used: float = 1.0
    provenance: str = "softmax"

    def __post_init__(self) -> None:
        if not self.entries:
            raise InvalidInput("distribution must have at least one entry")
        if self.provenance not in ("softmax", "relaxation", "merged"):
            raise InvalidInput(f"unknown provenance {self.provenance!r}")
        if self.temperature_used <= 0:
            raise InvalidInput("temperature_used must be positive")
        total = 0.0
        seen: set[str] = set()
        for entity, prob in self.entries:
            if prob < 0 or not math.isfinite(prob):
                raise InvalidInput(
                    f"probability for {entity.entity_id!r} is invalid: {prob}"
                )
            if entity.entity_id in seen:
                raise InvalidInput(f"duplicate entity_id {entity.entity_id!r}")
            seen.add(entity.entity_id)
            total += prob
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise InvalidInput(f"probabilities sum to {total!r}, expected 1")

    def entities(self) -> tuple[CandidateEntity, ...]:
        return tuple(entity for entity, _ in self.entries)

    def entity_ids(self) -> tuple[str, ...]:
        return tuple(entity.entity_id for entity, _ in self.entries)

    def probabilities(self) -> np.ndarray:
        return np.array([prob for _, prob in self.entries], dtype=np.float64)

    def to_dict(self) -> dict:
        """JSON-ready form; float values keep full repr precision."""
        return {
            "temperature_used": self.temperature_used,
            "provenance": self.provenance,
            "entries": [
                {"entity_id": entity.entity_id, "probability": prob}
                for entity, prob in self.entries
            ],
        }


@dataclass(frozen=True)
class TruncationPolicy:
    """Rule for dropping negligible candidates.

    ``kind`` is one of ``threshold`` (keep mass >= tau, tau in [0,1)),
    ``top_k`` (keep the K most probable, K >= 1), or ``cumulative_mass``
    (keep the smallest high-probability prefix whose mass reaches rho,
    rho in (0,1]).
    """

    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind == "threshold":
            if not 0.0 <= self.value < 1.0:
                raise InvalidInput("threshold tau must lie in [0, 1)")
        elif self.kind == "top_k":
            if self.value < 1 or self.value != int(self.value):
                raise InvalidInput("top_k K must be an integer >= 1")
        elif self.kind == "cumulative_mass":
            if not 0.0 < self.value <= 1.0:
                raise InvalidInput("cumulative mass rho must lie in (0, 1]")
        else:
            raise InvalidInput(f"unknown truncation kind {self.kind!r}")

    @classmethod
    def threshold(cls, tau: float) -> "TruncationPolicy":
        return cls("threshold", float(tau))

    @classmethod
    def top_k(cls, k: int) -> "TruncationPolicy":
        return cls("top_k", int(k))

    @classmethod
    def cumulative_mass(cls, rho: float) -> "TruncationPolicy":
        return cls("cumulative_mass", float(rho))

    @classmethod
    def parse(cls, text: str) -> "TruncationPolicy | None":
        """Parse CLI spellings like ``top_k:5``, ``threshold:0.01``,
        ``mass:0.9``, or ``none``."""
        if text == "none":
            return None
        kind, sep, raw = text.partition(":")
        if not sep:
            raise InvalidInput(f"truncation policy needs a parameter: {text!r}")
        names = {"threshold": "threshold", "top_k": "top_k", "mass": "cumulative_mass"}
        if kind not in names:
            raise InvalidInput(f"unknown truncation policy {kind!r}")
        try:
            value = float(raw)
        except ValueError as exc:
            raise InvalidInput(f"bad truncation parameter {raw!r}") from exc
        return cls(names[kind], value)

    def spelling(self) -> str:
        names = {"threshold": "threshold", "top_k": "top_k", "cumulative_mass": "mass"}
        value = int(self.value) if self.kind == "top_k" else self.value
        return f"{names[self.kind]}:{value}"


def _normalized(weights: np.ndarray) -> np.ndarray:
    return weights / weights.sum()


def softmax_distribution(
    candidates: Sequence[ScoredCandidate], temperature: float = 1.0
) -> IntentDistribution:
    """Convert linker scores to probabilities via temperature softmax.

    pi_i = exp(s_i / T) / sum_j exp(s_j / T), computed with a max shift so
    large scores cannot overflow. Entry order follows the input.
    """
    if not candidates:
        raise InvalidInput("candidate list is empty")
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInput("temperature must be positive and finite")
    scores = np.array([c.raw_score for c in candidates], dtype=np.float64)
    scaled = scores / temperature
    probs = _normalized(np.exp(scaled - scaled.max()))
    entries = tuple(
        (cand.entity, float(p)) for cand, p in zip(candidates, probs)
    )
    return IntentDistribution(entries, temperature_used=temperature, provenance="softmax")


def violation_penalty(
    entity: CandidateEntity, constraints: Iterable[Constraint]
) -> float:
    """Weighted count of constraints the entity violates."""
    total = 0.0
    for constraint in constraints:
        if constraint.weight < 0:
            raise InvalidInput("constraint weights must be >= 0")
        if not constraint.satisfied_by(entity):
            total += constraint.weight
    return total


def relaxation_distribution(
    candidates: Sequence[CandidateEntity], constraints: Sequence[Constraint]
) -> IntentDistribution:
    """Distribute mass by constraint satisfaction alone.

    pi(E) is proportional to exp(-penalty(E)), so candidates violating
    fewer or lighter constraints retain more mass; with all weights zero
    the result is uniform.
    """
    if not candidates:
        raise InvalidInput("candidate list is empty")
    penalties = np.array(
        [violation_penalty(entity, constraints) for entity in candidates],
        dtype=np.float64,
    )
    probs = _normalized(np.exp(-(penalties - penalties.min())))
    entries = tuple((entity, float(p)) for entity, p in zip(candidates, probs))
    return IntentDistribution(entries, provenance="relaxation")


def build_distribution(
    candidates: Sequence[ScoredCandidate],
    constraints: Sequence[Constraint] = (),
    temperature: float = 1.0,
    *,
    alias_table: Mapping[str, str] | None = None,
    truncation: TruncationPolicy | None = None,
) -> IntentDistribution:
    """Run the full input-side pipeline for one candidate set.

    Combines the score softmax with the constraint-relaxation weights in
    log space (pi_i proportional to exp(s_i/T - penalty_i)), then merges
    duplicates and applies the truncation policy. With no constraints the
    result is the plain softmax.
    """
    if not candidates:
        raise InvalidInput("candidate list is empty")
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInput("temperature must be positive and finite")
    scores = np.array([c.raw_score for c in candidates], dtype=np.float64)
    logits = scores / temperature
    provenance = "softmax"
    if constraints:
        logits = logits - np.array(
            [violation_penalty(c.entity, constraints) for c in candidates]
        )
        provenance = "merged"
    probs = _normalized(np.exp(logits - logits.max()))
    dist = IntentDistribution(
        tuple((cand.entity, float(p)) for cand, p in zip(candidates, probs)),
        temperature_used=temperature,
        provenance=provenance,
    )
    dist = deduplicate(dist, alias_table or {})
    if truncation is not None:
        dist = truncate_and_renormalize(dist, truncation)
    return dist


def _canonical_id(entity_id: str, alias_table: Mapping[str, str]) -> str:
    """Follow alias chains to a fixpoint; reject cycles."""
    current = entity_id
    seen = {current}
    while current in alias_table and alias_table[current] != current:
        current = alias_table[current]
        if current in seen:
            raise InvalidInput(f"alias cycle involving {entity_id!r}")
        seen.add(current)
    return current


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller index as root so group order is stable
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


def deduplicate(
    dist: IntentDistribution,
    alias_table: Mapping[str, str],
    *,
    canonicalizer: Canonicalizer | None = None,
) -> IntentDistribution:
    """Merge entries that denote the same entity.

    Two entries merge when their ids map to the same canonical id through
    the alias table, or their surface names coincide after normalization
    (case-fold, strip punctuation, collapse whitespace), or an optional
    extra ``canonicalizer`` assigns them the same key; merging is
    transitive. The merged entry carries the summed probability and the
    metadata of the highest-probability member (ties: lexicographically
    smallest entity_id), and sits at the group's earliest position.
    """
    entries = dist.entries
    uf = _UnionFind(len(entries))
    by_key: dict[tuple[str, str], int] = {}
    for i, (entity, _) in enumerate(entries):
        keys = [
            ("id", _canonical_id(entity.entity_id, alias_table)),
            ("name", normalize_surface(entity.surface_name)),
        ]
        if canonicalizer is not None:
            custom = canonicalizer(entity)
            if custom is not None:
                keys.append(("custom", custom))
        for key in keys:
            if key[1] == "":
                continue
            if key in by_key:
                uf.union(by_key[key], i)
            else:
                by_key[key] = i

    groups: dict[int, list[int]] = {}
    for i in range(len(entries)):
        groups.setdefault(uf.find(i), []).append(i)

    merged: list[tuple[CandidateEntity, float]] = []
    for root in sorted(groups):
        members = groups[root]
        mass = sum(entries[i][1] for i in members)
        best = min(members, key=lambda i: (-entries[i][1], entries[i][0].entity_id))
        merged.append((entries[best][0], mass))
    return IntentDistribution(
        tuple(merged),
        temperature_used=dist.temperature_used,
        provenance=dist.provenance,
    )


def truncate_and_renormalize(
    dist: IntentDistribution, policy: TruncationPolicy
) -> IntentDistribution:
    """Drop negligible entries per the policy and rescale to sum 1.

    Selection happens over entries sorted by probability descending (ties:
    lexicographic entity_id); at least the top entry always survives, and
    survivors keep their relative ratios. The output lists survivors in
    that sorted order.
    """
    ordered = sorted(dist.entries, key=lambda e: (-e[1], e[0].entity_id))
    if policy.kind == "top_k":
        survivors = ordered[: int(policy.value)]
    elif policy.kind == "threshold":
        survivors = [e for e in ordered if e[1] >= policy.value]
    else:  # cumulative_mass
        survivors = []
        mass = 0.0
        for entry in ordered:
            survivors.append(entry)
            mass += entry[1]
            if mass >= policy.value:
                break
    if not survivors:
        survivors = [ordered[0]]
    total = sum(p for _, p in survivors)
    entries = tuple((entity, p / total) for entity, p in survivors)
    return IntentDistribution(
        entries,
        temperature_used=dist.temperature_used,
        provenance=dist.provenance,
    )
