"""Entity assignment strategies for retrieved results.

The rule-based tagger keeps the whole pipeline offline and deterministic:
it tries a fixed sequence of matching rules (doc id, exact name, alias
containment, token overlap) and returns the first hit. The remote tagger
delegates to an HTTP endpoint (typically an LLM-backed linker) speaking a
small JSON contract.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import httpx

from .errors import InvalidInput, TaggerUnavailable
from .gains import EntityAssignment, ResultItem
from .intent import CandidateEntity, normalize_surface

logger = logging.getLogger(__name__)

ENDPOINT_ENV_VAR = "VB_TAGGER_ENDPOINT"
MATCH_RULES = ("exact_id", "exact_name", "alias", "token_overlap")


def _tokens(text: str) -> frozenset[str]:
    return frozenset(normalize_surface(text).split())


@dataclass(frozen=True)
class RuleTagger:
    """Deterministic tagger driven by string-matching rules.

    Rules fire in ``match_order``; the first rule with any match wins:

    - ``exact_id``: the item's doc_id equals a candidate's entity_id.
    - ``exact_name``: the normalized title equals a normalized surface name.
    - ``alias``: a candidate alias (own aliases plus ``alias_table`` entries
      pointing at it) occurs, normalized, inside the normalized
      title + snippet text.
    - ``token_overlap``: |shared tokens between item text and the
      candidate's name/aliases| / |name tokens| >= ``overlap_threshold``.

    Exact rules report confidence 1.0; token overlap reports the (capped)
    overlap ratio. Ties break toward higher overlap, then lexicographically
    smallest entity_id.
    """

    alias_table: Mapping[str, str] = field(default_factory=dict)
    match_order: tuple[str, ...] = MATCH_RULES
    overlap_threshold: float = 0.5

    deterministic = True
    concurrency_safe = True

    def __post_init__(self) -> None:
        if not 0.0 < self.overlap_threshold <= 1.0:
            raise InvalidInput("overlap_threshold must lie in (0, 1]")
        unknown = set(self.match_order) - set(MATCH_RULES)
        if unknown:
            raise InvalidInput(f"unknown match rules: {sorted(unknown)}")

    def tag(
        self,
        item: ResultItem,
        candidates: Sequence[CandidateEntity],
        *,
        query_id: str = "",
    ) -> EntityAssignment:
        if not candidates:
            raise InvalidInput("candidate list is empty")
        for rule in self.match_order:
            hit = getattr(self, f"_match_{rule}")(item, candidates)
            if hit is not None:
                entity_id, confidence = hit
                return EntityAssignment(
                    doc_id=item.doc_id,
                    assigned_entity_id=entity_id,
                    confidence=confidence,
                )
        return EntityAssignment(doc_id=item.doc_id)

    def _match_exact_id(self, item, candidates):
        for cand in sorted(candidates, key=lambda c: c.entity_id):
            if item.doc_id == cand.entity_id:
                return cand.entity_id, 1.0
        return None

    def _match_exact_name(self, item, candidates):
        title = normalize_surface(item.title)
        if not title:
            return None
        for cand in sorted(candidates, key=lambda c: c.entity_id):
            if normalize_surface(cand.surface_name) == title:
                return cand.entity_id, 1.0
        return None

    def _aliases_of(self, cand: CandidateEntity) -> list[str]:
        extra = [
            alias
            for alias, entity_id in self.alias_table.items()
            if entity_id == cand.entity_id
        ]
        return list(cand.aliases) + sorted(extra)

    def _match_alias(self, item, candidates):
        text = normalize_surface(f"{item.title} {item.snippet}")
        if not text:
            return None
        padded = f" {text} "
        for cand in sorted(candidates, key=lambda c: c.entity_id):
            for alias in self._aliases_of(cand):
                normalized = normalize_surface(alias)
                if normalized and f" {normalized} " in padded:
                    return cand.entity_id, 1.0
        return None

    def _match_token_overlap(self, item, candidates):
        doc_tokens = _tokens(f"{item.title} {item.snippet}")
        if not doc_tokens:
            return None
        best: tuple[float, str] | None = None
        for cand in candidates:
            name_tokens = _tokens(cand.surface_name)
            if not name_tokens:
                continue
            cand_tokens = set(name_tokens)
            for alias in self._aliases_of(cand):
                cand_tokens |= _tokens(alias)
            overlap = len(doc_tokens & cand_tokens) / len(name_tokens)
            if overlap >= self.overlap_threshold:
                key = (-overlap, cand.entity_id)
                if best is None or key < (-best[0], best[1]):
                    best = (overlap, cand.entity_id)
        if best is None:
            return None
        return best[1], min(1.0, best[0])


class RemoteTagger:
    """HTTP client for an external tagging service.

    Request: POST ``{query_id, doc: {doc_id, title, snippet, url},
    candidates: [{entity_id, surface_name, aliases}]}``.
    Response: ``{"entity_id": string | null, "confidence": number}``.

    Any non-2xx response, timeout, or transport error is retried up to
    ``max_retries`` times; exhaustion raises TaggerUnavailable. A response
    naming an entity outside the candidate list is logged and treated as
    unassigned. When ``audit_log_path`` is set, every exchange is appended
    to that JSONL file.
    """

    deterministic = False
    concurrency_safe = True

    def __init__(
        self,
        endpoint_url: str | None = None,
        *,
        timeout_ms: int = 5000,
        max_retries: int = 2,
        audit_log_path: str | None = None,
        client: httpx.Client | None = None,
    ):
        resolved = endpoint_url or os.environ.get(ENDPOINT_ENV_VAR)
        if not resolved:
            raise InvalidInput(
                f"remote tagger needs an endpoint URL ({ENDPOINT_ENV_VAR} unset)"
            )
        if max_retries < 0:
            raise InvalidInput("max_retries must be >= 0")
        self.endpoint_url = resolved
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.audit_log_path = audit_log_path
        self._audit_lock = threading.Lock()
        self._client = client or httpx.Client(
            timeout=httpx.Timeout(timeout_ms / 1000.0)
        )

    def tag(
        self,
        item: ResultItem,
        candidates: Sequence[CandidateEntity],
        *,
        query_id: str = "",
    ) -> EntityAssignment:
        payload = {
            "query_id": query_id,
            "doc": {
                "doc_id": item.doc_id,
                "title": item.title,
                "snippet": item.snippet,
                "url": item.url,
            },
            "candidates": [
                {
                    "entity_id": cand.entity_id,
                    "surface_name": cand.surface_name,
                    "aliases": list(cand.aliases),
                }
                for cand in candidates
            ],
        }
        body = self._post_with_retries(payload, doc_id=item.doc_id)
        entity_id = body.get("entity_id")
        confidence = body.get("confidence", 0.0)
        if not isinstance(confidence, (int, float)) or not 0.0 <= confidence <= 1.0:
            logger.warning(
                "tagger returned out-of-range confidence %r for doc %s; clamping",
                confidence,
                item.doc_id,
            )
            confidence = min(1.0, max(0.0, float(confidence))) if isinstance(
                confidence, (int, float)
            ) else 0.0
        if entity_id is None:
            return EntityAssignment(doc_id=item.doc_id)
        known = {cand.entity_id for cand in candidates}
        if entity_id not in known:
            logger.warning(
                "tagger named unknown entity %r for doc %s; treating as unassigned",
                entity_id,
                item.doc_id,
            )
            return EntityAssignment(doc_id=item.doc_id)
        return EntityAssignment(
            doc_id=item.doc_id,
            assigned_entity_id=entity_id,
            confidence=float(confidence),
        )

    def _post_with_retries(self, payload: dict, *, doc_id: str) -> dict:
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post(self.endpoint_url, json=payload)
                if 200 <= response.status_code < 300:
                    body = response.json()
                    self._audit(payload, response=body)
                    return body
                last_error = f"HTTP {response.status_code}"
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            except json.JSONDecodeError as exc:
                last_error = f"invalid JSON body: {exc}"
            logger.debug(
                "tagger attempt %d/%d for doc %s failed: %s",
                attempt + 1,
                self.max_retries + 1,
                doc_id,
                last_error,
            )
        self._audit(payload, error=last_error)
        raise TaggerUnavailable(
            f"tagger at {self.endpoint_url} failed after "
            f"{self.max_retries + 1} attempts: {last_error}"
        )

    def _audit(self, payload: dict, *, response: dict | None = None, error: str | None = None) -> None:
        if self.audit_log_path is None:
            return
        record = {"request": payload}
        if response is not None:
            record["response"] = response
        if error is not None:
            record["error"] = error
        line = json.dumps(record, sort_keys=True)
        with self._audit_lock:
            with open(self.audit_log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


@dataclass(frozen=True)
class TaggerSpec:
    """Declarative tagger choice, buildable from CLI flags or config."""

    kind: str = "rule"
    alias_table: Mapping[str, str] = field(default_factory=dict)
    match_order: tuple[str, ...] = MATCH_RULES
    overlap_threshold: float = 0.5
    endpoint_url: str | None = None
    timeout_ms: int = 5000
    max_retries: int = 2
    audit_log_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("rule", "remote"):
            raise InvalidInput(f"unknown tagger kind {self.kind!r}")

    def build(self):
        if self.kind == "rule":
            return RuleTagger(
                alias_table=dict(self.alias_table),
                match_order=self.match_order,
                overlap_threshold=self.overlap_threshold,
            )
        return RemoteTagger(
            self.endpoint_url,
            timeout_ms=self.timeout_ms,
            max_retries=self.max_retries,
            audit_log_path=self.audit_log_path,
        )

    def describe(self) -> dict:
        """Config-echo form (omits secrets-adjacent fields it doesn't have)."""
        if self.kind == "rule":
            return {
                "kind": "rule",
                "match_order": list(self.match_order),
                "overlap_threshold": self.overlap_threshold,
            }
        return {
            "kind": "remote",
            "endpoint_url": self.endpoint_url,
            "timeout_ms": self.timeout_ms,
            "max_retries": self.max_retries,
        }
