"""File formats, resolved configuration, and report assembly.

Queries and runs are JSONL (one object per line, so errors are
line-addressable); reports are JSON; plot data is CSV whose numbers are
formatted exactly like the JSON floats. All files are written atomically
(temp file + rename) and report content is fully determined by inputs,
seed, and config — never by worker count or wall clock.
"""
from __future__ import annotations

import csv
import io as _stdio
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EstimationFailed, InvalidInput, ParseError, ValidationError
from .gains import RankedRun, ResultItem, Tagger
from .intent import CandidateEntity, Constraint, ScoredCandidate, TruncationPolicy
from .metric import ALPHA_GRID, DEFAULT_ALPHA
from .replicas import (
    PerturbationSpec,
    ReplicaConfig,
    es_samples,
    estimate_es,
    estimate_vb,
    run_replicas,
    vb_samples,
)
from .taggers import TaggerSpec
from .uncertainty import (
    DEFAULT_BOOT_RESAMPLES,
    DEFAULT_DELTA,
    ConfidenceInterval,
    QueryEstimate,
    collection_aggregate,
    normal_ci,
    percentile_ci,
    sample_mean,
    sample_sigma,
)

REPORT_VERSION = "1.0"
DEFAULT_PERTURBATIONS = (PerturbationSpec(kind="score_jitter", sigma=0.1),)


@dataclass(frozen=True)
class Query:
    """One evaluable query: candidates with linker scores, optional
    weighted constraints, an optional id-level alias table for dedup, and
    optional named alternate candidate sets for the paraphrase
    perturbation."""

    query_id: str
    text: str
    candidates: tuple[ScoredCandidate, ...]
    constraints: tuple[Constraint, ...] = ()
    alias_table: Mapping[str, str] = field(default_factory=dict)
    paraphrase_variants: Mapping[str, tuple[ScoredCandidate, ...]] = field(
        default_factory=dict
    )

    def __post_init__(self) -> None:
        if not self.query_id:
            raise InvalidInput("query_id must be nonempty")
        if not self.candidates:
            raise InvalidInput(f"query {self.query_id!r} has no candidates")

    @property
    def paraphrase_variant_refs(self) -> tuple[str, ...]:
        return tuple(sorted(self.paraphrase_variants))


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved scoring configuration.

    ``k=None`` defers to each run's cutoff. Everything here participates
    in the config echo embedded in reports; execution knobs (worker count,
    output paths) deliberately do not.
    """

    k: int | None = None
    alpha: float = DEFAULT_ALPHA
    gain_mode: str = "binary"
    truncation: TruncationPolicy | None = None
    temperature: float = 1.0
    replica_count: int = 20
    master_seed: int = 42
    perturbations: tuple[PerturbationSpec, ...] = DEFAULT_PERTURBATIONS
    delta: float = DEFAULT_DELTA
    ci_method: str = "percentile"
    boot_resamples: int = DEFAULT_BOOT_RESAMPLES
    tagger_spec: TaggerSpec = field(default_factory=TaggerSpec)
    ablate: bool = False
    alpha_grid: tuple[float, ...] = ALPHA_GRID

    def __post_init__(self) -> None:
        if self.ci_method not in ("percentile", "normal"):
            raise InvalidInput(f"unknown ci method {self.ci_method!r}")
        if self.k is not None and self.k < 1:
            raise InvalidInput("k must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInput("delta must lie in (0, 1)")
        if self.boot_resamples < 1:
            raise InvalidInput("boot_resamples must be >= 1")
        # surface replica-level violations (alpha, B, seed, temperature,
        # gain mode) at configuration time instead of mid-run
        self.replica_config(self.k if self.k is not None else 1)

    def replica_config(self, k: int) -> ReplicaConfig:
        return ReplicaConfig(
            replica_count=self.replica_count,
            master_seed=self.master_seed,
            perturbations=self.perturbations,
            alpha=self.alpha,
            k=k,
            gain_mode=self.gain_mode,
            truncation=self.truncation,
            temperature=self.temperature,
        )

    def describe(self, **extra: str) -> dict:
        echo = {
            "k": self.k,
            "alpha": self.alpha,
            "gain_mode": self.gain_mode,
            "truncation": self.truncation.spelling() if self.truncation else "none",
            "temperature": self.temperature,
            "replicas": self.replica_count,
            "master_seed": self.master_seed,
            "perturbations": [p.spelling() for p in self.perturbations],
            "delta": self.delta,
            "ci_method": self.ci_method,
            "boot_resamples": self.boot_resamples,
            "tagger": self.tagger_spec.describe(),
        }
        if self.ablate:
            echo["alpha_grid"] = list(self.alpha_grid)
        echo.update(extra)
        return echo


# ---------------------------------------------------------------------------
# JSONL parsing


def _require(obj: dict, key: str, kinds, path: str, line: int):
    if key not in obj:
        raise ParseError(f"missing required field {key!r}", path=path, line=line)
    value = obj[key]
    if not isinstance(value, kinds):
        raise ParseError(
            f"field {key!r} has wrong type {type(value).__name__}",
            path=path,
            line=line,
        )
    return value


def _candidate_from_dict(obj, path: str, line: int) -> ScoredCandidate:
    if not isinstance(obj, dict):
        raise ParseError("candidate must be an object", path=path, line=line)
    entity_id = _require(obj, "entity_id", str, path, line)
    surface_name = _require(obj, "surface_name", str, path, line)
    raw_score = _require(obj, "raw_score", (int, float), path, line)
    aliases = obj.get("aliases", [])
    attributes = obj.get("attributes", {})
    if not isinstance(aliases, list) or not all(isinstance(a, str) for a in aliases):
        raise ParseError("aliases must be a list of strings", path=path, line=line)
    if not isinstance(attributes, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in attributes.items()
    ):
        raise ParseError(
            "attributes must map strings to strings", path=path, line=line
        )
    entity = CandidateEntity(
        entity_id=entity_id,
        surface_name=surface_name,
        aliases=tuple(aliases),
        attributes=dict(attributes),
    )
    return ScoredCandidate(entity=entity, raw_score=float(raw_score))


def _constraint_from_dict(obj, path: str, line: int) -> Constraint:
    if not isinstance(obj, dict):
        raise ParseError("constraint must be an object", path=path, line=line)
    return Constraint(
        constraint_id=_require(obj, "constraint_id", str, path, line),
        attribute=_require(obj, "attribute", str, path, line),
        value=_require(obj, "value", str, path, line),
        op=obj.get("op", "equals"),
        weight=float(obj.get("weight", 1.0)),
    )


def _query_from_dict(obj: dict, path: str, line: int) -> Query:
    query_id = _require(obj, "query_id", str, path, line)
    text = obj.get("text", "")
    raw_candidates = _require(obj, "candidates", list, path, line)
    if not raw_candidates:
        raise ValidationError(f"{path}:{line}: query {query_id!r} has no candidates")
    candidates = tuple(
        _candidate_from_dict(c, path, line) for c in raw_candidates
    )
    constraints = tuple(
        _constraint_from_dict(c, path, line) for c in obj.get("constraints", [])
    )
    alias_table = obj.get("alias_table", {})
    if not isinstance(alias_table, dict):
        raise ParseError("alias_table must be an object", path=path, line=line)
    variants = {}
    raw_variants = obj.get("paraphrase_variants", {})
    if not isinstance(raw_variants, dict):
        raise ParseError("paraphrase_variants must be an object", path=path, line=line)
    for vid, cand_list in raw_variants.items():
        if not isinstance(cand_list, list) or not cand_list:
            raise ParseError(
                f"paraphrase variant {vid!r} must be a nonempty list",
                path=path,
                line=line,
            )
        variants[vid] = tuple(
            _candidate_from_dict(c, path, line) for c in cand_list
        )
    return Query(
        query_id=query_id,
        text=text,
        candidates=candidates,
        constraints=constraints,
        alias_table=dict(alias_table),
        paraphrase_variants=variants,
    )


def _iter_jsonl(path: str | Path):
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=str(path)) from exc
    with fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"malformed JSON: {exc.msg}", path=str(path), line=line_no
                ) from exc
            if not isinstance(obj, dict):
                raise ParseError(
                    "each line must hold a JSON object", path=str(path), line=line_no
                )
            yield line_no, obj


def parse_queries(path: str | Path) -> list[Query]:
    """Load and validate a query collection from JSONL."""
    queries: list[Query] = []
    seen: dict[str, int] = {}
    for line_no, obj in _iter_jsonl(path):
        try:
            query = _query_from_dict(obj, str(path), line_no)
        except InvalidInput as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from exc
        if query.query_id in seen:
            raise ValidationError(
                f"{path}:{line_no}: duplicate query_id {query.query_id!r} "
                f"(first seen at line {seen[query.query_id]})"
            )
        seen[query.query_id] = line_no
        queries.append(query)
    if not queries:
        raise ValidationError(f"{path}: no queries found")
    return queries


def _candidate_to_dict(cand: ScoredCandidate) -> dict:
    out = {
        "entity_id": cand.entity.entity_id,
        "surface_name": cand.entity.surface_name,
        "raw_score": cand.raw_score,
    }
    if cand.entity.aliases:
        out["aliases"] = list(cand.entity.aliases)
    if cand.entity.attributes:
        out["attributes"] = dict(cand.entity.attributes)
    return out


def query_to_dict(query: Query) -> dict:
    out = {
        "query_id": query.query_id,
        "text": query.text,
        "candidates": [_candidate_to_dict(c) for c in query.candidates],
    }
    if query.constraints:
        out["constraints"] = [
            {
                "constraint_id": c.constraint_id,
                "attribute": c.attribute,
                "value": c.value,
                "op": c.op,
                "weight": c.weight,
            }
            for c in query.constraints
        ]
    if query.alias_table:
        out["alias_table"] = dict(query.alias_table)
    if query.paraphrase_variants:
        out["paraphrase_variants"] = {
            vid: [_candidate_to_dict(c) for c in cands]
            for vid, cands in query.paraphrase_variants.items()
        }
    return out


def write_queries(queries: Sequence[Query], path: str | Path) -> None:
    lines = [json.dumps(query_to_dict(q), sort_keys=True) for q in queries]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def parse_run(path: str | Path) -> list[RankedRun]:
    """Load ranked runs from JSONL; ranks must be contiguous from 1."""
    runs: list[RankedRun] = []
    seen: dict[str, int] = {}
    for line_no, obj in _iter_jsonl(path):
        query_id = _require(obj, "query_id", str, str(path), line_no)
        raw_items = _require(obj, "items", list, str(path), line_no)
        items = []
        for raw in raw_items:
            if not isinstance(raw, dict):
                raise ParseError(
                    "run item must be an object", path=str(path), line=line_no
                )
            items.append(
                ResultItem(
                    doc_id=_require(raw, "doc_id", str, str(path), line_no),
                    rank=_require(raw, "rank", int, str(path), line_no),
                    title=raw.get("title", ""),
                    snippet=raw.get("snippet", ""),
                    url=raw.get("url"),
                )
            )
        cutoff = obj.get("cutoff_k", max(1, len(items)))
        if not isinstance(cutoff, int):
            raise ParseError(
                "cutoff_k must be an integer", path=str(path), line=line_no
            )
        try:
            run = RankedRun(query_id=query_id, items=tuple(items), cutoff_k=cutoff)
        except InvalidInput as exc:
            raise ValidationError(f"{path}:{line_no}: {exc}") from exc
        if run.query_id in seen:
            raise ValidationError(
                f"{path}:{line_no}: duplicate run for query {run.query_id!r}"
            )
        seen[run.query_id] = line_no
        runs.append(run)
    if not runs:
        raise ValidationError(f"{path}: no runs found")
    return runs


def write_run(runs: Sequence[RankedRun], path: str | Path) -> None:
    lines = []
    for run in runs:
        obj = {
            "query_id": run.query_id,
            "cutoff_k": run.cutoff_k,
            "items": [
                {
                    "doc_id": item.doc_id,
                    "rank": item.rank,
                    "title": item.title,
                    "snippet": item.snippet,
                    **({"url": item.url} if item.url is not None else {}),
                }
                for item in run.items
            ],
        }
        lines.append(json.dumps(obj, sort_keys=True))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Scoring orchestration


def _alpha_key(alpha: float) -> str:
    return repr(float(alpha))


def score_query(query: Query, run: RankedRun, config: RunConfig, tagger: Tagger) -> dict:
    """Score one query; returns its JSON-ready report.

    A query whose every replica failed yields a ``status: failed`` report
    instead of raising.
    """
    k = config.k if config.k is not None else run.cutoff_k
    try:
        replicas = run_replicas(query, run, config.replica_config(k), tagger)
    except EstimationFailed as exc:
        return {
            "report_version": REPORT_VERSION,
            "query_id": query.query_id,
            "status": "failed",
            "reason": str(exc),
        }
    es_hat, es_sigma = estimate_es(replicas)
    ess = es_samples(replicas)
    vbs = vb_samples(replicas, config.alpha)
    vb_hat = sample_mean(vbs)
    vb_sigma = sample_sigma(vbs)
    n_ok = len(ess)
    ci_es = {
        "normal": normal_ci(es_hat, es_sigma, n_ok, config.delta).to_dict(),
        "percentile": percentile_ci(ess, config.delta).to_dict(),
    }
    ci_vb = {
        "normal": normal_ci(vb_hat, vb_sigma, n_ok, config.delta).to_dict(),
        "percentile": percentile_ci(vbs, config.delta).to_dict(),
    }
    report = {
        "report_version": REPORT_VERSION,
        "query_id": query.query_id,
        "status": "ok",
        "k": k,
        "es_hat": es_hat,
        "es_sigma_hat": es_sigma,
        "vb_hat": vb_hat,
        "vb_sigma_hat": vb_sigma,
        "ci": ci_vb[config.ci_method],
        "ci_es": ci_es,
        "ci_vb": ci_vb,
        "excluded_replicas": sum(1 for r in replicas if not r.ok),
        "replicas": [
            {
                "replica_index": r.replica_index,
                "status": r.status,
                **(
                    {"es": r.es, "vb": r.vb.vb, "vb_raw": r.vb.vb_raw}
                    if r.ok
                    else {"reason": r.reason}
                ),
            }
            for r in replicas
        ],
    }
    if config.ablate:
        report["alpha_sweep"] = {
            _alpha_key(alpha): estimate_vb(replicas, alpha)
            for alpha in config.alpha_grid
        }
    return report


def score_collection(
    queries: Sequence[Query],
    runs: Sequence[RankedRun],
    config: RunConfig,
    tagger: Tagger,
    *,
    workers: int = 1,
    config_echo: dict | None = None,
) -> tuple[dict, dict]:
    """Score a collection; returns (collection_report, per_query_reports).

    Queries are scored concurrently up to ``workers``; output is identical
    for any worker count. Raises EstimationFailed when no query survives.
    """
    runs_by_id: dict[str, RankedRun] = {}
    for run in runs:
        runs_by_id[run.query_id] = run
    known = {q.query_id for q in queries}
    unknown = sorted(set(runs_by_id) - known)
    if unknown:
        raise ValidationError(f"runs reference unknown query_ids: {unknown}")
    missing = sorted(known - set(runs_by_id))
    if missing:
        raise ValidationError(f"no run supplied for query_ids: {missing}")

    def _score(query: Query) -> dict:
        return score_query(query, runs_by_id[query.query_id], config, tagger)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_score, queries))
    else:
        reports = [_score(q) for q in queries]

    per_query_reports = {r["query_id"]: r for r in reports}
    ok_reports = [r for r in reports if r["status"] == "ok"]
    failed = [r["query_id"] for r in reports if r["status"] != "ok"]
    if not ok_reports:
        raise EstimationFailed("estimation failed for every query in the collection")

    estimates = {
        r["query_id"]: QueryEstimate(
            es_hat=r["es_hat"],
            vb_hat=r["vb_hat"],
            ci=ConfidenceInterval(**r["ci"]),
        )
        for r in ok_reports
    }
    echo = config_echo if config_echo is not None else config.describe()
    collection = collection_aggregate(
        estimates,
        delta=config.delta,
        boot_resamples=config.boot_resamples,
        seed=config.master_seed,
        config_echo=echo,
        excluded_replicas=sum(r["excluded_replicas"] for r in ok_reports),
    )
    collection_report = {
        "report_version": REPORT_VERSION,
        "kind": "collection",
        "config": echo,
        "num_queries": len(queries),
        "failed_queries": failed,
        "per_query": {
            qid: {
                "es_hat": est.es_hat,
                "vb_hat": est.vb_hat,
                "ci": est.ci.to_dict(),
            }
            for qid, est in estimates.items()
        },
        "macro_es": collection.macro_es,
        "macro_vb": collection.macro_vb,
        "macro_ci": collection.macro_ci.to_dict(),
        "macro_es_ci": collection.macro_es_ci.to_dict(),
        "excluded_replicas": collection.excluded_replicas,
    }
    if config.ablate:
        sweep = {}
        for alpha in config.alpha_grid:
            key = _alpha_key(alpha)
            sweep[key] = float(
                np.mean([r["alpha_sweep"][key] for r in ok_reports])
            )
        collection_report["alpha_sweep"] = sweep
    return collection_report, per_query_reports


# ---------------------------------------------------------------------------
# Comparison


def compare_runs(
    queries: Sequence[Query],
    runs_a: Sequence[RankedRun],
    runs_b: Sequence[RankedRun],
    config: RunConfig,
    tagger: Tagger,
    *,
    workers: int = 1,
    config_echo: dict | None = None,
) -> dict:
    """Paired comparison of two systems over the same query set.

    Reports per-query score deltas (B minus A), a seeded paired bootstrap
    CI on the mean VB delta, and a two-sided paired t-test (n-1 degrees of
    freedom). Zero-variance deltas take p=1.0 when the mean delta is zero
    and p=0.0 otherwise.
    """
    ids_a = {r.query_id for r in runs_a}
    ids_b = {r.query_id for r in runs_b}
    if ids_a != ids_b:
        raise ValidationError(
            "runs cover different query sets; "
            f"only in A: {sorted(ids_a - ids_b)}, only in B: {sorted(ids_b - ids_a)}"
        )
    col_a, per_a = score_collection(queries, runs_a, config, tagger, workers=workers)
    col_b, per_b = score_collection(queries, runs_b, config, tagger, workers=workers)
    paired = [
        q.query_id
        for q in queries
        if per_a[q.query_id]["status"] == "ok" and per_b[q.query_id]["status"] == "ok"
    ]
    if not paired:
        raise EstimationFailed("no query scored successfully under both runs")
    per_query = {}
    deltas_vb = []
    deltas_es = []
    for qid in paired:
        a, b = per_a[qid], per_b[qid]
        delta_vb = b["vb_hat"] - a["vb_hat"]
        delta_es = b["es_hat"] - a["es_hat"]
        deltas_vb.append(delta_vb)
        deltas_es.append(delta_es)
        per_query[qid] = {
            "es_a": a["es_hat"],
            "es_b": b["es_hat"],
            "vb_a": a["vb_hat"],
            "vb_b": b["vb_hat"],
            "delta_es": delta_es,
            "delta_vb": delta_vb,
        }
    deltas = np.array(deltas_vb, dtype=np.float64)
    mean_delta = float(deltas.mean())
    n = deltas.size
    sd = float(deltas.std(ddof=1)) if n > 1 else 0.0
    if sd == 0.0:
        # degenerate sample: t is undefined (reported as null) unless the
        # mean delta is itself zero
        t_stat = 0.0 if mean_delta == 0.0 else None
        p_value = 1.0 if mean_delta == 0.0 else 0.0
    else:
        t_stat = mean_delta / (sd / math.sqrt(n))
        from scipy import stats as _stats

        p_value = float(2.0 * _stats.t.sf(abs(t_stat), df=n - 1))
    rng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(0xC04A, 0))
    )
    indexes = rng.integers(0, n, size=(config.boot_resamples, n))
    boot_means = deltas[indexes].mean(axis=1)
    delta_ci = percentile_ci(boot_means, config.delta)
    echo = config_echo if config_echo is not None else config.describe()
    return {
        "report_version": REPORT_VERSION,
        "kind": "comparison",
        "config": echo,
        "per_query": per_query,
        "num_paired_queries": n,
        "failed_queries": sorted(
            set(col_a["failed_queries"]) | set(col_b["failed_queries"])
        ),
        "macro_vb_a": col_a["macro_vb"],
        "macro_vb_b": col_b["macro_vb"],
        "macro_es_a": col_a["macro_es"],
        "macro_es_b": col_b["macro_es"],
        "mean_delta_vb": mean_delta,
        "mean_delta_es": float(np.mean(deltas_es)),
        "delta_ci": delta_ci.to_dict(),
        "t_statistic": t_stat,
        "p_value": p_value,
    }


# ---------------------------------------------------------------------------
# File emission


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def dump_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json_report(obj: dict, path: Path) -> None:
    atomic_write_text(path, dump_json(obj))


def load_report(path: str | Path) -> dict:
    """Read a report back, rejecting unknown major schema versions."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    version = str(obj.get("report_version", ""))
    major = version.split(".", 1)[0]
    if major != REPORT_VERSION.split(".", 1)[0]:
        raise ValidationError(
            f"unsupported report version {version!r} (expected major "
            f"{REPORT_VERSION.split('.', 1)[0]})"
        )
    return obj


def _fmt(value: float) -> str:
    # matches json.dumps float formatting so CSV and JSON never disagree
    return repr(float(value))


def render_vb_vs_es_csv(collection_report: dict) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_id", "es_hat", "vb_hat", "ci_lower", "ci_upper"])
    for qid, entry in collection_report["per_query"].items():
        writer.writerow(
            [
                qid,
                _fmt(entry["es_hat"]),
                _fmt(entry["vb_hat"]),
                _fmt(entry["ci"]["lower"]),
                _fmt(entry["ci"]["upper"]),
            ]
        )
    writer.writerow(
        [
            "macro",
            _fmt(collection_report["macro_es"]),
            _fmt(collection_report["macro_vb"]),
            _fmt(collection_report["macro_ci"]["lower"]),
            _fmt(collection_report["macro_ci"]["upper"]),
        ]
    )
    return buf.getvalue()


def render_alpha_sweep_csv(collection_report: dict, per_query_reports: dict) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_id", "alpha", "vb_hat"])
    for qid, report in per_query_reports.items():
        if report["status"] != "ok":
            continue
        for alpha_key, value in report["alpha_sweep"].items():
            writer.writerow([qid, alpha_key, _fmt(value)])
    for alpha_key, value in collection_report["alpha_sweep"].items():
        writer.writerow(["macro", alpha_key, _fmt(value)])
    return buf.getvalue()
