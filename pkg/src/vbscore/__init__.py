"""Variance-bounded scoring of entity-centric system outputs without
ground truth.

The pipeline: build a probability distribution over plausible query
interpretations (softmax over linker scores, constraint relaxation,
dedup, truncation), tag each retrieved result with the entity it covers,
compute expected success and its variance-bounded penalty, then estimate
uncertainty with seeded Monte Carlo replicas and bootstrap confidence
intervals.
"""
from .errors import (
    EstimationFailed,
    InvalidInput,
    ParseError,
    TaggerUnavailable,
    ValidationError,
    VBScoreError,
)
from .gains import (
    EntityAssignment,
    GainVector,
    RankedRun,
    ResultItem,
    Tagger,
    binary_gain,
    dcg_gain,
    tag_results,
)
from .intent import (
    CandidateEntity,
    Constraint,
    IntentDistribution,
    ScoredCandidate,
    TruncationPolicy,
    build_distribution,
    deduplicate,
    relaxation_distribution,
    softmax_distribution,
    truncate_and_renormalize,
    violation_penalty,
)
from .io import Query, RunConfig, compare_runs, parse_queries, parse_run, score_collection
from .metric import (
    ALPHA_GRID,
    DEFAULT_ALPHA,
    ScoreBreakdown,
    bernoulli_variance,
    expected_success,
    vb_score,
)
from .oracle import (
    SyntheticQuery,
    SyntheticWorld,
    TheoremValidationConfig,
    brute_force_es,
    generate_world,
    validate_theorems,
)
from .replicas import (
    PerturbationSpec,
    ReplicaConfig,
    ReplicaResult,
    estimate_es,
    estimate_vb,
    run_replicas,
)
from .taggers import RemoteTagger, RuleTagger, TaggerSpec
from .uncertainty import (
    CollectionReport,
    ConfidenceInterval,
    QueryEstimate,
    collection_aggregate,
    normal_ci,
    percentile_ci,
)

__version__ = "0.1.0"

__all__ = [
    "ALPHA_GRID",
    "CandidateEntity",
    "CollectionReport",
    "ConfidenceInterval",
    "Constraint",
    "DEFAULT_ALPHA",
    "EntityAssignment",
    "EstimationFailed",
    "GainVector",
    "IntentDistribution",
    "InvalidInput",
    "ParseError",
    "PerturbationSpec",
    "Query",
    "QueryEstimate",
    "RankedRun",
    "RemoteTagger",
    "ReplicaConfig",
    "ReplicaResult",
    "ResultItem",
    "RuleTagger",
    "RunConfig",
    "ScoreBreakdown",
    "ScoredCandidate",
    "SyntheticQuery",
    "SyntheticWorld",
    "Tagger",
    "TaggerSpec",
    "TaggerUnavailable",
    "TheoremValidationConfig",
    "TruncationPolicy",
    "VBScoreError",
    "ValidationError",
    "bernoulli_variance",
    "binary_gain",
    "brute_force_es",
    "build_distribution",
    "collection_aggregate",
    "compare_runs",
    "dcg_gain",
    "deduplicate",
    "estimate_es",
    "estimate_vb",
    "expected_success",
    "generate_world",
    "normal_ci",
    "parse_queries",
    "parse_run",
    "percentile_ci",
    "relaxation_distribution",
    "run_replicas",
    "score_collection",
    "softmax_distribution",
    "tag_results",
    "truncate_and_renormalize",
    "validate_theorems",
    "vb_score",
    "violation_penalty",
]
