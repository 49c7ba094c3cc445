"""Command-line interface.

Subcommands:
  vb score             score one run against a query collection
  vb compare           paired comparison of two runs
  vb validate-theorems run the synthetic property suites

Exit codes: 0 success, 1 usage error, 2 data error (parse/validation),
3 estimation failed for every query.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import (
    EstimationFailed,
    InvalidInput,
    ParseError,
    ValidationError,
)
from .intent import TruncationPolicy
from .io import (
    DEFAULT_PERTURBATIONS,
    REPORT_VERSION,
    RunConfig,
    atomic_write_text,
    compare_runs,
    parse_queries,
    parse_run,
    render_alpha_sweep_csv,
    render_vb_vs_es_csv,
    score_collection,
    write_json_report,
)
from .metric import DEFAULT_ALPHA
from .oracle import TheoremValidationConfig, validate_theorems
from .replicas import PerturbationSpec
from .taggers import TaggerSpec
from .uncertainty import DEFAULT_BOOT_RESAMPLES, DEFAULT_DELTA

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the contract here is 1
    def error(self, message):
        raise _UsageError(message)


def _add_scoring_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=None, help="gain cutoff (default: each run's cutoff_k)")
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="variance penalty weight")
    parser.add_argument("--replicas", type=int, default=20, help="Monte Carlo replicas per query (B)")
    parser.add_argument("--seed", type=int, default=42, help="master seed; fully determines all randomness")
    parser.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="1 - confidence level")
    parser.add_argument("--ci", choices=("percentile", "normal"), default="percentile", help="headline CI method")
    parser.add_argument("--gain", choices=("binary", "dcg"), default="binary", help="per-intent gain mode")
    parser.add_argument("--temperature", type=float, default=1.0, help="softmax temperature")
    parser.add_argument(
        "--truncate",
        default="none",
        help="truncation policy: threshold:TAU, top_k:K, mass:RHO, or none",
    )
    parser.add_argument(
        "--perturb",
        action="append",
        default=None,
        metavar="SPEC",
        help="replica perturbation (repeatable): score_jitter:SIGMA, "
        "weight_rescale:LOGSD, candidate_dropout:P, paraphrase_variants[:IDS], "
        "or none. Default: score_jitter:0.1",
    )
    parser.add_argument("--boot-resamples", type=int, default=DEFAULT_BOOT_RESAMPLES, help="query-level bootstrap resamples")
    parser.add_argument("--workers", type=int, default=1, help="queries scored concurrently (does not affect output)")
    parser.add_argument("--tagger", choices=("rule", "remote"), default="rule", help="entity tagger backend")
    parser.add_argument("--overlap-threshold", type=float, default=0.5, help="rule tagger token-overlap threshold")
    parser.add_argument("--tagger-endpoint", default=None, help="remote tagger URL (or set VB_TAGGER_ENDPOINT)")
    parser.add_argument("--tagger-timeout-ms", type=int, default=5000)
    parser.add_argument("--tagger-retries", type=int, default=2)
    parser.add_argument("--audit-log", default=None, help="JSONL audit log for remote tagger exchanges")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vb", description="Variance-bounded scoring without ground truth")
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="score a run against a query collection")
    p_score.add_argument("--queries", required=True, help="query collection JSONL")
    p_score.add_argument("--run", required=True, help="ranked run JSONL")
    p_score.add_argument("--out", required=True, help="output directory")
    p_score.add_argument("--ablate", action="store_true", help="emit the alpha-sweep grid")
    _add_scoring_flags(p_score)

    p_cmp = sub.add_parser("compare", help="paired comparison of two runs")
    p_cmp.add_argument("--queries", required=True)
    p_cmp.add_argument("--run-a", required=True)
    p_cmp.add_argument("--run-b", required=True)
    p_cmp.add_argument("--out", required=True)
    _add_scoring_flags(p_cmp)

    p_val = sub.add_parser("validate-theorems", help="run the synthetic property suites")
    p_val.add_argument("--trials", type=int, default=10_000)
    p_val.add_argument("--seed", type=int, default=7)
    p_val.add_argument("--out", required=True)
    p_val.add_argument("--max-entities", type=int, default=8)

    return parser


def _config_from_args(args, *, ablate: bool = False) -> RunConfig:
    # flag-value problems are usage errors (exit 1), unlike file-content
    # problems discovered later (exit 2)
    try:
        if args.perturb is None:
            perturbations = DEFAULT_PERTURBATIONS
        elif "none" in args.perturb:
            perturbations = ()
        else:
            perturbations = tuple(
                PerturbationSpec.parse(spec) for spec in args.perturb
            )
        tagger_spec = TaggerSpec(
            kind=args.tagger,
            overlap_threshold=args.overlap_threshold,
            endpoint_url=args.tagger_endpoint,
            timeout_ms=args.tagger_timeout_ms,
            max_retries=args.tagger_retries,
            audit_log_path=args.audit_log,
        )
        return RunConfig(
            k=args.k,
            alpha=args.alpha,
            gain_mode=args.gain,
            truncation=TruncationPolicy.parse(args.truncate),
            temperature=args.temperature,
            replica_count=args.replicas,
            master_seed=args.seed,
            perturbations=perturbations,
            delta=args.delta,
            ci_method=args.ci,
            boot_resamples=args.boot_resamples,
            tagger_spec=tagger_spec,
            ablate=ablate,
        )
    except InvalidInput as exc:
        raise _UsageError(str(exc)) from exc


def _ci_text(ci: dict) -> str:
    return f"[{ci['lower']:.4f}, {ci['upper']:.4f}]"


def cmd_score(args) -> int:
    config = _config_from_args(args, ablate=args.ablate)
    queries = parse_queries(args.queries)
    runs = parse_run(args.run)
    tagger = config.tagger_spec.build()
    echo = config.describe(queries_path=args.queries, run_path=args.run)
    collection, per_query = score_collection(
        queries, runs, config, tagger, workers=args.workers, config_echo=echo
    )
    out = Path(args.out)
    write_json_report(collection, out / "collection.json")
    write_json_report(
        {
            "report_version": collection["report_version"],
            "config": echo,
            "queries": per_query,
        },
        out / "per_query.json",
    )
    atomic_write_text(out / "plot_vb_vs_es.csv", render_vb_vs_es_csv(collection))
    if args.ablate:
        atomic_write_text(
            out / "plot_alpha_sweep.csv",
            render_alpha_sweep_csv(collection, per_query),
        )
    for qid, entry in collection["per_query"].items():
        print(
            f"{qid}: ES={entry['es_hat']:.4f} VB={entry['vb_hat']:.4f} "
            f"CI{_ci_text(entry['ci'])}"
        )
    for qid in collection["failed_queries"]:
        print(f"{qid}: FAILED ({per_query[qid]['reason']})", file=sys.stderr)
    print(
        f"macro: ES={collection['macro_es']:.4f} VB={collection['macro_vb']:.4f} "
        f"CI{_ci_text(collection['macro_ci'])} "
        f"({collection['num_queries'] - len(collection['failed_queries'])}"
        f"/{collection['num_queries']} queries)"
    )
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = _config_from_args(args)
    queries = parse_queries(args.queries)
    runs_a = parse_run(args.run_a)
    runs_b = parse_run(args.run_b)
    tagger = config.tagger_spec.build()
    echo = config.describe(
        queries_path=args.queries, run_a_path=args.run_a, run_b_path=args.run_b
    )
    report = compare_runs(
        queries, runs_a, runs_b, config, tagger, workers=args.workers, config_echo=echo
    )
    out = Path(args.out)
    write_json_report(report, out / "comparison.json")
    print(
        f"macro VB: A={report['macro_vb_a']:.4f} B={report['macro_vb_b']:.4f} "
        f"mean delta={report['mean_delta_vb']:+.4f} CI{_ci_text(report['delta_ci'])}"
    )
    t_text = "undefined" if report["t_statistic"] is None else f"{report['t_statistic']:.4f}"
    print(f"paired t={t_text} p={report['p_value']:.4g}")
    print(f"report written to {out / 'comparison.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        config = TheoremValidationConfig(
            trials=args.trials, seed=args.seed, max_entities=args.max_entities
        )
    except InvalidInput as exc:
        raise _UsageError(str(exc)) from exc
    report = {"report_version": REPORT_VERSION, **validate_theorems(config)}
    out = Path(args.out)
    write_json_report(report, out / "validation.json")
    for name in ("range_and_bernoulli", "monotonicity", "stability"):
        suite = report[name]
        status = "PASS" if suite["passed"] else "FAIL"
        print(f"{name}: {status} ({suite['violations']} violations / {suite['trials']} trials)")
    for case in report["concentration"]["cases"]:
        status = "PASS" if case["passed"] else "FAIL"
        print(
            f"concentration B={case['B']} delta={case['delta']}: {status} "
            f"(empirical {case['empirical_frequency']:.4f} <= cap {case['cap']})"
        )
    print(f"report written to {out / 'validation.json'}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "score":
            return cmd_score(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_validate(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValidationError, InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationFailed as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
