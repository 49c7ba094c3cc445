import json
import math

import pytest

from vbscore.errors import ParseError, ValidationError
from vbscore.intent import ScoredCandidate
from vbscore.io import (
    Query,
    RunConfig,
    compare_runs,
    dump_json,
    load_report,
    parse_queries,
    parse_run,
    query_to_dict,
    render_vb_vs_es_csv,
    score_collection,
    score_query,
    write_json_report,
    write_queries,
    write_run,
)
from vbscore.replicas import PerturbationSpec
from vbscore.taggers import RuleTagger

from conftest import make_entity, make_run

MINIMAL_LINE = json.dumps(
    {
        "query_id": "q1",
        "text": "who",
        "candidates": [
            {"entity_id": "E1", "surface_name": "Alpha", "raw_score": 1.0}
        ],
    }
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestParseQueries:
    def test_minimal_line(self, tmp_path):
        p = tmp_path / "q.jsonl"
        write_lines(p, [MINIMAL_LINE])
        [query] = parse_queries(p)
        assert query.query_id == "q1"
        assert query.candidates[0].entity.entity_id == "E1"

    def test_missing_query_id_names_line(self, tmp_path):
        p = tmp_path / "q.jsonl"
        write_lines(p, [MINIMAL_LINE, json.dumps({"candidates": []})])
        with pytest.raises(ParseError) as err:
            parse_queries(p)
        assert ":2:" in str(err.value)

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "q.jsonl"
        write_lines(p, [MINIMAL_LINE, "{not json"])
        with pytest.raises(ParseError) as err:
            parse_queries(p)
        assert err.value.line == 2

    def test_duplicate_query_id_rejected(self, tmp_path):
        p = tmp_path / "q.jsonl"
        write_lines(p, [MINIMAL_LINE, MINIMAL_LINE])
        with pytest.raises(ValidationError):
            parse_queries(p)

    def test_empty_candidates_rejected(self, tmp_path):
        p = tmp_path / "q.jsonl"
        write_lines(
            p, [json.dumps({"query_id": "q1", "text": "", "candidates": []})]
        )
        with pytest.raises(ValidationError):
            parse_queries(p)

    def test_full_round_trip_is_identity(self, tmp_path):
        full = {
            "query_id": "q9",
            "text": "john smith ehr",
            "candidates": [
                {
                    "entity_id": "E1",
                    "surface_name": "John Smith",
                    "raw_score": 1.5,
                    "aliases": ["J. Smith"],
                    "attributes": {"employer": "City Hospital"},
                }
            ],
            "constraints": [
                {
                    "constraint_id": "c1",
                    "attribute": "employer",
                    "value": "City Hospital",
                    "op": "equals",
                    "weight": 2.0,
                }
            ],
            "alias_table": {"E1b": "E1"},
            "paraphrase_variants": {
                "v1": [
                    {"entity_id": "E2", "surface_name": "Jon Smith", "raw_score": 0.5}
                ]
            },
        }
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_lines(p1, [json.dumps(full)])
        first = parse_queries(p1)
        write_queries(first, p2)
        assert parse_queries(p2) == first

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "q.jsonl"
        p.write_text(MINIMAL_LINE + "\n\n\n", encoding="utf-8")
        assert len(parse_queries(p)) == 1

    def test_nonfinite_score_rejected_with_line(self, tmp_path):
        # json.loads accepts bare NaN; the domain layer must not
        p = tmp_path / "q.jsonl"
        line = MINIMAL_LINE.replace('"raw_score": 1.0', '"raw_score": NaN')
        write_lines(p, [line])
        with pytest.raises(ValidationError) as err:
            parse_queries(p)
        assert ":1:" in str(err.value)


class TestParseRun:
    def test_contiguous_ranks_ok(self, tmp_path):
        p = tmp_path / "r.jsonl"
        write_lines(
            p,
            [
                json.dumps(
                    {
                        "query_id": "q1",
                        "items": [
                            {"doc_id": "d1", "rank": 1, "title": "a"},
                            {"doc_id": "d2", "rank": 2, "title": "b"},
                            {"doc_id": "d3", "rank": 3, "title": "c"},
                        ],
                    }
                )
            ],
        )
        [run] = parse_run(p)
        assert run.cutoff_k == 3

    def test_rank_gap_rejected(self, tmp_path):
        p = tmp_path / "r.jsonl"
        write_lines(
            p,
            [
                json.dumps(
                    {
                        "query_id": "q1",
                        "items": [
                            {"doc_id": "d1", "rank": 1},
                            {"doc_id": "d2", "rank": 3},
                        ],
                    }
                )
            ],
        )
        with pytest.raises(ValidationError):
            parse_run(p)

    def test_empty_items_is_valid(self, tmp_path):
        p = tmp_path / "r.jsonl"
        write_lines(p, [json.dumps({"query_id": "q1", "items": []})])
        [run] = parse_run(p)
        assert run.items == ()
        assert run.cutoff_k == 1

    def test_run_round_trip(self, tmp_path):
        runs = [make_run("q1", ["a", "b"]), make_run("q2", [])]
        p = tmp_path / "r.jsonl"
        write_run(runs, p)
        assert parse_run(p) == runs


def simple_query(query_id, probability_split=3.0):
    """Two-entity query; softmax(ln r, 0) puts r/(r+1) on E1."""
    return Query(
        query_id=query_id,
        text="ambiguous",
        candidates=(
            ScoredCandidate(
                make_entity("E1", f"Alpha {query_id}"), math.log(probability_split)
            ),
            ScoredCandidate(make_entity("E2", f"Beta {query_id}"), 0.0),
        ),
    )


def quiet_config(**kwargs):
    defaults = dict(replica_count=4, master_seed=3, perturbations=(), k=2)
    defaults.update(kwargs)
    return RunConfig(**defaults)


class TestScoreCollection:
    def test_unknown_run_query_rejected(self):
        queries = [simple_query("q1")]
        runs = [make_run("q1", ["Alpha q1"]), make_run("qX", ["Alpha q1"])]
        with pytest.raises(ValidationError) as err:
            score_collection(queries, runs, quiet_config(), RuleTagger())
        assert "qX" in str(err.value)

    def test_missing_run_rejected(self):
        queries = [simple_query("q1"), simple_query("q2")]
        runs = [make_run("q1", ["Alpha q1"])]
        with pytest.raises(ValidationError) as err:
            score_collection(queries, runs, quiet_config(), RuleTagger())
        assert "q2" in str(err.value)

    def test_scores_deterministic_across_workers(self):
        queries = [simple_query(f"q{i}") for i in range(6)]
        runs = [make_run(q.query_id, [f"Alpha {q.query_id}"]) for q in queries]
        config = quiet_config(
            perturbations=(PerturbationSpec(kind="score_jitter", sigma=0.2),)
        )
        one = score_collection(queries, runs, config, RuleTagger(), workers=1)
        four = score_collection(queries, runs, config, RuleTagger(), workers=4)
        assert dump_json(one[0]) == dump_json(four[0])
        assert dump_json({"q": one[1]}) == dump_json({"q": four[1]})

    def test_per_query_report_shape(self):
        query = simple_query("q1")
        run = make_run("q1", ["Alpha q1"])
        report = score_query(query, run, quiet_config(ablate=True), RuleTagger())
        assert report["status"] == "ok"
        assert report["k"] == 2
        # P(E1) = 3/4 under softmax(ln 3, 0); only E1 covered
        assert report["es_hat"] == pytest.approx(0.75, abs=1e-12)
        assert set(report["ci_vb"]) == {"normal", "percentile"}
        assert len(report["replicas"]) == 4
        assert list(report["alpha_sweep"]) == ["0.0", "0.25", "0.5", "0.75", "1.0"]

    def test_macro_is_mean(self):
        queries = [simple_query("q1", 3.0), simple_query("q2", 9.0)]
        runs = [make_run(q.query_id, [f"Alpha {q.query_id}"]) for q in queries]
        collection, _ = score_collection(queries, runs, quiet_config(), RuleTagger())
        es_values = [collection["per_query"][q]["es_hat"] for q in ("q1", "q2")]
        assert es_values == pytest.approx([0.75, 0.9], abs=1e-12)
        assert collection["macro_es"] == pytest.approx(0.825, abs=1e-12)


class TestCompare:
    def _fixture(self):
        queries = [simple_query(f"q{i}", 9.0) for i in range(3)]
        runs_a = [make_run(q.query_id, [f"Alpha {q.query_id}"]) for q in queries]
        runs_b = [
            make_run(q.query_id, [f"Alpha {q.query_id}", f"Beta {q.query_id}"])
            for q in queries
        ]
        return queries, runs_a, runs_b

    def test_self_comparison_null(self):
        queries, runs_a, _ = self._fixture()
        report = compare_runs(
            queries, runs_a, runs_a, quiet_config(), RuleTagger()
        )
        assert report["mean_delta_vb"] == 0.0
        assert report["p_value"] == 1.0
        assert report["delta_ci"]["lower"] == 0.0
        assert report["delta_ci"]["upper"] == 0.0

    def test_added_coverage_increases_es(self):
        queries, runs_a, runs_b = self._fixture()
        report = compare_runs(
            queries, runs_a, runs_b, quiet_config(alpha=0.0), RuleTagger()
        )
        # B covers both intents: per-query ES goes 0.9 -> 1.0
        assert report["mean_delta_es"] == pytest.approx(0.1, abs=1e-12)
        for entry in report["per_query"].values():
            assert entry["delta_es"] > 0

    def test_constant_deltas_ci_excludes_zero(self):
        queries, runs_a, runs_b = self._fixture()
        report = compare_runs(
            queries, runs_a, runs_b, quiet_config(alpha=0.0), RuleTagger()
        )
        assert report["delta_ci"]["lower"] == pytest.approx(0.1, abs=1e-12)
        assert report["delta_ci"]["upper"] == pytest.approx(0.1, abs=1e-12)
        assert report["p_value"] == 0.0
        assert report["t_statistic"] is None

    def test_mismatched_query_sets_rejected(self):
        queries, runs_a, runs_b = self._fixture()
        with pytest.raises(ValidationError) as err:
            compare_runs(
                queries, runs_a, runs_b[:-1], quiet_config(), RuleTagger()
            )
        assert "q2" in str(err.value)


class TestReports:
    def test_report_version_round_trip(self, tmp_path):
        path = tmp_path / "r.json"
        write_json_report({"report_version": "1.0", "x": 1}, path)
        assert load_report(path)["x"] == 1

    def test_unknown_major_version_rejected(self, tmp_path):
        path = tmp_path / "r.json"
        write_json_report({"report_version": "2.0", "x": 1}, path)
        with pytest.raises(ValidationError):
            load_report(path)

    def test_csv_numbers_equal_json_numbers(self):
        queries = [simple_query(f"q{i}") for i in range(3)]
        runs = [make_run(q.query_id, [f"Alpha {q.query_id}"]) for q in queries]
        config = quiet_config(
            perturbations=(PerturbationSpec(kind="score_jitter", sigma=0.3),)
        )
        collection, _ = score_collection(queries, runs, config, RuleTagger())
        # parse the rendered CSV back and compare against the JSON text
        rendered = render_vb_vs_es_csv(collection)
        json_text = dump_json(collection)
        lines = rendered.strip().splitlines()[1:]
        for line in lines[:-1]:
            qid, es_s, vb_s, lo_s, hi_s = line.split(",")
            entry = collection["per_query"][qid]
            assert es_s == json.dumps(entry["es_hat"])
            assert vb_s == json.dumps(entry["vb_hat"])
            assert lo_s == json.dumps(entry["ci"]["lower"])
            assert hi_s == json.dumps(entry["ci"]["upper"])
            assert es_s in json_text
        macro = lines[-1].split(",")
        assert macro[0] == "macro"
        assert macro[1] == json.dumps(collection["macro_es"])

    def test_query_to_dict_omits_empty_sections(self):
        d = query_to_dict(simple_query("q1"))
        assert "constraints" not in d
        assert "alias_table" not in d
