import json
import threading

import pytest

from conftest import NEGATION_DEFAULT, PICK_FIRST
from predmap.clients import DeterministicEmbedder, RuleChat
from predmap.errors import ConfigError, ResumeError, TransportError
from predmap.ontology import generate_negations, parse_catalog
from predmap.pipeline import (
    BatchOutput,
    EdgeRecord,
    PipelineRuntime,
    RunReport,
    map_batch,
    resume_run,
    write_outputs,
)
from predmap.rerank import Outcome
from predmap.retrieval import ExtractedRelation
from predmap.store import StoreRole, build_store

FIXED_TS = "1970-01-01T00:00:00+00:00"

TEXT_CYCLE = [
    "increases expression of",
    "activates the receptor",
    "blocks the receptor",
    "is metabolized by",
    "is required for activity of",
    "is a component of",
]


def make_relations(n):
    return [
        ExtractedRelation(
            relation_id=f"r{i:04d}",
            subject=f"chem{i:04d}",
            object=f"prot{i:04d}",
            relation_text=TEXT_CYCLE[i % len(TEXT_CYCLE)],
            abstract=f"Abstract text number {i}.",
        )
        for i in range(n)
    ]


class CountingChat:
    """Delegating chat double that counts requests."""

    def __init__(self, inner):
        self._inner = inner
        self.model_id = inner.model_id
        self.max_retries = inner.max_retries
        self.calls = 0
        self._lock = threading.Lock()

    def request(self, prompt):
        with self._lock:
            self.calls += 1
        return self._inner.request(prompt)


@pytest.fixture(scope="module")
def augmented_store():
    catalog = parse_catalog(
        __import__("pathlib").Path(__file__).parent / "data" / "catalog_chemprot30.json"
    )
    augmented, _ = generate_negations(catalog, RuleChat(default=NEGATION_DEFAULT))
    embedder = DeterministicEmbedder(seed=7, dim=16)
    store = build_store(augmented, embedder, StoreRole.BASE, created_at=FIXED_TS)
    return store, embedder


def make_runtime(augmented_store, chat=None, run_id="test-run", concurrency=4, k=10):
    store, embedder = augmented_store
    return PipelineRuntime(
        base_store=store,
        base_embedder=embedder,
        chat=chat or RuleChat(default=PICK_FIRST),
        k=k,
        concurrency=concurrency,
        run_id=run_id,
        timestamp=FIXED_TS,
    )


class TestRunReport:
    def test_counts_must_reconcile(self):
        with pytest.raises(ValueError):
            RunReport(
                total=5,
                mapped=1,
                rejected_none=1,
                parse_failures=1,
                invalid_selections=1,
                negated_count=0,
            )

    def test_rates(self):
        report = RunReport(
            total=2400,
            mapped=2380,
            rejected_none=10,
            parse_failures=6,
            invalid_selections=4,
            negated_count=77,
        )
        assert report.rejection_rate == pytest.approx(10 / 2400)
        assert report.negation_rate == pytest.approx(77 / 2400)

    def test_zero_total(self):
        report = RunReport.from_results([])
        assert report.total == 0
        assert report.rejection_rate == 0.0


class TestRuntimeValidation:
    def test_model_mismatch_is_config_error(self, augmented_store):
        store, _ = augmented_store
        wrong = DeterministicEmbedder(seed=99, dim=16)
        with pytest.raises(ConfigError):
            PipelineRuntime(
                base_store=store,
                base_embedder=wrong,
                chat=RuleChat(default=PICK_FIRST),
            )

    def test_aux_requires_both_pieces(self, augmented_store):
        store, embedder = augmented_store
        with pytest.raises(ConfigError):
            PipelineRuntime(
                base_store=store,
                base_embedder=embedder,
                chat=RuleChat(default=PICK_FIRST),
                aux_store=store,
            )

    def test_k_must_be_positive(self, augmented_store):
        store, embedder = augmented_store
        with pytest.raises(ConfigError):
            PipelineRuntime(
                base_store=store,
                base_embedder=embedder,
                chat=RuleChat(default=PICK_FIRST),
                k=0,
            )


class TestMapBatch:
    def test_conservation(self, augmented_store):
        runtime = make_runtime(augmented_store)
        relations = make_relations(10)
        output = map_batch(relations, runtime)
        assert len(output.results) == 10
        assert len(output.edges) == output.report.mapped
        assert output.report.total == 10

    def test_zero_inputs(self, augmented_store):
        runtime = make_runtime(augmented_store)
        output = map_batch([], runtime)
        assert output.results == []
        assert output.edges == []
        assert output.report.total == 0

    def test_duplicate_ids_rejected(self, augmented_store):
        runtime = make_runtime(augmented_store)
        relations = make_relations(2)
        twin = ExtractedRelation("r0000", "s", "o", "binds")
        with pytest.raises(ConfigError):
            map_batch(relations + [twin], runtime)

    def test_hundred_relation_tally_matches_script(self, augmented_store):
        # Scripted outcomes: 6 rejections, 4 invalid labels, 5 double
        # parse failures, the rest mapped.
        reject = {f"chem{i:04d}" for i in range(0, 12, 2)}
        invalid = {f"chem{i:04d}" for i in range(20, 24)}
        garbage = {f"chem{i:04d}" for i in range(40, 45)}
        rules = (
            [(f"Subject: {s}\n", '{"mapped_predicate":"none","negated":"False"}') for s in reject]
            + [(f"Subject: {s}\n", '{"mapped_predicate":"not_a_predicate","negated":"False"}') for s in invalid]
            + [(f"Subject: {s}\n", "?? unparseable ??") for s in garbage]
        )
        chat = RuleChat(rules=rules, default=PICK_FIRST)
        runtime = make_runtime(augmented_store, chat=chat)
        output = map_batch(make_relations(100), runtime)
        report = output.report
        assert report.total == 100
        assert report.rejected_none == 6
        assert report.invalid_selections == 4
        assert report.parse_failures == 5
        assert report.mapped == 85
        assert len(output.edges) == 85

    def test_determinism_across_runs(self, augmented_store):
        runtime_a = make_runtime(augmented_store, run_id="same")
        runtime_b = make_runtime(augmented_store, run_id="same")
        out_a = map_batch(make_relations(30), runtime_a)
        out_b = map_batch(make_relations(30), runtime_b)
        edges_a = [json.dumps(e.to_dict()) for e in out_a.edges]
        edges_b = [json.dumps(e.to_dict()) for e in out_b.edges]
        assert edges_a == edges_b

    def test_fault_isolation(self, augmented_store):
        target = "chem0005"

        class FaultyForOne:
            model_id = "rule-chat"
            max_retries = 0

            def __init__(self):
                self._inner = RuleChat(default=PICK_FIRST)

            def request(self, prompt):
                if f"Subject: {target}\n" in prompt:
                    raise TransportError("injected")
                return self._inner.request(prompt)

        clean = map_batch(make_relations(12), make_runtime(augmented_store))
        faulty = map_batch(
            make_relations(12), make_runtime(augmented_store, chat=FaultyForOne())
        )
        for res_clean, res_faulty in zip(clean.results, faulty.results):
            if res_clean.relation_id == "r0005":
                assert res_faulty.outcome is Outcome.PARSE_FAILURE
            else:
                assert res_faulty.outcome == res_clean.outcome
                assert res_faulty.mapped_predicate == res_clean.mapped_predicate


class TestCheckpointResume:
    def test_interrupt_and_resume_equals_reference(self, augmented_store, tmp_path):
        relations = make_relations(40)
        digest = "digest-abc"
        checkpoint = tmp_path / "checkpoint.jsonl"

        reference = map_batch(relations, make_runtime(augmented_store, run_id="ref"))

        # Interrupted run: a non-engine error kills the batch partway.
        class Explodes:
            model_id = "rule-chat"
            max_retries = 0

            def __init__(self):
                self._inner = RuleChat(default=PICK_FIRST)
                self._count = 0
                self._lock = threading.Lock()

            def request(self, prompt):
                with self._lock:
                    self._count += 1
                    if self._count > 20:
                        raise RuntimeError("simulated crash")
                return self._inner.request(prompt)

        with pytest.raises(RuntimeError):
            map_batch(
                relations,
                make_runtime(augmented_store, chat=Explodes(), run_id="ref"),
                checkpoint_path=checkpoint,
                input_digest=digest,
            )
        journaled = len(checkpoint.read_text().splitlines()) - 1
        assert 0 < journaled < 40

        counting = CountingChat(RuleChat(default=PICK_FIRST))
        resumed = resume_run(
            checkpoint,
            relations,
            make_runtime(augmented_store, chat=counting, run_id="ref"),
            digest,
        )
        assert counting.calls == 40 - journaled
        assert [r.relation_id for r in resumed.results] == [
            r.relation_id for r in reference.results
        ]
        assert [json.dumps(e.to_dict()) for e in resumed.edges] == [
            json.dumps(e.to_dict()) for e in reference.edges
        ]
        assert resumed.report.to_dict() == reference.report.to_dict()

    def test_resume_of_completed_run_makes_no_calls(self, augmented_store, tmp_path):
        relations = make_relations(8)
        checkpoint = tmp_path / "checkpoint.jsonl"
        first = map_batch(
            relations,
            make_runtime(augmented_store),
            checkpoint_path=checkpoint,
            input_digest="d1",
        )
        counting = CountingChat(RuleChat(default=PICK_FIRST))
        again = resume_run(
            checkpoint,
            relations,
            make_runtime(augmented_store, chat=counting),
            "d1",
        )
        assert counting.calls == 0
        assert [json.dumps(e.to_dict()) for e in again.edges] == [
            json.dumps(e.to_dict()) for e in first.edges
        ]

    def test_digest_guard(self, augmented_store, tmp_path):
        relations = make_relations(4)
        checkpoint = tmp_path / "checkpoint.jsonl"
        map_batch(
            relations,
            make_runtime(augmented_store),
            checkpoint_path=checkpoint,
            input_digest="original",
        )
        with pytest.raises(ResumeError, match="different input"):
            resume_run(
                checkpoint,
                relations,
                make_runtime(augmented_store),
                "tampered",
            )

    def test_corrupt_checkpoint(self, augmented_store, tmp_path):
        checkpoint = tmp_path / "checkpoint.jsonl"
        checkpoint.write_text("not json\n")
        with pytest.raises(ResumeError):
            resume_run(
                checkpoint, make_relations(2), make_runtime(augmented_store), "d"
            )

    def test_resume_without_checkpoint_file(self, augmented_store, tmp_path):
        with pytest.raises(ResumeError):
            resume_run(
                tmp_path / "missing.jsonl",
                make_relations(2),
                make_runtime(augmented_store),
                "d",
            )


class TestOutputs:
    def test_files_and_schemas(self, augmented_store, tmp_path):
        relations = make_relations(6)
        chat = RuleChat(
            rules=[("Subject: chem0002\n", '{"mapped_predicate":"none","negated":"False"}')],
            default=PICK_FIRST,
        )
        output = map_batch(relations, make_runtime(augmented_store, chat=chat))
        write_outputs(tmp_path, relations, output)

        edges = [json.loads(l) for l in (tmp_path / "edges.jsonl").read_text().splitlines()]
        mappings = [json.loads(l) for l in (tmp_path / "mappings.jsonl").read_text().splitlines()]
        candidates = [json.loads(l) for l in (tmp_path / "candidates.jsonl").read_text().splitlines()]
        report = json.loads((tmp_path / "report.json").read_text())

        assert len(mappings) == 6
        assert len(candidates) == 6
        assert len(edges) == report["mapped"] == 5
        assert report["rejected_none"] == 1

        row = mappings[0]
        assert set(row) == {
            "id",
            "subject",
            "object",
            "mapped_predicate",
            "negated",
            "outcome",
            "candidates_offered",
            "raw_response_digest",
        }
        assert len(row["raw_response_digest"]) == 64
        edge = edges[0]
        assert edge["provenance"]["run_id"] == "test-run"
        assert edge["provenance"]["stores"]["base"]["record_count"] == 60
        assert "digest" in edge["provenance"]["stores"]["base"]

    def test_negated_edge_flagged_and_outside_positive_set(
        self, augmented_store, tmp_path
    ):
        chat = RuleChat(
            rules=[
                (
                    "Subject: chem0001\n",
                    '{"mapped_predicate": "{first_candidate}", "negated": "True"}',
                )
            ],
            default=PICK_FIRST,
        )
        relations = make_relations(3)
        output = map_batch(relations, make_runtime(augmented_store, chat=chat))
        assert output.report.negated_count == 1
        negated = [e for e in output.edges if e.negated]
        positive = [e for e in output.edges if not e.negated]
        assert len(negated) == 1
        assert negated[0].relation_id == "r0001"
        assert negated[0].relation_id not in {e.relation_id for e in positive}
