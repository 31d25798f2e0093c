"""End-to-end batch orchestration from quadruples to edge records.

Relations are processed independently on a bounded worker pool; one
relation's failure becomes its own MappingResult outcome and never aborts
the batch. Each completed relation is appended to a checkpoint file keyed
by the input digest, so interrupted runs resume without repeating model
calls. Final files are written in input order for reproducibility.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .clients import ChatProviderProtocol, EmbeddingProviderProtocol
from .errors import ConfigError, PredmapError, ResumeError
from .rerank import MappingResult, Outcome, select_predicate
from .retrieval import (
    CandidateSet,
    ExtractedRelation,
    candidate_dump_row,
    embed_relation,
    hybrid_merge,
    retrieve_candidates,
)
from .store import EmbeddingStore

logger = logging.getLogger(__name__)

EDGES_FILE = "edges.jsonl"
MAPPINGS_FILE = "mappings.jsonl"
CANDIDATES_FILE = "candidates.jsonl"
REPORT_FILE = "report.json"
CHECKPOINT_FILE = "checkpoint.jsonl"


@dataclass(frozen=True)
class EdgeRecord:
    """A knowledge-graph-ready edge with full provenance."""

    subject: str
    object: str
    predicate: str
    negated: bool
    relation_id: str
    source_relation_text: str
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "object": self.object,
            "predicate": self.predicate,
            "negated": self.negated,
            "relation_id": self.relation_id,
            "source_relation_text": self.source_relation_text,
            "provenance": self.provenance,
        }


@dataclass
class RunReport:
    total: int
    mapped: int
    rejected_none: int
    parse_failures: int
    invalid_selections: int
    negated_count: int

    def __post_init__(self) -> None:
        categorized = (
            self.mapped
            + self.rejected_none
            + self.parse_failures
            + self.invalid_selections
        )
        if categorized != self.total:
            raise ValueError(
                f"outcome categories sum to {categorized}, total is {self.total}"
            )

    @property
    def rejection_rate(self) -> float:
        return self.rejected_none / self.total if self.total else 0.0

    @property
    def negation_rate(self) -> float:
        return self.negated_count / self.total if self.total else 0.0

    @classmethod
    def from_results(cls, results: Iterable[MappingResult]) -> "RunReport":
        tally = {outcome: 0 for outcome in Outcome}
        negated = 0
        total = 0
        for result in results:
            total += 1
            tally[result.outcome] += 1
            if result.outcome is Outcome.MAPPED and result.negated:
                negated += 1
        return cls(
            total=total,
            mapped=tally[Outcome.MAPPED],
            rejected_none=tally[Outcome.REJECTED_NONE],
            parse_failures=tally[Outcome.PARSE_FAILURE],
            invalid_selections=tally[Outcome.INVALID_SELECTION],
            negated_count=negated,
        )

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "mapped": self.mapped,
            "rejected_none": self.rejected_none,
            "parse_failures": self.parse_failures,
            "invalid_selections": self.invalid_selections,
            "negated_count": self.negated_count,
            "rejection_rate": self.rejection_rate,
            "negation_rate": self.negation_rate,
        }


@dataclass
class PipelineRuntime:
    """Everything one mapping run needs: stores, providers, and knobs."""

    base_store: EmbeddingStore
    base_embedder: EmbeddingProviderProtocol
    chat: ChatProviderProtocol
    aux_store: EmbeddingStore | None = None
    aux_embedder: EmbeddingProviderProtocol | None = None
    k: int = 10
    concurrency: int = 4
    run_id: str = "run"
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.concurrency < 1:
            raise ConfigError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.base_embedder.model_id != self.base_store.manifest.model_id:
            raise ConfigError(
                f"base embedder model {self.base_embedder.model_id!r} does not "
                f"match base store model {self.base_store.manifest.model_id!r}"
            )
        if (self.aux_store is None) != (self.aux_embedder is None):
            raise ConfigError(
                "auxiliary store and auxiliary embedder must be configured together"
            )
        if self.aux_store is not None and self.aux_embedder is not None:
            if self.aux_embedder.model_id != self.aux_store.manifest.model_id:
                raise ConfigError(
                    f"auxiliary embedder model {self.aux_embedder.model_id!r} does "
                    f"not match auxiliary store model "
                    f"{self.aux_store.manifest.model_id!r}"
                )

    def provenance(self) -> dict:
        stores = {
            "base": {
                "model_id": self.base_store.manifest.model_id,
                "catalog_version": self.base_store.manifest.catalog_version,
                "record_count": self.base_store.manifest.record_count,
                "digest": self.base_store.manifest.digest(),
            }
        }
        models = {
            "embedding": self.base_embedder.model_id,
            "chat": self.chat.model_id,
        }
        if self.aux_store is not None and self.aux_embedder is not None:
            stores["auxiliary"] = {
                "model_id": self.aux_store.manifest.model_id,
                "catalog_version": self.aux_store.manifest.catalog_version,
                "record_count": self.aux_store.manifest.record_count,
                "digest": self.aux_store.manifest.digest(),
            }
            models["auxiliary_embedding"] = self.aux_embedder.model_id
        return {
            "run_id": self.run_id,
            "timestamp": self.timestamp,
            "models": models,
            "stores": stores,
        }


@dataclass
class BatchOutput:
    """Per-relation outputs in input order, plus the run tally."""

    results: list[MappingResult]
    candidate_rows: list[dict]
    edges: list[EdgeRecord]
    report: RunReport


def process_relation(
    relation: ExtractedRelation, runtime: PipelineRuntime
) -> tuple[MappingResult, dict]:
    """Run stages 2 and 3 for a single relation.

    Engine errors are contained: they produce a parse_failure result for
    this relation only.
    """
    try:
        query = embed_relation(
            relation, runtime.base_embedder, runtime.base_store.manifest.model_id
        )
        fragment = retrieve_candidates(
            runtime.base_store, query, runtime.k, relation.relation_id
        )
        aux_fragment = None
        if runtime.aux_store is not None and runtime.aux_embedder is not None:
            aux_query = embed_relation(
                relation, runtime.aux_embedder, runtime.aux_store.manifest.model_id
            )
            aux_fragment = retrieve_candidates(
                runtime.aux_store, aux_query, runtime.k, relation.relation_id
            )
        merged = hybrid_merge(fragment, aux_fragment, runtime.k)
        result = select_predicate(relation, merged, runtime.chat)
        return result, candidate_dump_row(merged)
    except PredmapError as exc:
        logger.warning("relation %s failed: %s", relation.relation_id, exc)
        result = MappingResult(
            relation_id=relation.relation_id,
            mapped_predicate=None,
            negated=False,
            outcome=Outcome.PARSE_FAILURE,
            candidate_count=0,
            raw_response=f"<pipeline error: {exc}>",
        )
        return result, {"id": relation.relation_id, "candidates": []}


def _result_record(result: MappingResult) -> dict:
    return {
        "relation_id": result.relation_id,
        "mapped_predicate": result.mapped_predicate,
        "negated": result.negated,
        "outcome": result.outcome.value,
        "candidate_count": result.candidate_count,
        "raw_response": result.raw_response,
        "latency": result.latency,
    }


def _result_from_record(record: dict) -> MappingResult:
    return MappingResult(
        relation_id=str(record["relation_id"]),
        mapped_predicate=record["mapped_predicate"],
        negated=bool(record["negated"]),
        outcome=Outcome(record["outcome"]),
        candidate_count=int(record["candidate_count"]),
        raw_response=str(record["raw_response"]),
        latency=float(record.get("latency", 0.0)),
    )


class Checkpointer:
    """Append-only journal of completed relations for one input file."""

    def __init__(self, path: str | Path, input_digest: str, run_id: str):
        self.path = Path(path)
        self.input_digest = input_digest
        self.run_id = run_id
        self._lock = threading.Lock()
        self._fh = None

    def load_completed(self) -> dict[str, tuple[MappingResult, dict]]:
        """Read a prior checkpoint, validating it belongs to this run."""
        if not self.path.is_file():
            raise ResumeError(f"checkpoint not found: {self.path}")
        completed: dict[str, tuple[MappingResult, dict]] = {}
        with open(self.path, encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise ResumeError(f"corrupt checkpoint header: {exc}") from exc
            if header.get("input_digest") != self.input_digest:
                raise ResumeError(
                    "checkpoint was written for a different input file "
                    f"(digest {header.get('input_digest')!r}, expected "
                    f"{self.input_digest!r})"
                )
            if header.get("run_id") != self.run_id:
                raise ResumeError(
                    f"checkpoint belongs to run {header.get('run_id')!r}, "
                    f"this run is {self.run_id!r}"
                )
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    result = _result_from_record(row["result"])
                    completed[str(row["relation_id"])] = (result, row["candidates"])
                except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                    raise ResumeError(f"{self.path}:{lineno}: {exc}") from exc
        return completed

    def start(self, fresh: bool) -> None:
        mode = "w" if fresh else "a"
        self._fh = open(self.path, mode, encoding="utf-8")
        if fresh:
            self._fh.write(
                json.dumps({"input_digest": self.input_digest, "run_id": self.run_id})
                + "\n"
            )
            self._fh.flush()

    def append(self, result: MappingResult, candidate_row: dict) -> None:
        line = json.dumps(
            {
                "relation_id": result.relation_id,
                "result": _result_record(result),
                "candidates": candidate_row,
            }
        )
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_file(path: str | Path) -> str:
    return digest_bytes(Path(path).read_bytes())


def map_batch(
    relations: Sequence[ExtractedRelation],
    runtime: PipelineRuntime,
    checkpoint_path: str | Path | None = None,
    input_digest: str | None = None,
    resume: bool = False,
) -> BatchOutput:
    """Map every relation, emitting edges only for mapped outcomes.

    With a checkpoint path, completed relations are journaled as they
    finish; pass resume=True to skip work already journaled for the same
    input digest. Outputs are assembled in input order regardless of
    completion order.
    """
    relations = list(relations)
    ids = [r.relation_id for r in relations]
    if len(ids) != len(set(ids)):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ConfigError(f"duplicate relation ids in input: {dupes[:5]}")

    completed: dict[str, tuple[MappingResult, dict]] = {}
    checkpointer = None
    if checkpoint_path is not None:
        if input_digest is None:
            input_digest = digest_bytes(
                "\n".join(ids).encode("utf-8")
            )  # fallback identity when no input file exists
        checkpointer = Checkpointer(checkpoint_path, input_digest, runtime.run_id)
        if resume:
            completed = checkpointer.load_completed()
        checkpointer.start(fresh=not resume)
    elif resume:
        raise ResumeError("resume requested without a checkpoint path")

    pending = [r for r in relations if r.relation_id not in completed]
    outcomes: dict[str, tuple[MappingResult, dict]] = dict(completed)

    def worker(
        relation: ExtractedRelation,
    ) -> tuple[str, MappingResult, dict]:
        result, candidate_row = process_relation(relation, runtime)
        if checkpointer is not None:
            checkpointer.append(result, candidate_row)
        return relation.relation_id, result, candidate_row

    try:
        if pending:
            with ThreadPoolExecutor(max_workers=runtime.concurrency) as pool:
                for rid, result, candidate_row in pool.map(worker, pending):
                    outcomes[rid] = (result, candidate_row)
    finally:
        if checkpointer is not None:
            checkpointer.close()

    results = []
    candidate_rows = []
    edges = []
    provenance = runtime.provenance()
    for relation in relations:
        result, candidate_row = outcomes[relation.relation_id]
        results.append(result)
        candidate_rows.append(candidate_row)
        if result.outcome is Outcome.MAPPED:
            edges.append(
                EdgeRecord(
                    subject=relation.subject,
                    object=relation.object,
                    predicate=result.mapped_predicate,
                    negated=result.negated,
                    relation_id=relation.relation_id,
                    source_relation_text=relation.relation_text,
                    provenance=provenance,
                )
            )
    report = RunReport.from_results(results)
    return BatchOutput(
        results=results, candidate_rows=candidate_rows, edges=edges, report=report
    )


def resume_run(
    checkpoint_path: str | Path,
    relations: Sequence[ExtractedRelation],
    runtime: PipelineRuntime,
    input_digest: str,
) -> BatchOutput:
    """Continue an interrupted map_batch from its checkpoint."""
    return map_batch(
        relations,
        runtime,
        checkpoint_path=checkpoint_path,
        input_digest=input_digest,
        resume=True,
    )


def mapping_row(relation: ExtractedRelation, result: MappingResult) -> dict:
    """External mapping-output schema; raw responses appear as digests."""
    return {
        "id": result.relation_id,
        "subject": relation.subject,
        "object": relation.object,
        "mapped_predicate": result.mapped_predicate,
        "negated": result.negated,
        "outcome": result.outcome.value,
        "candidates_offered": result.candidate_count,
        "raw_response_digest": result.raw_response_digest(),
    }


def write_outputs(
    out_dir: str | Path,
    relations: Sequence[ExtractedRelation],
    output: BatchOutput,
) -> None:
    """Write edges, mappings, candidate dumps, and the run report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / EDGES_FILE, "w", encoding="utf-8") as fh:
        for edge in output.edges:
            fh.write(json.dumps(edge.to_dict()) + "\n")
    with open(out_dir / MAPPINGS_FILE, "w", encoding="utf-8") as fh:
        for relation, result in zip(relations, output.results):
            fh.write(json.dumps(mapping_row(relation, result)) + "\n")
    with open(out_dir / CANDIDATES_FILE, "w", encoding="utf-8") as fh:
        for row in output.candidate_rows:
            fh.write(json.dumps(row) + "\n")
    (out_dir / REPORT_FILE).write_text(
        json.dumps(output.report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
