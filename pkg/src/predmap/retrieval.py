"""Stage 2: top-k descriptor retrieval, predicate collapsing, hybrid merge.

Only the free-form relation text is embedded; subject, object, and
abstract stay out of the query. Retrieved descriptors sharing a base
predicate collapse into one candidate (a `_NEG` hit collapses onto its
base label with negation evidence flagged), and candidates from two
stores merge into a single list of at most 2k unique predicates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .clients import EmbeddingProviderProtocol, EmbeddingVector, embed_texts
from .errors import ConsistencyError, MergeContractViolation, ParseError
from .ontology import Polarity, base_label_of
from .store import EmbeddingStore, StoreRole


@dataclass(frozen=True)
class ExtractedRelation:
    """The input quadruple: subject, object, relation text, abstract."""

    relation_id: str
    subject: str
    object: str
    relation_text: str
    abstract: str = ""

    def __post_init__(self) -> None:
        for name in ("relation_id", "subject", "object", "relation_text"):
            if not getattr(self, name).strip():
                raise ValueError(f"relation field {name!r} is empty")


@dataclass(frozen=True)
class SupportingDescriptor:
    text: str
    polarity: Polarity
    score: float


@dataclass
class PredicateCandidate:
    """All top-k evidence for one base predicate."""

    base_label: str
    best_score: float
    best_rank: int
    negation_evidence: bool
    supporting_descriptors: list[SupportingDescriptor] = field(default_factory=list)


@dataclass
class CandidateSet:
    """Scored, collapsed, merged candidates for one relation."""

    relation_id: str
    candidates: list[PredicateCandidate]
    k: int
    sources: frozenset[StoreRole]

    def labels(self) -> list[str]:
        return [c.base_label for c in self.candidates]


def _sorted_candidates(
    candidates: list[PredicateCandidate],
) -> list[PredicateCandidate]:
    return sorted(candidates, key=lambda c: (-c.best_score, c.base_label))


def embed_relation(
    relation: ExtractedRelation,
    embedder: EmbeddingProviderProtocol,
    expected_model_id: str | None = None,
) -> EmbeddingVector:
    """Embed the relation text alone with the store's embedding model."""
    if expected_model_id is not None and embedder.model_id != expected_model_id:
        raise ConsistencyError(
            f"embedder model {embedder.model_id!r} does not match store model "
            f"{expected_model_id!r}"
        )
    return embed_texts(embedder, [relation.relation_text])[0]


def retrieve_candidates(
    store: EmbeddingStore, query: EmbeddingVector, k: int, relation_id: str = ""
) -> CandidateSet:
    """Fetch top-k descriptors and collapse them into predicate candidates.

    No refill happens after collapsing, so fewer than k candidates may
    come back when several descriptors share a predicate.
    """
    hits = store.knn_descriptors(query, k)
    by_label: dict[str, PredicateCandidate] = {}
    for rank, (record, score) in enumerate(hits, start=1):
        base = base_label_of(record.predicate_label)
        support = SupportingDescriptor(
            text=record.descriptor_text, polarity=record.polarity, score=score
        )
        candidate = by_label.get(base)
        if candidate is None:
            by_label[base] = PredicateCandidate(
                base_label=base,
                best_score=score,
                best_rank=rank,
                negation_evidence=record.polarity is Polarity.NEGATIVE,
                supporting_descriptors=[support],
            )
        else:
            candidate.supporting_descriptors.append(support)
            if score > candidate.best_score:
                candidate.best_score = score
                candidate.best_rank = rank
            candidate.negation_evidence = (
                candidate.negation_evidence or record.polarity is Polarity.NEGATIVE
            )
    return CandidateSet(
        relation_id=relation_id,
        candidates=_sorted_candidates(list(by_label.values())),
        k=k,
        sources=frozenset({store.manifest.store_role}),
    )


def hybrid_merge(
    primary: CandidateSet, auxiliary: CandidateSet | None, k: int
) -> CandidateSet:
    """Union two candidate fragments by base label, keeping at most 2k.

    Duplicates keep the maximum score (with its rank), OR their negation
    evidence, and pool supporting descriptors. With no auxiliary fragment
    the primary passes through unchanged.
    """
    if primary.k != k:
        raise MergeContractViolation(
            f"primary fragment built with k={primary.k}, merge called with k={k}"
        )
    if auxiliary is None:
        return CandidateSet(
            relation_id=primary.relation_id,
            candidates=_sorted_candidates(primary.candidates),
            k=k,
            sources=primary.sources,
        )
    if auxiliary.k != k:
        raise MergeContractViolation(
            f"auxiliary fragment built with k={auxiliary.k}, merge called with k={k}"
        )
    if auxiliary.relation_id != primary.relation_id:
        raise MergeContractViolation(
            f"fragments belong to different relations: {primary.relation_id!r} "
            f"vs {auxiliary.relation_id!r}"
        )
    merged: dict[str, PredicateCandidate] = {}
    for candidate in list(primary.candidates) + list(auxiliary.candidates):
        existing = merged.get(candidate.base_label)
        if existing is None:
            merged[candidate.base_label] = PredicateCandidate(
                base_label=candidate.base_label,
                best_score=candidate.best_score,
                best_rank=candidate.best_rank,
                negation_evidence=candidate.negation_evidence,
                supporting_descriptors=list(candidate.supporting_descriptors),
            )
        else:
            if candidate.best_score > existing.best_score:
                existing.best_score = candidate.best_score
                existing.best_rank = candidate.best_rank
            elif (
                candidate.best_score == existing.best_score
                and candidate.best_rank < existing.best_rank
            ):
                existing.best_rank = candidate.best_rank
            existing.negation_evidence = (
                existing.negation_evidence or candidate.negation_evidence
            )
            existing.supporting_descriptors.extend(candidate.supporting_descriptors)
    return CandidateSet(
        relation_id=primary.relation_id,
        candidates=_sorted_candidates(list(merged.values())),
        k=k,
        sources=primary.sources | auxiliary.sources,
    )


def read_relations(path: str | Path) -> Iterator[ExtractedRelation]:
    """Stream relation quadruples from a JSON-lines file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                yield ExtractedRelation(
                    relation_id=str(row["id"]),
                    subject=str(row["subject"]),
                    object=str(row["object"]),
                    relation_text=str(row["relation"]),
                    abstract=str(row.get("abstract", "")),
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc


def candidate_dump_row(candidate_set: CandidateSet) -> dict:
    """Row for the stage-2 candidate dump consumed by evaluation."""
    return {
        "id": candidate_set.relation_id,
        "candidates": [
            {
                "label": c.base_label,
                "score": c.best_score,
                "rank": c.best_rank,
                "negation_evidence": c.negation_evidence,
            }
            for c in candidate_set.candidates
        ],
    }
