"""Stage 3: LLM selection of the final predicate, with rejection and negation.

The model sees the full quadruple plus the collapsed candidate labels and
must answer with a small JSON object. Selection is closed-world: anything
outside the offered list is an invalid selection, kept distinct from an
explicit "none" so evaluation can separate model rejection from model
error. Both exclude the edge from the graph.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from enum import Enum

from . import prompts
from .clients import ChatProviderProtocol, chat_complete
from .errors import EmptyResponse, PromptContractViolation, RetriesExhausted
from .retrieval import CandidateSet, ExtractedRelation

NONE_SENTINEL = "none"

RETRY_SUFFIX = (
    "\n\nYour previous reply could not be parsed. "
    "Respond with ONLY the JSON object, nothing else."
)


class Outcome(str, Enum):
    MAPPED = "mapped"
    REJECTED_NONE = "rejected_none"
    PARSE_FAILURE = "parse_failure"
    INVALID_SELECTION = "invalid_selection"


@dataclass
class MappingResult:
    """Final decision for one relation, with a full audit trail."""

    relation_id: str
    mapped_predicate: str | None
    negated: bool
    outcome: Outcome
    candidate_count: int
    raw_response: str
    latency: float = 0.0

    def __post_init__(self) -> None:
        if (self.mapped_predicate is not None) != (self.outcome is Outcome.MAPPED):
            raise ValueError(
                "mapped_predicate must be present exactly when outcome is mapped"
            )

    def raw_response_digest(self) -> str:
        return hashlib.sha256(self.raw_response.encode("utf-8")).hexdigest()


def build_rerank_prompt(relation: ExtractedRelation, candidates: CandidateSet) -> str:
    """Render the selection prompt, one candidate label per line in order."""
    if not candidates.candidates:
        raise PromptContractViolation(
            f"no candidates to rerank for relation {relation.relation_id!r}"
        )
    return prompts.render(
        prompts.RERANK_PROMPT_TEMPLATE,
        subject=relation.subject,
        object=relation.object,
        relationship=relation.relation_text,
        abstract=relation.abstract,
        choices_str="\n".join(candidates.labels()),
    )


def _parse_negated(value: object) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered == "true":
            return True
        if lowered == "false":
            return False
    return None


def _interpret(parsed: dict | None) -> tuple[str, bool] | None:
    """Extract (selection, negated) or None when the reply is malformed."""
    if not isinstance(parsed, dict):
        return None
    if "mapped_predicate" not in parsed or "negated" not in parsed:
        return None
    selection = parsed["mapped_predicate"]
    negated = _parse_negated(parsed["negated"])
    if not isinstance(selection, str) or negated is None:
        return None
    return selection, negated


def select_predicate(
    relation: ExtractedRelation,
    candidates: CandidateSet,
    llm: ChatProviderProtocol,
) -> MappingResult:
    """Ask the LLM to pick a predicate from the candidate list.

    Malformed output earns one retry with an appended format reminder;
    transport failures and second parse failures land as parse_failure.
    An empty candidate set short-circuits to rejection without a call.
    """
    started = time.perf_counter()
    offered = candidates.labels()
    if not offered:
        return MappingResult(
            relation_id=relation.relation_id,
            mapped_predicate=None,
            negated=False,
            outcome=Outcome.REJECTED_NONE,
            candidate_count=0,
            raw_response="",
            latency=time.perf_counter() - started,
        )

    prompt = build_rerank_prompt(relation, candidates)
    raw = ""
    interpreted: tuple[str, bool] | None = None
    for attempt_prompt in (prompt, prompt + RETRY_SUFFIX):
        try:
            exchange = chat_complete(llm, attempt_prompt)
        except (RetriesExhausted, EmptyResponse) as exc:
            raw = raw or f"<no response: {exc}>"
            break
        raw = exchange.raw_response
        interpreted = _interpret(exchange.parsed_json)
        if interpreted is not None:
            break

    def result(outcome: Outcome, predicate: str | None, negated: bool) -> MappingResult:
        return MappingResult(
            relation_id=relation.relation_id,
            mapped_predicate=predicate,
            negated=negated,
            outcome=outcome,
            candidate_count=len(offered),
            raw_response=raw,
            latency=time.perf_counter() - started,
        )

    if interpreted is None:
        return result(Outcome.PARSE_FAILURE, None, False)
    selection, negated = interpreted
    if selection.strip().lower() == NONE_SENTINEL:
        return result(Outcome.REJECTED_NONE, None, False)
    if selection in offered:
        return result(Outcome.MAPPED, selection, negated)
    return result(Outcome.INVALID_SELECTION, None, False)
