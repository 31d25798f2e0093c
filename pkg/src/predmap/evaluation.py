"""Retrieval and mapping metrics against gold predicate labels.

Exact match is judged on the final stage-3 output, while accuracy@k and
MRR are judged on the stage-2 candidate lists, so the effect of the LLM
refinement can be read in isolation. Negation agreement is reported
separately and never folds into exact match.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EvalInputError, ParseError
from .rerank import MappingResult, Outcome


@dataclass(frozen=True)
class GoldPair:
    relation_id: str
    gold_predicate: str
    gold_negated: bool | None = None


@dataclass
class MetricsReport:
    exact_match: float
    accuracy_at: dict[int, float]
    mrr: float
    n: int
    negation_agreement: float | None = None

    def orderings_hold(self) -> bool:
        """a@k non-decreasing in k and a@min_k <= MRR <= a@max_k."""
        ks = sorted(self.accuracy_at)
        if not ks:
            return True
        values = [self.accuracy_at[k] for k in ks]
        monotone = all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
        sandwiched = (
            values[0] <= self.mrr + 1e-12 and self.mrr <= values[-1] + 1e-12
        )
        return monotone and sandwiched

    def to_dict(self) -> dict:
        doc = {
            "n": self.n,
            "exact_match": self.exact_match,
            "accuracy_at": {str(k): v for k, v in sorted(self.accuracy_at.items())},
            "mrr": self.mrr,
            "orderings_hold": self.orderings_hold(),
        }
        if self.negation_agreement is not None:
            doc["negation_agreement"] = self.negation_agreement
        return doc


def read_gold(path: str | Path) -> list[GoldPair]:
    """Load gold pairs from JSON lines {id, predicate, negated?}."""
    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                negated = row.get("negated")
                pairs.append(
                    GoldPair(
                        relation_id=str(row["id"]),
                        gold_predicate=str(row["predicate"]),
                        gold_negated=bool(negated) if negated is not None else None,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def exact_match(results: Iterable[MappingResult], gold: Sequence[GoldPair]) -> float:
    """Fraction of gold pairs whose mapped predicate equals the gold label.

    Rejections, parse failures, and invalid selections all count as misses.
    """
    by_id = {r.relation_id: r for r in results}
    if not gold:
        raise EvalInputError("gold set is empty")
    hits = 0
    for pair in gold:
        result = by_id.get(pair.relation_id)
        if result is None:
            raise EvalInputError(f"no result for gold relation {pair.relation_id!r}")
        if result.outcome is Outcome.MAPPED and result.mapped_predicate == pair.gold_predicate:
            hits += 1
    return hits / len(gold)


def _gold_rank(candidates: Sequence[str], gold_label: str) -> int | None:
    """1-based rank of the gold label in the candidate list, None if absent."""
    for rank, label in enumerate(candidates, start=1):
        if label == gold_label:
            return rank
    return None


def _ranks(
    candidate_dumps: Mapping[str, Sequence[str]], gold: Sequence[GoldPair]
) -> list[int | None]:
    if not gold:
        raise EvalInputError("gold set is empty")
    ranks = []
    for pair in gold:
        if pair.relation_id not in candidate_dumps:
            raise EvalInputError(
                f"no candidate list for gold relation {pair.relation_id!r}"
            )
        ranks.append(_gold_rank(candidate_dumps[pair.relation_id], pair.gold_predicate))
    return ranks


def accuracy_at_k(
    candidate_dumps: Mapping[str, Sequence[str]],
    gold: Sequence[GoldPair],
    ks: Sequence[int],
) -> dict[int, float]:
    """For each k, the fraction of relations with gold inside the top k."""
    for k in ks:
        if k <= 0:
            raise EvalInputError(f"k must be positive, got {k}")
    ranks = _ranks(candidate_dumps, gold)
    return {
        k: sum(1 for r in ranks if r is not None and r <= k) / len(ranks) for k in ks
    }


def mrr(
    candidate_dumps: Mapping[str, Sequence[str]], gold: Sequence[GoldPair]
) -> float:
    """Mean reciprocal rank of the gold label, 0 when absent from the list."""
    ranks = _ranks(candidate_dumps, gold)
    return sum(1.0 / r for r in ranks if r is not None) / len(ranks)


def negation_agreement(
    results: Iterable[MappingResult], gold: Sequence[GoldPair]
) -> float | None:
    """Among mapped results with a gold negation flag, the agreement rate.

    None when no gold pair carries a negation flag for a mapped result.
    """
    by_id = {r.relation_id: r for r in results}
    agreements = []
    for pair in gold:
        if pair.gold_negated is None:
            continue
        result = by_id.get(pair.relation_id)
        if result is None or result.outcome is not Outcome.MAPPED:
            continue
        agreements.append(result.negated == pair.gold_negated)
    if not agreements:
        return None
    return sum(agreements) / len(agreements)


def compute_metrics(
    results: Iterable[MappingResult],
    candidate_dumps: Mapping[str, Sequence[str]],
    gold: Sequence[GoldPair],
    ks: Sequence[int],
) -> MetricsReport:
    results = list(results)
    return MetricsReport(
        exact_match=exact_match(results, gold),
        accuracy_at=accuracy_at_k(candidate_dumps, gold, ks),
        mrr=mrr(candidate_dumps, gold),
        n=len(gold),
        negation_agreement=negation_agreement(results, gold),
    )


def load_candidate_dump(path: str | Path) -> dict[str, list[str]]:
    """Read a candidate dump file into {relation_id: ordered labels}."""
    path = Path(path)
    dumps: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                dumps[str(row["id"])] = [str(c["label"]) for c in row["candidates"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return dumps
