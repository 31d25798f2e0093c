"""Predicate catalogs and LLM-generated negated descriptor variants.

A catalog pairs each ontology predicate with natural-language descriptors.
Negated variants live under `<label>_NEG` predicates and act as
contrastive retrieval material; they are produced by prompting a chat
model once per positive descriptor and validating the structured reply.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from . import prompts
from .clients import ChatProviderProtocol, chat_complete
from .errors import (
    EmptyResponse,
    IntegrityError,
    NegationYieldError,
    ParseError,
    RetriesExhausted,
)

logger = logging.getLogger(__name__)

NEG_SUFFIX = "_NEG"


class OntologyKind(str, Enum):
    CHEMPROT = "chemprot"
    BIOLINK = "biolink"
    CUSTOM = "custom"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Predicate:
    """One relationship label; negative variants carry the _NEG suffix."""

    label: str
    ontology: OntologyKind
    is_negative_variant: bool = False
    base_label: str = ""

    def __post_init__(self) -> None:
        base = self.base_label or self.label
        object.__setattr__(self, "base_label", base)
        if self.is_negative_variant:
            if self.label != self.base_label + NEG_SUFFIX:
                raise ValueError(
                    f"negative variant label {self.label!r} must be "
                    f"{self.base_label + NEG_SUFFIX!r}"
                )
        elif self.label != self.base_label:
            raise ValueError(
                f"base predicate label {self.label!r} differs from base_label"
            )


@dataclass(frozen=True)
class Descriptor:
    """A natural-language description of what a predicate means."""

    text: str
    predicate_label: str
    polarity: Polarity = Polarity.POSITIVE
    source: str = "unspecified"

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("descriptor text is empty after trimming")


def base_label_of(label: str) -> str:
    return label[: -len(NEG_SUFFIX)] if label.endswith(NEG_SUFFIX) else label


@dataclass
class PredicateCatalog:
    """The full predicate set of one ontology plus its descriptors."""

    ontology: OntologyKind
    predicates: list[Predicate]
    descriptors: list[Descriptor]
    version: str = "0"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.predicates:
            raise ParseError("catalog declares no predicates")
        labels = [p.label for p in self.predicates]
        if len(labels) != len(set(labels)):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise IntegrityError(f"duplicate predicate labels: {dupes}")
        by_label = {p.label: p for p in self.predicates}
        for pred in self.predicates:
            if pred.is_negative_variant and pred.base_label not in by_label:
                raise IntegrityError(
                    f"negative variant {pred.label!r} has no base predicate"
                )
        for desc in self.descriptors:
            pred = by_label.get(desc.predicate_label)
            if pred is None:
                raise IntegrityError(
                    f"descriptor {desc.text!r} references unknown predicate "
                    f"{desc.predicate_label!r}"
                )
            expected = (
                Polarity.NEGATIVE if pred.is_negative_variant else Polarity.POSITIVE
            )
            if desc.polarity is not expected:
                raise IntegrityError(
                    f"descriptor {desc.text!r} has polarity {desc.polarity.value} "
                    f"under predicate {pred.label!r}"
                )
        counts = self.descriptor_counts()
        for pred in self.predicates:
            if not pred.is_negative_variant and counts.get(pred.label, 0) == 0:
                raise IntegrityError(
                    f"predicate {pred.label!r} has no positive descriptors"
                )

    def descriptor_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for desc in self.descriptors:
            counts[desc.predicate_label] = counts.get(desc.predicate_label, 0) + 1
        return counts

    def predicate_labels(self) -> list[str]:
        return [p.label for p in self.predicates]

    def positive_descriptors(self) -> list[Descriptor]:
        return [d for d in self.descriptors if d.polarity is Polarity.POSITIVE]


def parse_catalog(path: str | Path, ontology: OntologyKind | None = None) -> PredicateCatalog:
    """Load a catalog file and enforce every catalog invariant.

    When `ontology` is given it must agree with the file's declaration.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"catalog file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: catalog root must be a JSON object")

    try:
        kind = OntologyKind(raw.get("ontology", ""))
    except ValueError:
        raise ParseError(
            f"{path}: field 'ontology' must be one of "
            f"{[k.value for k in OntologyKind]}, got {raw.get('ontology')!r}"
        ) from None
    if ontology is not None and kind is not ontology:
        raise ParseError(
            f"{path}: expected ontology {ontology.value!r}, file declares {kind.value!r}"
        )
    version = str(raw.get("version", "0"))

    predicates = []
    for i, entry in enumerate(raw.get("predicates", [])):
        if not isinstance(entry, dict) or "label" not in entry:
            raise ParseError(f"{path}: predicates[{i}] lacks a 'label' field")
        label = str(entry["label"])
        is_neg = label.endswith(NEG_SUFFIX)
        predicates.append(
            Predicate(
                label=label,
                ontology=kind,
                is_negative_variant=is_neg,
                base_label=base_label_of(label),
            )
        )

    descriptors = []
    for i, entry in enumerate(raw.get("descriptors", [])):
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: descriptors[{i}] is not an object")
        for fld in ("predicate", "text"):
            if fld not in entry:
                raise ParseError(f"{path}: descriptors[{i}] lacks field {fld!r}")
        polarity_raw = entry.get("polarity")
        if polarity_raw is None:
            polarity = (
                Polarity.NEGATIVE
                if str(entry["predicate"]).endswith(NEG_SUFFIX)
                else Polarity.POSITIVE
            )
        else:
            try:
                polarity = Polarity(polarity_raw)
            except ValueError:
                raise ParseError(
                    f"{path}: descriptors[{i}] field 'polarity' must be "
                    f"positive or negative, got {polarity_raw!r}"
                ) from None
        try:
            descriptors.append(
                Descriptor(
                    text=str(entry["text"]),
                    predicate_label=str(entry["predicate"]),
                    polarity=polarity,
                    source=str(entry.get("source", "unspecified")),
                )
            )
        except ValueError as exc:
            raise ParseError(f"{path}: descriptors[{i}]: {exc}") from exc

    catalog = PredicateCatalog(
        ontology=kind, predicates=predicates, descriptors=descriptors, version=version
    )
    counts = catalog.descriptor_counts()
    logger.info(
        "parsed catalog %s: %d predicates, %d descriptors (%s)",
        path.name,
        len(predicates),
        len(descriptors),
        ", ".join(f"{label}={n}" for label, n in sorted(counts.items())),
    )
    return catalog


def save_catalog(catalog: PredicateCatalog, path: str | Path) -> None:
    """Write a catalog in the canonical file format, polarity included."""
    doc = {
        "ontology": catalog.ontology.value,
        "version": catalog.version,
        "predicates": [{"label": p.label} for p in catalog.predicates],
        "descriptors": [
            {
                "predicate": d.predicate_label,
                "text": d.text,
                "source": d.source,
                "polarity": d.polarity.value,
            }
            for d in catalog.descriptors
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def build_negation_prompt(descriptor: Descriptor) -> str:
    """Render the negation prompt for one positive descriptor."""
    if descriptor.polarity is not Polarity.POSITIVE:
        raise ValueError("only positive descriptors can be negated")
    return prompts.render(
        prompts.NEGATION_PROMPT_TEMPLATE, descriptor_text=descriptor.text
    )


@dataclass(frozen=True)
class SkipRecord:
    """One positive descriptor that produced no usable negation."""

    predicate_label: str
    descriptor_text: str
    reason: str


def write_skip_report(skips: list[SkipRecord], path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "predicate": s.predicate_label,
                "descriptor": s.descriptor_text,
                "reason": s.reason,
            }
        )
        for s in skips
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _validate_negation(parsed: dict | None, source_text: str) -> tuple[str | None, str | None]:
    """Return (negation_text, skip_reason); exactly one is set."""
    if not isinstance(parsed, dict) or set(parsed.keys()) != {
        prompts.NEGATION_RESPONSE_KEY
    }:
        return None, "invalid_response_shape"
    value = parsed[prompts.NEGATION_RESPONSE_KEY]
    if not isinstance(value, str):
        return None, "invalid_response_shape"
    if value.strip() == prompts.NOT_ENOUGH_INFORMATION:
        return None, "not_enough_information"
    if not value.strip() or value.strip() == source_text.strip():
        return None, "empty_or_unchanged"
    return value, None


def generate_negations(
    catalog: PredicateCatalog,
    llm: ChatProviderProtocol,
    max_workers: int = 4,
) -> tuple[PredicateCatalog, list[SkipRecord]]:
    """Append one LLM-generated negative descriptor per positive descriptor.

    Individual failures are recorded as skips, never fatal; only a skip
    rate above 50% aborts. The input catalog is not mutated, and the
    result deduplicates on (predicate_label, text) so reruns add nothing.
    """
    positives = catalog.positive_descriptors()
    if not positives:
        return catalog, []

    def negate_one(descriptor: Descriptor) -> tuple[str | None, str | None]:
        prompt = build_negation_prompt(descriptor)
        try:
            exchange = chat_complete(llm, prompt)
        except RetriesExhausted:
            return None, "retries_exhausted"
        except EmptyResponse:
            return None, "empty_response"
        if exchange.raw_response.strip() == prompts.NOT_ENOUGH_INFORMATION:
            return None, "not_enough_information"
        return _validate_negation(exchange.parsed_json, descriptor.text)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        outcomes = list(pool.map(negate_one, positives))

    # Single assembly step after all responses are in.
    predicates = list(catalog.predicates)
    known_labels = {p.label for p in predicates}
    descriptors = list(catalog.descriptors)
    seen = {(d.predicate_label, d.text) for d in descriptors}
    skips: list[SkipRecord] = []

    for descriptor, (negation, reason) in zip(positives, outcomes):
        if negation is None:
            skips.append(
                SkipRecord(descriptor.predicate_label, descriptor.text, reason or "")
            )
            continue
        neg_label = descriptor.predicate_label + NEG_SUFFIX
        if neg_label not in known_labels:
            predicates.append(
                Predicate(
                    label=neg_label,
                    ontology=catalog.ontology,
                    is_negative_variant=True,
                    base_label=descriptor.predicate_label,
                )
            )
            known_labels.add(neg_label)
        key = (neg_label, negation)
        if key in seen:
            continue
        seen.add(key)
        descriptors.append(
            Descriptor(
                text=negation,
                predicate_label=neg_label,
                polarity=Polarity.NEGATIVE,
                source=f"llm:{llm.model_id}",
            )
        )

    if len(skips) * 2 > len(positives):
        raise NegationYieldError(
            f"{len(skips)} of {len(positives)} descriptors failed negation"
        )
    logger.info(
        "negation generation: %d positives, %d skipped", len(positives), len(skips)
    )
    return (
        PredicateCatalog(
            ontology=catalog.ontology,
            predicates=predicates,
            descriptors=descriptors,
            version=catalog.version,
        ),
        skips,
    )
