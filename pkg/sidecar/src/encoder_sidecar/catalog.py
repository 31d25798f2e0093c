"""Minimal reader for the engine's catalog export format.

The sidecar consumes the catalog file format only; it deliberately does
not import the engine package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

NEG_SUFFIX = "_NEG"


class TrainDataError(Exception):
    """The catalog export cannot support contrastive training."""


@dataclass(frozen=True)
class DescriptorEntry:
    text: str
    predicate_label: str
    polarity: str

    @property
    def base_label(self) -> str:
        if self.predicate_label.endswith(NEG_SUFFIX):
            return self.predicate_label[: -len(NEG_SUFFIX)]
        return self.predicate_label

    @property
    def is_negative(self) -> bool:
        return self.polarity == "negative"


def read_descriptors(path: str | Path) -> list[DescriptorEntry]:
    """Load descriptors from a catalog JSON export."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = []
    for row in doc.get("descriptors", []):
        label = str(row["predicate"])
        polarity = row.get(
            "polarity", "negative" if label.endswith(NEG_SUFFIX) else "positive"
        )
        entries.append(
            DescriptorEntry(
                text=str(row["text"]), predicate_label=label, polarity=str(polarity)
            )
        )
    if not entries:
        raise TrainDataError(f"catalog {path} contains no descriptors")
    return entries
