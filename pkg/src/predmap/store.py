"""Per-descriptor embedding store with exact cosine search.

Every descriptor (positive and negative) keeps its own record; nothing is
aggregated per predicate, because downstream collapsing needs to see
which individual descriptors landed in the top-k. Vectors are
L2-normalized at build time so cosine reduces to a dot product. Search is
an exact linear scan: catalogs hold hundreds of descriptors, so
approximate indexes would buy nothing.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .clients import EmbeddingProviderProtocol, EmbeddingVector, embed_texts
from .errors import CorruptStore, ProviderContractViolation, QueryContractViolation
from .ontology import Polarity, PredicateCatalog

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.jsonl"

_NORM_TOLERANCE = 1e-9


class StoreRole(str, Enum):
    BASE = "base"
    AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class EmbeddingRecord:
    """One stored descriptor with its unit-norm vector."""

    predicate_label: str
    descriptor_text: str
    polarity: Polarity
    vector: EmbeddingVector


@dataclass(frozen=True)
class StoreManifest:
    model_id: str
    dim: int
    catalog_version: str
    record_count: int
    created_at: str
    store_role: StoreRole

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "dim": self.dim,
            "catalog_version": self.catalog_version,
            "record_count": self.record_count,
            "created_at": self.created_at,
            "store_role": self.store_role.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoreManifest":
        try:
            return cls(
                model_id=str(data["model_id"]),
                dim=int(data["dim"]),
                catalog_version=str(data["catalog_version"]),
                record_count=int(data["record_count"]),
                created_at=str(data["created_at"]),
                store_role=StoreRole(data["store_role"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptStore(f"malformed manifest: {exc}") from exc

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


class EmbeddingStore:
    """Immutable in-memory store over normalized descriptor embeddings."""

    def __init__(self, manifest: StoreManifest, records: list[EmbeddingRecord]):
        if manifest.record_count != len(records):
            raise CorruptStore(
                f"manifest record_count {manifest.record_count} does not match "
                f"{len(records)} records"
            )
        for rec in records:
            if rec.vector.dim != manifest.dim:
                raise CorruptStore(
                    f"record {rec.descriptor_text!r} has dim {rec.vector.dim}, "
                    f"manifest says {manifest.dim}"
                )
        self.manifest = manifest
        self._records = tuple(records)
        # Identical vectors stored under different labels must tie exactly,
        # so each distinct vector is scored once and the result shared:
        # matmul backends may round identical rows differently by position.
        unique_index: dict[tuple[float, ...], int] = {}
        row_to_unique = []
        unique_rows = []
        for rec in records:
            idx = unique_index.get(rec.vector.values)
            if idx is None:
                idx = len(unique_rows)
                unique_index[rec.vector.values] = idx
                unique_rows.append(rec.vector.values)
            row_to_unique.append(idx)
        self._row_to_unique = np.asarray(row_to_unique, dtype=np.intp)
        if unique_rows:
            self._matrix = np.array(unique_rows, dtype=np.float64)
            norms = np.linalg.norm(self._matrix, axis=1)
            if np.any(np.abs(norms - 1.0) > _NORM_TOLERANCE):
                raise CorruptStore("store contains non-normalized vectors")
        else:
            self._matrix = np.zeros((0, manifest.dim), dtype=np.float64)
        self._matrix.setflags(write=False)

    @property
    def records(self) -> tuple[EmbeddingRecord, ...]:
        return self._records

    @property
    def record_count(self) -> int:
        return len(self._records)

    def knn_descriptors(
        self, query: EmbeddingVector, k: int
    ) -> list[tuple[EmbeddingRecord, float]]:
        """Exact top-k by cosine, ties broken by (predicate, text) ascending."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if query.dim != self.manifest.dim:
            raise QueryContractViolation(
                f"query dim {query.dim} does not match store dim {self.manifest.dim}"
            )
        if not self._records:
            return []
        q = np.asarray(query.values, dtype=np.float64)
        q_norm = np.linalg.norm(q)
        if q_norm == 0.0:
            raise QueryContractViolation("query vector has zero norm")
        scores = (self._matrix @ (q / q_norm))[self._row_to_unique]
        scores = np.clip(scores, -1.0, 1.0)
        order = sorted(
            range(len(self._records)),
            key=lambda i: (
                -scores[i],
                self._records[i].predicate_label,
                self._records[i].descriptor_text,
            ),
        )
        return [
            (self._records[i], float(scores[i])) for i in order[: min(k, len(order))]
        ]

    def save(self, path: str | Path) -> None:
        """Persist as manifest.json plus one JSON line per record."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / MANIFEST_FILE).write_text(
            json.dumps(self.manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
        with open(path / RECORDS_FILE, "w", encoding="utf-8") as fh:
            for rec in self._records:
                fh.write(
                    json.dumps(
                        {
                            "predicate": rec.predicate_label,
                            "polarity": rec.polarity.value,
                            "text": rec.descriptor_text,
                            "vector": list(rec.vector.values),
                        }
                    )
                    + "\n"
                )


def build_store(
    catalog: PredicateCatalog,
    embedder: EmbeddingProviderProtocol,
    role: StoreRole = StoreRole.BASE,
    created_at: str | None = None,
) -> EmbeddingStore:
    """Embed every catalog descriptor and assemble a normalized store.

    Zero-norm embeddings are skipped with a log entry rather than stored;
    a mid-batch dimension change is a provider contract violation (already
    enforced by embed_texts).
    """
    descriptors = catalog.descriptors
    records: list[EmbeddingRecord] = []
    dim: int | None = None
    if descriptors:
        vectors = embed_texts(embedder, [d.text for d in descriptors])
        dim = vectors[0].dim
        for desc, vec in zip(descriptors, vectors):
            arr = np.asarray(vec.values, dtype=np.float64)
            norm = float(np.linalg.norm(arr))
            if norm == 0.0:
                logger.warning(
                    "skipping degenerate zero-norm embedding for %r under %s",
                    desc.text,
                    desc.predicate_label,
                )
                continue
            unit = tuple(float(v) for v in arr / norm)
            records.append(
                EmbeddingRecord(
                    predicate_label=desc.predicate_label,
                    descriptor_text=desc.text,
                    polarity=desc.polarity,
                    vector=EmbeddingVector(unit, vec.dim, vec.model_id),
                )
            )
    if dim is None:
        raise ProviderContractViolation("cannot build a store from zero descriptors")
    manifest = StoreManifest(
        model_id=embedder.model_id,
        dim=dim,
        catalog_version=catalog.version,
        record_count=len(records),
        created_at=created_at or datetime.now(timezone.utc).isoformat(),
        store_role=role,
    )
    return EmbeddingStore(manifest, records)


def load_store(path: str | Path) -> EmbeddingStore:
    """Load a persisted store, verifying manifest/record consistency."""
    path = Path(path)
    manifest_path = path / MANIFEST_FILE
    records_path = path / RECORDS_FILE
    if not manifest_path.is_file() or not records_path.is_file():
        raise CorruptStore(f"store at {path} is missing manifest or records file")
    try:
        manifest = StoreManifest.from_dict(
            json.loads(manifest_path.read_text(encoding="utf-8"))
        )
    except json.JSONDecodeError as exc:
        raise CorruptStore(f"unreadable manifest: {exc}") from exc

    records: list[EmbeddingRecord] = []
    with open(records_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                vector = EmbeddingVector(
                    tuple(float(v) for v in row["vector"]),
                    len(row["vector"]),
                    manifest.model_id,
                )
                records.append(
                    EmbeddingRecord(
                        predicate_label=str(row["predicate"]),
                        descriptor_text=str(row["text"]),
                        polarity=Polarity(row["polarity"]),
                        vector=vector,
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise CorruptStore(f"{records_path}:{lineno}: {exc}") from exc
    return EmbeddingStore(manifest, records)
