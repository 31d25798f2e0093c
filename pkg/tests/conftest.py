import json
from pathlib import Path

import numpy as np
import pytest

from predmap.clients import DeterministicEmbedder, EmbeddingVector, RuleChat
from predmap.ontology import Polarity, parse_catalog
from predmap.store import EmbeddingRecord, EmbeddingStore, StoreManifest, StoreRole

DATA_DIR = Path(__file__).parent / "data"

# Deterministic negation reply used wherever a test preprocesses a catalog.
NEGATION_DEFAULT = '{"negation_of_the_descriptor_text": "it is not the case that {input_text}"}'
# Deterministic rerank reply: pick the top-ranked candidate, not negated.
PICK_FIRST = '{"mapped_predicate": "{first_candidate}", "negated": "False"}'


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def small_catalog():
    return parse_catalog(DATA_DIR / "catalog_small.json")


@pytest.fixture
def chemprot_catalog():
    return parse_catalog(DATA_DIR / "catalog_chemprot30.json")


@pytest.fixture
def embedder():
    return DeterministicEmbedder(seed=7, dim=64)


@pytest.fixture
def negation_chat():
    return RuleChat(default=NEGATION_DEFAULT)


def unit(values, model_id="random-fixture", dim=None):
    """Normalize a raw vector into an EmbeddingVector."""
    arr = np.asarray(values, dtype=np.float64)
    arr = arr / np.linalg.norm(arr)
    return EmbeddingVector(
        tuple(float(v) for v in arr), dim or len(values), model_id
    )


def random_store(
    rng: np.random.Generator,
    n_records: int,
    dim: int = 64,
    role: StoreRole = StoreRole.BASE,
    label_pool: list[str] | None = None,
    model_id: str = "random-fixture",
    duplicate_every: int = 0,
) -> EmbeddingStore:
    """Random-vector store for oracle-equivalence checks.

    duplicate_every > 0 reuses a prior record's vector every that-many
    records (under a different label) so tie-breaking gets exercised.
    """
    if label_pool is None:
        label_pool = [f"pred_{i:03d}" for i in range(max(4, n_records // 3))]
    records = []
    vectors: list[np.ndarray] = []
    for i in range(n_records):
        label = label_pool[int(rng.integers(len(label_pool)))]
        if rng.random() < 0.25:
            label = label + "_NEG"
            polarity = Polarity.NEGATIVE
        else:
            polarity = Polarity.POSITIVE
        if duplicate_every and i and i % duplicate_every == 0:
            raw = vectors[int(rng.integers(len(vectors)))]
        else:
            raw = rng.normal(size=dim)
        vectors.append(raw)
        records.append(
            EmbeddingRecord(
                predicate_label=label,
                descriptor_text=f"descriptor {i:04d}",
                polarity=polarity,
                vector=unit(raw, model_id=model_id),
            )
        )
    manifest = StoreManifest(
        model_id=model_id,
        dim=dim,
        catalog_version="random",
        record_count=len(records),
        created_at="1970-01-01T00:00:00+00:00",
        store_role=role,
    )
    return EmbeddingStore(manifest, records)


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
