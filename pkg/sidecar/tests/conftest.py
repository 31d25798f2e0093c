import json
from pathlib import Path

import pytest

from encoder_sidecar.catalog import read_descriptors
from encoder_sidecar.train import TrainConfig, TrainingExamples, finetune

DATA_DIR = Path(__file__).parent / "data"
CATALOG = DATA_DIR / "catalog_descriptors.json"

# Offline smoke recipe: one epoch over the fixture catalog on a scratch
# tiny encoder; separates held-out pairs in under a second on CPU.
SMOKE = dict(
    base_model="tiny:64x2",
    epochs=1,
    batch_size=8,
    learning_rate=5e-3,
    seed=42,
    mixed_precision=False,
)


@pytest.fixture
def catalog_path() -> Path:
    return CATALOG


def split_catalog(tmp_dir: Path) -> tuple[Path, dict[str, tuple[str, str]]]:
    """Write a training split, holding out one (positive, negation) pair
    per predicate. Returns (train_catalog_path, holdout)."""
    examples = TrainingExamples.from_entries(read_descriptors(CATALOG))
    doc = {"ontology": "custom", "version": "split", "predicates": [], "descriptors": []}
    holdout = {}
    for label, texts in examples.positives.items():
        negs = examples.negatives[label]
        holdout[label] = (texts[-1], negs[-1])
        doc["predicates"] += [{"label": label}, {"label": label + "_NEG"}]
        for text in texts[:-1]:
            doc["descriptors"].append(
                {"predicate": label, "text": text, "polarity": "positive"}
            )
        for text in negs[:-1]:
            doc["descriptors"].append(
                {"predicate": label + "_NEG", "text": text, "polarity": "negative"}
            )
    path = tmp_dir / "train_split.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path, holdout


@pytest.fixture(scope="session")
def smoke_artifact(tmp_path_factory):
    """One smoke-trained artifact shared across tests."""
    tmp = tmp_path_factory.mktemp("smoke")
    train_path, holdout = split_catalog(tmp)
    summary = finetune(train_path, TrainConfig(**SMOKE), tmp / "artifact")
    return summary, holdout
