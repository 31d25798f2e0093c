"""Contrastive fine-tuning on descriptor catalogs.

Descriptors sharing a predicate are positives; a predicate's negated
variants form their own `<label>_NEG` class, so descriptor/negation
pairs are in-batch hard negatives. The objective is multi-similarity
loss over the cosine matrix with hard pair mining.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .catalog import DescriptorEntry, TrainDataError, read_descriptors
from .model import Encoder, build_encoder, save_encoder

TRAINING_LOG_FILE = "training_log.jsonl"


@dataclass
class TrainConfig:
    """Training recipe; defaults are the full-scale settings."""

    base_model: str = "microsoft/BiomedNLP-PubMedBERT-base-uncased-abstract-fulltext"
    max_seq_len: int = 25
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 2e-5
    seed: int = 42
    mixed_precision: bool = True
    loss_alpha: float = 2.0
    loss_beta: float = 50.0
    loss_base: float = 0.5
    mining_margin: float = 0.1


def multi_similarity_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    alpha: float = 2.0,
    beta: float = 50.0,
    base: float = 0.5,
    margin: float = 0.1,
) -> torch.Tensor:
    """Multi-similarity loss with hard pair mining over cosine similarities.

    Anchors lacking either a positive or a negative in the batch are
    skipped; mining keeps negatives harder than the easiest positive
    minus the margin and positives harder than the hardest negative plus
    the margin.
    """
    normalized = F.normalize(embeddings, dim=1)
    sim = normalized @ normalized.T
    terms = []
    for i in range(len(labels)):
        same = labels == labels[i]
        same[i] = False
        diff = labels != labels[i]
        if not bool(same.any()) or not bool(diff.any()):
            continue
        pos_sims = sim[i][same]
        neg_sims = sim[i][diff]
        neg_keep = neg_sims > pos_sims.min() - margin
        pos_keep = pos_sims < neg_sims.max() + margin
        if not bool(neg_keep.any()) or not bool(pos_keep.any()):
            continue
        pos_term = (
            torch.log1p(torch.exp(-alpha * (pos_sims[pos_keep] - base)).sum()) / alpha
        )
        neg_term = (
            torch.log1p(torch.exp(beta * (neg_sims[neg_keep] - base)).sum()) / beta
        )
        terms.append(pos_term + neg_term)
    if not terms:
        return embeddings.sum() * 0.0
    return torch.stack(terms).mean()


@dataclass
class TrainingExamples:
    """Descriptors grouped for pair-aware batch construction."""

    positives: dict[str, list[str]]  # base label -> positive texts
    negatives: dict[str, list[str]]  # base label -> negated texts
    corpus: list[str] = field(default_factory=list)

    @classmethod
    def from_entries(cls, entries: list[DescriptorEntry]) -> "TrainingExamples":
        positives: dict[str, list[str]] = {}
        negatives: dict[str, list[str]] = {}
        for entry in entries:
            bucket = negatives if entry.is_negative else positives
            bucket.setdefault(entry.base_label, []).append(entry.text)
        corpus = [e.text for e in entries]
        return cls(positives=positives, negatives=negatives, corpus=corpus)

    def validate(self) -> None:
        if len(self.positives) < 2:
            raise TrainDataError(
                f"contrastive training needs >= 2 predicates with positive "
                f"descriptors, got {len(self.positives)}"
            )


def build_batches(
    examples: TrainingExamples, batch_size: int, rng: random.Random
) -> list[list[tuple[str, str]]]:
    """One epoch of batches as (text, class_label) lists.

    Positives are scheduled in per-class pairs so same-class anchors
    co-occur (a class with an odd count leaves one singleton, which the
    loss simply skips as an anchor), and each scheduled positive brings
    one of its predicate's negated variants (index-aligned when counts
    match, so a descriptor travels with its own negation), keeping
    descriptor/negation hard negatives available in-batch.
    """
    queues = {}
    for label, texts in examples.positives.items():
        order = list(range(len(texts)))
        rng.shuffle(order)
        queues[label] = order
    pending = [label for label in queues]
    rng.shuffle(pending)

    batches: list[list[tuple[str, str]]] = []
    batch: list[tuple[str, str]] = []
    while pending:
        next_round = []
        for label in pending:
            queue = queues[label]
            take, queues[label] = queue[:2], queue[2:]
            if queues[label]:
                next_round.append(label)
            for idx in take:
                batch.append((examples.positives[label][idx], label))
                neg_texts = examples.negatives.get(label)
                if neg_texts:
                    batch.append(
                        (neg_texts[idx % len(neg_texts)], label + "_NEG")
                    )
            if len(batch) >= batch_size:
                batches.append(batch)
                batch = []
        pending = next_round
    if batch:
        batches.append(batch)
    return batches


@dataclass
class TrainSummary:
    artifact_dir: Path
    step_losses: list[float]

    @property
    def final_loss(self) -> float:
        return self.step_losses[-1] if self.step_losses else float("nan")


def finetune(
    catalog_path: str | Path,
    config: TrainConfig,
    artifact_dir: str | Path,
) -> TrainSummary:
    """Train the encoder on a catalog export and persist the artifact.

    The artifact directory holds the model weights, the tokenizer, the
    echoed training config with its seed, and a per-step loss log.
    """
    entries = read_descriptors(catalog_path)
    examples = TrainingExamples.from_entries(entries)
    examples.validate()

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    encoder, model_kind = build_encoder(
        config.base_model, config.max_seq_len, examples.corpus, config.seed
    )
    encoder.model.train()
    optimizer = torch.optim.AdamW(
        encoder.model.parameters(), lr=config.learning_rate
    )
    use_autocast = config.mixed_precision and torch.cuda.is_available()

    step_losses: list[float] = []
    log_rows: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        for batch in build_batches(examples, config.batch_size, rng):
            texts = [text for text, _ in batch]
            class_names = sorted({label for _, label in batch})
            class_ids = {name: i for i, name in enumerate(class_names)}
            labels = torch.tensor([class_ids[label] for _, label in batch])

            optimizer.zero_grad()
            if use_autocast:
                with torch.autocast("cuda"):
                    cls = encoder.cls_embeddings(texts)
                    loss = multi_similarity_loss(
                        cls,
                        labels,
                        alpha=config.loss_alpha,
                        beta=config.loss_beta,
                        base=config.loss_base,
                        margin=config.mining_margin,
                    )
            else:
                cls = encoder.cls_embeddings(texts)
                loss = multi_similarity_loss(
                    cls,
                    labels,
                    alpha=config.loss_alpha,
                    beta=config.loss_beta,
                    base=config.loss_base,
                    margin=config.mining_margin,
                )
            loss.backward()
            optimizer.step()
            step += 1
            value = float(loss.detach())
            step_losses.append(value)
            log_rows.append({"step": step, "epoch": epoch, "loss": value})

    artifact_dir = Path(artifact_dir)
    save_encoder(
        encoder,
        model_kind,
        artifact_dir,
        metadata={
            "model_id": config.base_model,
            "train_config": asdict(config),
            "descriptor_count": len(entries),
            "predicate_count": len(examples.positives),
            "steps": step,
            "final_loss": step_losses[-1] if step_losses else None,
        },
    )
    with open(artifact_dir / TRAINING_LOG_FILE, "w", encoding="utf-8") as fh:
        for row in log_rows:
            fh.write(json.dumps(row) + "\n")
    return TrainSummary(artifact_dir=artifact_dir, step_losses=step_losses)
