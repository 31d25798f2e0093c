"""Encoder construction, persistence, and CLS-embedding extraction.

Two base-model routes: a real checkpoint identifier handled by
transformers' Auto classes, or a `tiny:<hidden>x<layers>` spec that
builds a randomly initialized BERT with a corpus-derived whitespace
vocabulary for fully offline desk-scale runs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import torch
from transformers import AutoModel, AutoTokenizer, BertConfig, BertModel

from .tokenizer import PAD_ID, WhitespaceTokenizer

TINY_PREFIX = "tiny:"

MODEL_SUBDIR = "model"
TOKENIZER_SUBDIR = "tokenizer"
VOCAB_FILE = "vocab.json"
CONFIG_FILE = "config.json"


def parse_tiny_spec(base_model: str) -> tuple[int, int] | None:
    """'tiny:64x2' -> (hidden_size=64, layers=2); None for real models."""
    if not base_model.startswith(TINY_PREFIX):
        return None
    spec = base_model[len(TINY_PREFIX) :]
    try:
        hidden, layers = spec.split("x")
        return int(hidden), int(layers)
    except ValueError as exc:
        raise ValueError(
            f"tiny model spec must look like tiny:64x2, got {base_model!r}"
        ) from exc


def _head_count(hidden: int) -> int:
    for heads in (8, 4, 2, 1):
        if hidden % heads == 0:
            return heads
    return 1


class Encoder:
    """A text encoder exposing the leading classification-token embedding."""

    def __init__(
        self,
        model: torch.nn.Module,
        tokenize: Callable[[list[str]], dict[str, torch.Tensor]],
        model_id: str,
        tokenizer: object | None = None,
    ):
        self.model = model
        self.tokenize = tokenize
        self.model_id = model_id
        self.tokenizer = tokenizer

    def cls_embeddings(self, texts: list[str]) -> torch.Tensor:
        """Forward pass in the model's current mode; gradients flow."""
        batch = self.tokenize(texts)
        output = self.model(**batch)
        return output.last_hidden_state[:, 0]

    def embed(self, texts: list[str]) -> list[list[float]]:
        """Deterministic inference-mode embeddings (dropout off)."""
        self.model.eval()
        with torch.inference_mode():
            cls = self.cls_embeddings(texts)
        return [[float(v) for v in row] for row in cls.cpu()]

    @property
    def dim(self) -> int:
        return int(self.model.config.hidden_size)


def build_encoder(
    base_model: str, max_seq_len: int, corpus: list[str], seed: int
) -> tuple[Encoder, str]:
    """Returns (encoder, model_kind); model_kind is 'tiny' or 'pretrained'."""
    tiny = parse_tiny_spec(base_model)
    if tiny is not None:
        hidden, layers = tiny
        tokenizer = WhitespaceTokenizer.build(corpus, max_seq_len)
        config = BertConfig(
            vocab_size=tokenizer.vocab_size,
            hidden_size=hidden,
            num_hidden_layers=layers,
            num_attention_heads=_head_count(hidden),
            intermediate_size=4 * hidden,
            max_position_embeddings=max(max_seq_len, 8),
            type_vocab_size=1,
            pad_token_id=PAD_ID,
        )
        torch.manual_seed(seed)
        model = BertModel(config)
        return (
            Encoder(model, tokenizer.encode_batch, base_model, tokenizer=tokenizer),
            "tiny",
        )

    hf_tokenizer = AutoTokenizer.from_pretrained(base_model)
    model = AutoModel.from_pretrained(base_model)

    def tokenize(texts: list[str]) -> dict[str, torch.Tensor]:
        return dict(
            hf_tokenizer(
                texts,
                padding=True,
                truncation=True,
                max_length=max_seq_len,
                return_tensors="pt",
            )
        )

    return Encoder(model, tokenize, base_model, tokenizer=hf_tokenizer), "pretrained"


def save_encoder(
    encoder: Encoder, model_kind: str, artifact_dir: str | Path, metadata: dict
) -> None:
    artifact_dir = Path(artifact_dir)
    artifact_dir.mkdir(parents=True, exist_ok=True)
    encoder.model.save_pretrained(artifact_dir / MODEL_SUBDIR)
    if model_kind == "tiny":
        encoder.tokenizer.save(artifact_dir / VOCAB_FILE)
    else:
        encoder.tokenizer.save_pretrained(artifact_dir / TOKENIZER_SUBDIR)
    doc = {"model_kind": model_kind, **metadata}
    (artifact_dir / CONFIG_FILE).write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8"
    )


def load_encoder(artifact_dir: str | Path) -> tuple[Encoder, dict]:
    """Load a saved artifact; returns (encoder, saved config document)."""
    artifact_dir = Path(artifact_dir)
    doc = json.loads((artifact_dir / CONFIG_FILE).read_text(encoding="utf-8"))
    model = BertModel.from_pretrained(artifact_dir / MODEL_SUBDIR)
    model.eval()
    max_seq_len = int(doc["train_config"]["max_seq_len"])
    if doc["model_kind"] == "tiny":
        tokenizer = WhitespaceTokenizer.load(artifact_dir / VOCAB_FILE)
        tokenize = tokenizer.encode_batch
    else:
        hf_tokenizer = AutoTokenizer.from_pretrained(artifact_dir / TOKENIZER_SUBDIR)

        def tokenize(texts: list[str]) -> dict[str, torch.Tensor]:
            return dict(
                hf_tokenizer(
                    texts,
                    padding=True,
                    truncation=True,
                    max_length=max_seq_len,
                    return_tensors="pt",
                )
            )

    model_id = doc.get("model_id", doc["train_config"]["base_model"])
    return Encoder(model, tokenize, model_id), doc
