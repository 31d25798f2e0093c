"""Whitespace tokenizer for scratch-initialized encoders.

Pretrained checkpoints ship their own tokenizers; scratch models built
offline need one derived from the training corpus. Lowercased
whitespace tokens are enough for descriptor-scale text.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SPECIALS = ["[PAD]", "[UNK]", "[CLS]"]


class WhitespaceTokenizer:
    def __init__(self, vocab: dict[str, int], max_len: int):
        self.vocab = vocab
        self.max_len = max_len

    @classmethod
    def build(cls, texts: list[str], max_len: int) -> "WhitespaceTokenizer":
        tokens = sorted({tok for text in texts for tok in text.lower().split()})
        vocab = {tok: i + len(SPECIALS) for i, tok in enumerate(tokens)}
        return cls(vocab, max_len)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab) + len(SPECIALS)

    def encode_batch(self, texts: list[str]) -> dict[str, torch.Tensor]:
        """Encode to [CLS] + token ids, truncated/padded to max_len."""
        rows = []
        for text in texts:
            ids = [CLS_ID] + [
                self.vocab.get(tok, UNK_ID) for tok in text.lower().split()
            ]
            rows.append(ids[: self.max_len])
        width = max(len(r) for r in rows)
        input_ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        attention_mask = torch.zeros((len(rows), width), dtype=torch.long)
        for i, row in enumerate(rows):
            input_ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
            attention_mask[i, : len(row)] = 1
        return {"input_ids": input_ids, "attention_mask": attention_mask}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"max_len": self.max_len, "vocab": self.vocab}, indent=2),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "WhitespaceTokenizer":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(vocab=doc["vocab"], max_len=int(doc["max_len"]))
