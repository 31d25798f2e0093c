"""Contrastive fine-tuning sidecar for the predicate mapping engine.

Trains a text encoder on a predicate descriptor catalog (positives plus
their generated negations) with multi-similarity loss and hard negative
mining, then serves the tuned encoder behind the same embeddings HTTP
contract the engine already speaks, so it can power an auxiliary store
with zero engine changes.
"""

__version__ = "0.1.0"
