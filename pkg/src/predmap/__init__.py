"""Free-text biomedical relation to ontology predicate mapping.

The engine runs in three stages: (1) preprocess an ontology predicate
catalog into a searchable store of descriptor embeddings, including
LLM-generated negated descriptor variants; (2) retrieve top-k candidate
predicates for an incoming relation by cosine similarity, collapsing
descriptors to predicates and optionally merging two stores; (3) rerank
candidates with an LLM against the full abstract context, with explicit
rejection (NONE) and negation flagging. Mapped relations come out as
knowledge-graph-ready edge records.
"""

__version__ = "0.1.0"
