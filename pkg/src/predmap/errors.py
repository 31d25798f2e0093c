"""Exception hierarchy for the mapping engine.

Every error raised by this package derives from PredmapError so batch
drivers can distinguish engine failures from programming errors.
"""


class PredmapError(Exception):
    """Base class for all engine errors."""


class TransportError(PredmapError):
    """A single model-provider request failed (network, HTTP status, bad body)."""


class RetriesExhausted(PredmapError):
    """A provider call failed on every attempt up to max_retries + 1."""


class EmptyResponse(PredmapError):
    """A chat provider returned an empty response body."""


class ProviderContractViolation(PredmapError):
    """A provider returned a malformed batch (wrong length, mixed dims, non-finite values)."""


class ParseError(PredmapError):
    """A catalog or input file is structurally malformed."""


class IntegrityError(PredmapError):
    """A catalog violates referential or semantic invariants."""


class NegationYieldError(PredmapError):
    """More than half of the positive descriptors failed negation generation."""


class CorruptStore(PredmapError):
    """A persisted embedding store is inconsistent with its manifest."""


class DegenerateEmbedding(PredmapError):
    """An embedding with zero norm cannot be stored."""


class QueryContractViolation(PredmapError):
    """A query vector does not match the store it is searched against."""


class ConsistencyError(PredmapError):
    """Embedder and store disagree on the embedding model."""


class MergeContractViolation(PredmapError):
    """Candidate fragments being merged were built under different settings."""


class PromptContractViolation(PredmapError):
    """A prompt cannot be built from the given inputs."""


class ConfigError(PredmapError):
    """A run configuration is invalid or inconsistent with its inputs."""


class ResumeError(PredmapError):
    """A checkpoint cannot be used to resume the requested run."""


class EvalInputError(PredmapError):
    """Evaluation inputs are incomplete or out of range."""
