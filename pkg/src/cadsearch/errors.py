"""Exception types shared across the package."""


class InputDomainError(ValueError):
    """An argument is outside the documented domain of an operation."""


class ManifestError(ValueError):
    """A manifest record violates a type invariant (names record and field)."""


class IngestionError(ValueError):
    """A record cannot be ingested and must be excluded (e.g. empty point source)."""


class ConfigurationError(ValueError):
    """Model or pipeline configuration is internally inconsistent."""


class UndefinedSimilarityError(ValueError):
    """Cosine similarity requested for a zero-norm embedding."""


class EvaluationError(ValueError):
    """Retrieval evaluation cannot proceed (empty ranks, missing truth, NaN scores)."""


class TrainingDivergenceError(RuntimeError):
    """Loss became non-finite during training; message carries the step diagnostics."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible with the model."""
