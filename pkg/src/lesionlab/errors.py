"""Exception hierarchy shared across the pipeline.

Data-shaped failures (bad files, degenerate masks, layout problems) derive
from DataError so the CLI can map them to a single exit code; training
divergence gets its own class because it carries the failing iteration.
"""


class LesionLabError(Exception):
    """Base class for all library errors."""


class DimensionError(LesionLabError):
    """Tensor or mask shapes do not satisfy an operation's contract."""


class ContractError(LesionLabError):
    """An operation was invoked outside its documented contract."""


class ConfigError(LesionLabError):
    """Invalid network or pipeline configuration."""


class DataError(LesionLabError):
    """Base class for corpus / file / mask data problems."""


class DegenerateInputError(DataError):
    """Input lacks the variety an algorithm needs (e.g. < k distinct points)."""


class DegenerateMergeError(DataError):
    """Cluster centroids cannot be split into two luminance groups."""


class EmptyMaskError(DataError):
    """A mask is empty where foreground is required."""


class DegenerateMaskError(DataError):
    """A mask is all-zero or all-one where a proper partition is required."""


class NoInputError(DataError):
    """A directory or dataset contains nothing to process."""


class FormatError(DataError):
    """A file exists but cannot be decoded."""


class LayoutError(DataError):
    """Corpus directory layout does not match the expected structure."""


class CollisionError(DataError):
    """Two corpus entries map to the same image id."""


class CorruptCheckpointError(DataError):
    """Checkpoint file failed its integrity or version check."""


class SpecMismatchError(DataError):
    """Checkpoint was trained under a different network spec than requested."""


class IntegrityError(DataError):
    """Referenced artifact (mask file, manifest entry) is missing."""


class NotFoundError(DataError):
    """Lookup by id failed."""


class DependencyError(DataError):
    """A pipeline stage is missing an upstream artifact."""


class DivergenceError(LesionLabError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
