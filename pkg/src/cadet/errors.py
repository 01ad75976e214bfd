"""Exception types shared across the package."""


class CadetError(Exception):
    """Base class for all package-specific failures."""


class InvalidArgumentError(CadetError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidDatasetError(CadetError, ValueError):
    """A dataset is structurally unusable (e.g. a class or all targets missing)."""


class InvalidCandidateError(CadetError, ValueError):
    """A candidate cannot be observed (e.g. its center lies outside the volume)."""


class GenerationError(CadetError, RuntimeError):
    """Phantom synthesis could not satisfy its placement constraints."""


class TrainingDivergedError(CadetError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class InvalidConfigError(CadetError, ValueError):
    """An experiment config failed validation; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class ChecksumMismatchError(CadetError, RuntimeError):
    """A report manifest entry does not match the file on disk."""
