"""Exception types shared across the package."""


class MotionForgeError(Exception):
    """Base class for all package errors."""


class BvhParseError(MotionForgeError):
    """Malformed BVH input. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CanonicalizationError(MotionForgeError):
    """Raw pose sequence cannot be converted to canonical features."""


class DegenerateRotationError(MotionForgeError):
    """A 6D orientation block does not span a plane."""


class DatasetError(MotionForgeError):
    """Dataset container is malformed or clips are incompatible."""


class CheckpointError(MotionForgeError):
    """Checkpoint file is missing, corrupt, or of an unknown version."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before all declared tensor bytes."""


class CheckpointShapeError(CheckpointError):
    """Declared tensor shapes do not fit the declared layer spec."""


class GenerationError(MotionForgeError):
    """The reverse process produced a non-finite frame."""


class TrainingError(MotionForgeError):
    """A training step produced a non-finite loss."""


class ConfigError(MotionForgeError):
    """Run configuration is inconsistent or incomplete."""
