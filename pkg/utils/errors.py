from typing import Optional


class IrisGateError(Exception):
    """Base class for every error raised by the gate."""

    code = "IRIS_GATE_ERROR"

    def __init__(self, message: str = "") -> None:
        super().__init__(message or self.code)
        self.message = message or self.code


# Imaging
class MalformedImage(IrisGateError):
    code = "MALFORMED_IMAGE"


class UnsupportedFormat(IrisGateError):
    code = "UNSUPPORTED_FORMAT"


class EmptyImage(IrisGateError):
    code = "EMPTY_IMAGE"


class ChannelMismatch(IrisGateError):
    code = "CHANNEL_MISMATCH"


class IndivisibleSize(IrisGateError):
    code = "INDIVISIBLE_SIZE"


# Metrics
class EmptyMatrix(IrisGateError):
    code = "EMPTY_MATRIX"


class AllUndefined(IrisGateError):
    code = "ALL_UNDEFINED"


# Detectors
class ShapeMismatch(IrisGateError):
    code = "SHAPE_MISMATCH"


class ArityMismatch(IrisGateError):
    code = "ARITY_MISMATCH"


class NonFiniteScore(IrisGateError):
    code = "NON_FINITE_SCORE"


class NormalizedInput(IrisGateError):
    code = "NORMALIZED_INPUT"


class UnreadableModel(IrisGateError):
    code = "UNREADABLE_MODEL"


class ShapeContractViolation(IrisGateError):
    code = "SHAPE_CONTRACT_VIOLATION"


# Protocol
class EmptyClass(IrisGateError):
    code = "EMPTY_CLASS"


class EmptySet(IrisGateError):
    code = "EMPTY_SET"


class DuplicateSampleId(IrisGateError):
    code = "DUPLICATE_SAMPLE_ID"


class DivergedLoss(IrisGateError):
    code = "DIVERGED_LOSS"

    def __init__(self, epoch: int, message: str = "") -> None:
        super().__init__(message or f"Non-finite loss at epoch {epoch}")
        self.epoch = epoch


class GridCellError(IrisGateError):
    code = "GRID_CELL_FAILED"

    def __init__(self, lr: float, momentum: float, cause: Exception) -> None:
        super().__init__(f"Training failed for lr={lr}, momentum={momentum}: {cause}")
        self.lr = lr
        self.momentum = momentum
        self.cause = cause


# Synthetic data
class InvalidGeometry(IrisGateError):
    code = "INVALID_GEOMETRY"


class IoFailure(IrisGateError):
    code = "IO_FAILURE"


# Service / configuration
class ConfigError(IrisGateError):
    code = "CONFIG_ERROR"


class TooLarge(IrisGateError):
    code = "TOO_LARGE"


class DetectorFailure(IrisGateError):
    code = "DETECTOR_FAILURE"

    def __init__(self, tier: str, cause: Optional[Exception] = None) -> None:
        super().__init__(f"{tier} detector failed: {cause}")
        self.tier = tier
        self.cause = cause


class InvalidManifest(IrisGateError):
    code = "INVALID_MANIFEST"
