"""Exception types for the shapetex package."""


class ShapeTexError(Exception):
    """Base class for all package errors."""


class DimensionError(ShapeTexError):
    """Tensor shapes are incompatible; the message names the offending axis."""


class DegenerateBatchError(ShapeTexError):
    """Batch statistics are undefined (fewer than two values per channel)."""


class InvalidLabelError(ShapeTexError):
    """A soft label does not form a probability vector."""


class OptimizerStateError(ShapeTexError):
    """Optimizer invoked on parameters with missing gradients."""


class RangeError(ShapeTexError):
    """A scalar argument is outside its documented range."""


class SpecValidationError(ShapeTexError):
    """A dataset/experiment spec failed validation; message lists the bad fields."""


class PairingError(ShapeTexError):
    """Cue-conflict pairing is impossible (batch smaller than two)."""


class UninitializedStylizerError(ShapeTexError):
    """Stylize called with a codec that has not been trained."""


class TrainingFailureError(ShapeTexError):
    """Training did not reach its target; carries the loss curve."""

    def __init__(self, message, loss_curve):
        super().__init__(message)
        self.loss_curve = list(loss_curve)


class NanLossError(ShapeTexError):
    """Training aborted on a non-finite loss; carries a diagnostic dict."""

    def __init__(self, message, diagnostic):
        super().__init__(message)
        self.diagnostic = dict(diagnostic)


class UndefinedNormalizationError(ShapeTexError):
    """Corruption-score normalization undefined (baseline has zero error)."""


class UndefinedScoreError(ShapeTexError):
    """Bias score undefined (no qualifying predictions)."""


class CheckpointError(ShapeTexError):
    """Checkpoint file is malformed, corrupt, or has an unsupported version."""


class ConfigError(ShapeTexError):
    """Experiment configuration failed schema validation."""
