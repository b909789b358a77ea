"""Exception hierarchy shared by every oodkit module."""


class OodkitError(Exception):
    """Base class for all errors raised by oodkit."""

    code = "oodkit_error"


class ValidationError(OodkitError, ValueError):
    code = "validation_error"


class InsufficientDataError(ValidationError):
    code = "insufficient_data"


class InfeasibleError(ValidationError):
    code = "infeasible"


class DegenerateError(ValidationError):
    code = "degenerate"


class UnsupportedError(ValidationError):
    code = "unsupported"


class ConfigError(ValidationError):
    """Run configuration fails schema validation."""

    code = "config_error"


class CapabilityError(OodkitError):
    """A statistic needs data (e.g. gradients) that the records do not carry."""

    code = "capability_error"


class EmptyAccumulatorError(OodkitError):
    code = "empty_accumulator"


class RecordFormatError(OodkitError, IOError):
    """Malformed, truncated or incompatible on-disk record/model file."""

    code = "format_error"


class StageError(OodkitError):
    """Wraps an error raised inside one stage of the pipeline."""

    code = "stage_error"

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
