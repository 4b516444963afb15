"""Exception types raised across the pipeline."""


class BurrNasError(Exception):
    """Base class for all package errors."""


class DegenerateInput(BurrNasError, ValueError):
    pass


class EmptyResult(BurrNasError):
    pass


class NoModel(BurrNasError):
    pass


class OutOfAnnulus(BurrNasError, ValueError):
    pass


class OutOfRange(BurrNasError, ValueError):
    pass


class InvalidConfig(BurrNasError, ValueError):
    pass


class InvalidPolygon(BurrNasError, ValueError):
    pass


class InvalidRatios(BurrNasError, ValueError):
    pass


class IoError(BurrNasError, OSError):
    pass


class ParseError(BurrNasError, ValueError):
    """Malformed text input. ``where`` locates the problem (offset, line or field)."""

    def __init__(self, message, where=None):
        self.where = where
        if where is not None:
            message = f"{message} (at {where})"
        super().__init__(message)


class TooLarge(BurrNasError, ValueError):
    pass


class NonFiniteGradient(BurrNasError, FloatingPointError):
    def __init__(self, message, trial=None):
        self.trial = trial
        if trial is not None:
            message = f"trial {trial}: {message}"
        super().__init__(message)


class NonFiniteLoss(BurrNasError, FloatingPointError):
    pass


class ImageTooSmall(BurrNasError, ValueError):
    pass


class ExternalTimeout(BurrNasError, TimeoutError):
    pass


class ExternalMalformedReply(BurrNasError):
    pass


class IncompleteGrid(BurrNasError, ValueError):
    pass


class SearchError(BurrNasError):
    """Wraps an evaluator failure with the trial at which it happened."""

    def __init__(self, trial, cause):
        self.trial = trial
        self.cause = cause
        super().__init__(f"trial {trial}: {type(cause).__name__}: {cause}")
