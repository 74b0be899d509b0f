class GazeFeedbackError(Exception):
    """Base class for errors raised by this package."""


class FormatError(GazeFeedbackError):
    """Input file is structurally unusable (missing header, too many bad rows)."""


class PreconditionError(GazeFeedbackError, ValueError):
    pass


class DivergenceError(GazeFeedbackError, FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite parameters after epoch {epoch}")
        self.epoch = epoch
