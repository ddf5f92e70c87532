"""Exception types shared across the package."""


class FormatError(ValueError):
    """Raised when a binary or CSV artifact cannot be parsed.

    Messages for binary formats name the byte offset of the failure.
    """


class TrainingError(RuntimeError):
    """Raised when a model cannot be trained from the given data."""


class StageError(Exception):
    """An error attributed to a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message
