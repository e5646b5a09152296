"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Malformed frames, parameters or model state."""


class InsufficientData(InvalidInput):
    """Too few frames to estimate temporal statistics."""


class InsufficientCandidates(InvalidInput):
    """Not enough distinct positions to supply the requested supports."""


class TrainingError(RuntimeError):
    """Training failed at a specific pixel."""

    def __init__(self, message, coord=None):
        super().__init__(message)
        self.coord = coord


class NumericFailure(ArithmeticError):
    """A covariance stopped being positive definite."""


class DecodeError(ValueError):
    """An image or model file could not be parsed."""


class IncompatibleModel(DecodeError):
    """Model bytes with the wrong magic, version or length."""


class SequenceGap(FileNotFoundError):
    """A frame inside the requested index range is missing."""

    def __init__(self, index, path):
        super().__init__(f"missing frame {index}: {path}")
        self.index = index
        self.path = path
