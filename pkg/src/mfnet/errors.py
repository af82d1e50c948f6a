"""Exception hierarchy shared by every module of the engine."""


class MFNetError(Exception):
    """Base class for all engine errors."""


class InvalidArgumentError(MFNetError, ValueError):
    pass


class ShapeError(MFNetError, ValueError):
    pass


class UnsupportedFormatError(MFNetError, ValueError):
    pass


class NonFiniteError(MFNetError, FloatingPointError):
    """Raised by debug mode when an op produces NaN or inf."""


class NumericAbort(MFNetError, RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, step, lr, loss):
        super().__init__(f"non-finite loss at step {step} (lr={lr!r}, loss={loss!r})")
        self.step = step
        self.lr = lr
        self.loss = loss


class CheckpointError(MFNetError):
    code = "checkpoint-error"


class CheckpointFormatError(CheckpointError):
    """Bad magic or unsupported version."""

    code = "bad-format"


class CorruptCheckpointError(CheckpointError):
    """Truncated or internally inconsistent file."""

    code = "corrupt"


class CheckpointShapeError(CheckpointError):
    code = "shape-mismatch"


class ConfigMismatchError(CheckpointError):
    code = "config-mismatch"
