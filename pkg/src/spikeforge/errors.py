"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition on arguments was violated."""


class DomainError(ValueError):
    """A reduction or evaluation has no valid domain."""


class StateError(RuntimeError):
    """An object was used before it was ready."""


class SpecError(ValueError):
    """A network specification does not compose."""

    def __init__(self, index: int, message: str):
        super().__init__(f"layer {index}: {message}")
        self.index = index


class FormatError(ValueError):
    """A binary file does not match its expected format."""


class TruncatedFileError(FormatError):
    """A binary file ends before its declared payload."""


class DegenerateChannelError(ValueError):
    """A channel has zero variance and cannot be normalized."""
