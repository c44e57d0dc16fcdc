"""Exception hierarchy shared across the simulator."""


class FedArenaError(Exception):
    """Base class for every error raised by this package."""


class ZeroNorm(FedArenaError, ValueError):
    pass


class EmptyInput(FedArenaError, ValueError):
    pass


class DegenerateVariance(FedArenaError, ValueError):
    pass


class ShapeMismatch(FedArenaError, ValueError):
    pass


class BadMagic(FedArenaError, ValueError):
    pass


class TruncatedFile(FedArenaError, ValueError):
    pass


class DimensionMismatch(FedArenaError, ValueError):
    pass


class InsufficientData(FedArenaError, ValueError):
    pass


class DegeneratePlan(FedArenaError, ValueError):
    pass


class EmptyActiveSet(FedArenaError, RuntimeError):
    pass


class AllRemoved(FedArenaError, RuntimeError):
    pass


class TooFewParticipants(FedArenaError, ValueError):
    pass


class ParseError(FedArenaError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(FedArenaError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
