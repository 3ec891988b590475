"""Exception hierarchy shared by every stage of the pipeline."""


class QnasError(Exception):
    """Base class for all package errors."""


class ArityError(QnasError, ValueError):
    """Wrong number of angles or wires for a gate kind."""


class WireError(QnasError, IndexError):
    """A gate references a qubit outside the register."""


class CapacityError(QnasError):
    """Requested register is larger than the backend supports."""


class FormatError(QnasError, ValueError):
    """Malformed input file or text record."""


class ValidationError(FormatError):
    """A parsed value violates a physical or structural invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericError(QnasError, ArithmeticError):
    """Non-finite values or a domain violation in arithmetic."""


class UnsupportedGateError(QnasError, ValueError):
    pass


class RoutingError(QnasError):
    pass


class SpecError(QnasError, ValueError):
    """A SubCircuit spec that is not legal for its design space."""


class InfeasibleError(QnasError, ValueError):
    pass


class ConfigError(QnasError):
    pass
