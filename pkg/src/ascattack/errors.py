"""Exception hierarchy shared across the engine.

Each class maps to one CLI exit code family: validation errors exit 2,
I/O errors exit 3, oracle/transport failures exit 4, anything else 5.
"""


class AscError(Exception):
    """Base class for engine errors."""


class ContractViolationError(AscError):
    """An operation was called with arguments violating its contract."""


class DegenerateTargetError(ContractViolationError):
    """Target has zero area / empty segmentation where one is required."""


class MissingPriorError(ContractViolationError):
    """Pattern requires a (part-)segmentation prior the target lacks."""


class CapabilityError(AscError):
    """Oracle does not support the requested operation or objective."""


class OracleTransportError(AscError):
    """Remote oracle unreachable, timed out, or returned an error frame."""

    def __init__(self, message, code=None):
        super().__init__(message)
        self.code = code


class ProtocolViolationError(OracleTransportError):
    """Peer broke the wire protocol (framing, ids, version)."""


class NumericFailureError(AscError):
    """Non-finite values encountered during optimization."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CombinatorialBlowupError(ContractViolationError):
    """Exhaustive enumeration would exceed the configured subset limit."""
