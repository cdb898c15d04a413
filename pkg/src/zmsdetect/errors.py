"""Exception hierarchy shared by all modules."""


class ZMSError(Exception):
    """Base class for package errors."""


class ParameterError(ZMSError, ValueError):
    """Inconsistent or out-of-range parameters (ring, scheme, network sizes)."""


class InputError(ZMSError, ValueError):
    """Malformed user data: symbols outside the alphabet, bad distributions."""


class StateError(ZMSError, RuntimeError):
    """A state machine was driven out of order."""


class ProtocolError(ZMSError, RuntimeError):
    """Protocol-level failure, attributed to a phase and optionally a sensor."""

    def __init__(self, message, *, phase=None, sensor=None):
        self.phase = phase
        self.sensor = sensor
        where = []
        if phase is not None:
            where.append(f"phase {phase}")
        if sensor is not None:
            where.append(f"sensor {sensor}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ProtocolAbort(ProtocolError):
    """Fail-fast abort, e.g. a ciphertext that does not decrypt."""


class IncompleteRoundError(ProtocolError):
    """A phase barrier was reached with messages still missing."""


class CapabilityError(ZMSError, RuntimeError):
    """The instance is outside what a solver or estimator supports."""


class HarnessError(ZMSError, RuntimeError):
    """A game participant returned something the harness cannot score."""


class DisqualificationError(HarnessError):
    """An attacker deviated from the constraints the protocol enforces."""


class BudgetExceeded(HarnessError):
    """An attacker hook ran past its configured time budget."""


class DecryptionError(ZMSError, ValueError):
    """A ciphertext is malformed or does not decrypt to a ring element."""


class ContextAccessError(HarnessError, AttributeError):
    """An attacker asked for something outside its visible bundle."""
