"""Exception types shared across the package."""


class PoqmError(Exception):
    """Base class for all package errors."""


class CapacityError(PoqmError, ValueError):
    """A size limit was exceeded (qubit cap, enumeration cap, payload cap)."""


class HarnessError(PoqmError):
    """A participant stepped outside what a game lets it see or do.

    Raised for register access through a handle, cross-party channels that the
    game does not have, or quantum memory where only classical data may flow.
    These are bugs in the experiment, not losses for the adversary.
    """


class BudgetViolation(HarnessError):
    """An adversary carried a register whose size differs from its declared m2."""


class InterfaceError(HarnessError):
    """A black-box party asked for data its interface does not provide."""


class ProtocolViolation(PoqmError):
    """Malformed interaction: wrong message count, order or sender."""


class ExtractionUnavailable(PoqmError):
    """Extraction was requested for a session whose preparation failed."""


class FrameError(PoqmError, ValueError):
    """A wire frame could not be encoded or decoded."""
