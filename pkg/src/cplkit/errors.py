"""Exception hierarchy shared by all cplkit modules."""


class CouplingError(Exception):
    """Base class for every error raised by cplkit."""


class MeshError(CouplingError):
    pass


class MappingError(CouplingError):
    pass


class AccelerationError(CouplingError):
    pass


class ConfigError(CouplingError):
    """Configuration could not be parsed or is inconsistent.

    ``diagnostics`` carries the full list when raised after validation.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class CommError(CouplingError):
    pass


class HandshakeTimeout(CommError):
    pass


class ConnectionLost(CommError):
    pass


class FrameError(CommError):
    """Malformed frame; ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UsageError(CouplingError):
    """Illegal use of the participant API."""


class PhaseError(UsageError):
    """API call not allowed in the current lifecycle phase."""


class ConvergenceError(CouplingError):
    pass
