"""Exception hierarchy shared by every subsystem."""


class AmtError(Exception):
    """Base class for all errors raised by amtscope."""


class ConfigurationError(AmtError, ValueError):
    pass


class LifecycleError(AmtError, RuntimeError):
    """Operation not allowed in the runtime's current lifecycle state."""


class QueryError(AmtError, LookupError):
    pass


class DependencyError(AmtError):
    """A task could not run because one of its dependencies failed."""


class ResolutionError(AmtError, LookupError):
    """Global id is not registered with AGAS."""


class RegistrationError(AmtError):
    pass


class CounterParseError(AmtError, ValueError):
    """Malformed counter name or query; ``position`` is the offending offset."""

    def __init__(self, message, text, position):
        super().__init__(f"{message} at position {position} in {text!r}")
        self.text = text
        self.position = position


class SequencingError(AmtError):
    """Timer events for one task arrived out of order."""


class ContractError(AmtError):
    """A structural precondition (e.g. 2:1 mesh balance) does not hold."""


class ExportError(AmtError):
    pass
