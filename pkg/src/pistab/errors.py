"""Exception types shared across the analysis modules."""


class PistabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PistabError, ValueError):
    """An argument lies outside the state or input space of the model."""


class InvalidBoundsError(PistabError, ValueError):
    """Lower bound exceeds upper bound."""


class AmbiguityError(PistabError, ValueError):
    """A disturbance-free operation was given a model with several members."""


class RefusalError(PistabError):
    """An analysis was requested outside the conditions it is defined for.

    ``details`` carries the offending quantities so callers can report them.
    """

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class CertificateInconsistencyError(PistabError):
    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class NonContractionError(PistabError):
    """The Lyapunov contraction factor is not strictly below one."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


class BracketingError(PistabError, ValueError):
    """The interval handed to a bracketing root finder has no sign change."""


class ScenarioFileError(PistabError, ValueError):
    """A scenario document is malformed; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
