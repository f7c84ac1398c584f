"""Exception hierarchy shared by all modules."""


class PkslabError(Exception):
    """Base class for every error raised by pkslab."""


class DomainError(PkslabError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularityError(DomainError):
    """Evaluation of a singular potential at the origin."""


class PreconditionError(DomainError):
    """A documented precondition (e.g. ``M * eps >= 1``) is violated."""


class CFLError(PkslabError, RuntimeError):
    """A time step violates the stability rule of the scheme."""


class ResourceError(PkslabError, MemoryError):
    """A grid would exceed the configured memory budget."""


class StatisticsError(PkslabError, ValueError):
    """Not enough samples for a requested statistic."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class InternalError(PkslabError, RuntimeError):
    """A numerical self-consistency check failed."""


class ConfigError(PkslabError, ValueError):
    """Invalid or unknown experiment configuration."""


class OutputError(PkslabError, OSError):
    """Reading or writing an experiment artefact failed."""
