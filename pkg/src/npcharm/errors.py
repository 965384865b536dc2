"""Exception types shared across the package."""


class NPCError(Exception):
    """Base class for all package errors."""


class DomainError(NPCError, ValueError):
    """An argument lies outside the domain of an operation."""


class ResolutionError(NPCError, ValueError):
    """The grid is too coarse for the requested stencil or ball."""


class NumericalFailure(NPCError, RuntimeError):
    """An iterative method failed its own monotonicity or convergence contract.

    ``partial`` carries whatever was computed before the failure.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class MapFormatError(NPCError, ValueError):
    """A map dump is truncated or its header cannot be parsed."""


class MapDimensionError(NPCError, ValueError):
    """A map dump disagrees with the expected grid dimension or shape."""


class SpaceTagMismatchError(DomainError):
    """A point or dump belongs to a different target space than declared."""


class ConfigError(NPCError, ValueError):
    """Invalid experiment configuration; ``field`` and ``line`` locate it."""

    def __init__(self, message, field=None, line=None):
        loc = []
        if field:
            loc.append(f"field '{field}'")
        if line is not None:
            loc.append(f"line {line}")
        full = f"{message} ({', '.join(loc)})" if loc else message
        super().__init__(full)
        self.field = field
        self.line = line
