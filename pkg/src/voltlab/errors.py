"""Exception types shared across the voltlab package."""


class VoltlabError(Exception):
    """Base class for all voltlab errors."""


class RangeError(VoltlabError, ValueError):
    """A numeric field is outside its encodable range."""


class FormatError(VoltlabError, ValueError):
    """A raw MSR word does not decode to a known command layout."""


class SchemaError(VoltlabError, ValueError):
    """A processor profile file is malformed or missing required fields."""


class InvariantError(VoltlabError, ValueError):
    """Profile data violates a model invariant (bands, distributions, ...)."""


class UnknownCoreOrPState(VoltlabError, KeyError):
    """Lookup of a core index or pstate the profile does not define."""


class UnknownStressor(VoltlabError, KeyError):
    """Stressor name not in the registry."""


class ParseError(VoltlabError, ValueError):
    """Mini-ISA source text could not be parsed."""


class InterpreterError(VoltlabError, RuntimeError):
    """Runtime fault inside the mini-ISA interpreter (bad access, budget)."""


class InvalidCore(VoltlabError, ValueError):
    """Core selection impossible for the requested partition."""


class NoWindowFound(VoltlabError, RuntimeError):
    """Voltage search hit the offset floor without finding a fault window."""


class AbortedByCrash(VoltlabError, RuntimeError):
    """A campaign died to a platform crash; carries the partial result."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
