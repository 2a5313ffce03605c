"""Exception types shared across the library."""


class LgcError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(LgcError, ValueError):
    """Array arguments have incompatible shapes."""


class ImpossibleSample(LgcError, ValueError):
    """An adjacency sample lies outside the support of the distribution."""


class ConfigMismatch(LgcError, ValueError):
    """A loss operation was called with a config of the wrong kind."""


class ConfigError(LgcError, ValueError):
    """Invalid run or experiment configuration."""


class InvalidShape(LgcError, ValueError):
    """Ground-truth construction arguments are inconsistent."""


class TooManyEdges(LgcError, ValueError):
    """Exact enumeration was requested for an intractably large edge set."""


class InsufficientSamples(LgcError, ValueError):
    """A statistical routine received fewer samples than it requires."""


class NumericalDivergence(LgcError, RuntimeError):
    """Training produced non-finite parameters."""
