"""Exception hierarchy.

Two branches matter to the CLI: ConfigError maps to exit code 1,
NumericalError to exit code 2.
"""


class H2SLSError(Exception):
    """Base class for all package errors."""


class ConfigError(H2SLSError):
    """Invalid user-supplied configuration."""


class UnknownExperiment(ConfigError):
    """Experiment id outside the catalogue."""


class NumericalError(H2SLSError):
    """Numerical failure: bad inputs or degenerate linear algebra."""


class NonFinite(NumericalError):
    """An input array contains NaN or infinity."""


class SingularGram(NumericalError):
    """Gram matrix not invertible at the conditioning threshold."""


class SingularBlock(NumericalError):
    """A principal submatrix required to be invertible is singular."""


class NotPD(NumericalError):
    """A matrix required to be positive definite is not."""


class EmptySupport(ConfigError):
    """A restricted fit was asked for with an empty index set."""


class LengthMismatch(ConfigError):
    """Paired vectors have different lengths."""


class EmptyInput(ConfigError):
    """An aggregation was asked for with no records."""
