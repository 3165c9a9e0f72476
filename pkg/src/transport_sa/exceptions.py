"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies:

* ``ConfigError``  -- malformed or inconsistent run configuration (exit 2)
* ``DataError``    -- unreadable or invalid input data (exit 3)
* ``FitError``     -- a model fit or downstream numeric step failed (exit 4)
"""


class TransportError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TransportError):
    """Run configuration is missing, malformed, or internally inconsistent."""


class DataError(TransportError):
    """Input data violates the dataset contract."""


class FitError(TransportError):
    """A nuisance fit or variance computation failed."""


class DegenerateResponseError(FitError):
    """Logistic response is constant; the likelihood has no interior maximum."""


class SeparationError(FitError):
    """Logistic fit diverged, consistent with complete or quasi separation."""
