"""Exception types shared across the package."""


class RackctlError(Exception):
    """Base class for all errors raised by rackctl."""


class ConfigError(RackctlError):
    """Invalid or missing configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DimensionError(RackctlError, ValueError):
    """Vector lengths do not agree with the server count."""


class IntegrationError(RackctlError):
    """Numerical integration produced a non-finite state."""

    def __init__(self, zone, index):
        super().__init__(f"non-finite value in {zone}[{index}] during integration")
        self.zone = zone
        self.index = index


class UndefinedReturnError(RackctlError):
    """Return temperature requested for a rack with no active servers."""


class InvalidCoefficientsError(RackctlError, ValueError):
    """Model coefficients give a physically invalid value."""


class FitError(RackctlError):
    """Least-squares fit could not be performed (rank-deficient design)."""


class ProfileError(RackctlError, KeyError):
    """Lookup outside the bundled profile tables."""

    def __str__(self):
        return str(self.args[0]) if self.args else "profile lookup failed"


class TraceParseError(RackctlError):
    """Malformed trace row; ``line`` is the 1-based line number."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ClassificationError(RackctlError, ValueError):
    """Job outside the range covered by the class thresholds."""


class ForecastError(RackctlError):
    """Forecast requested with too little history."""


class TrainingError(RackctlError):
    """Forecaster training diverged."""


class InfeasibleError(RackctlError):
    """No pool mix satisfies the window constraints.

    ``constraint`` names the tightest violated constraint and ``violation`` its
    size in that constraint's units.
    """

    def __init__(self, constraint, violation, message=""):
        text = f"infeasible: {constraint} constraint violated by {violation:.6g}"
        super().__init__(text + (f" ({message})" if message else ""))
        self.constraint = constraint
        self.violation = violation


class HorizonMismatchError(RackctlError, ValueError):
    """Two reports cover different horizons or traces."""
