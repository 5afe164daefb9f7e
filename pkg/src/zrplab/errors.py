"""Exception types shared across the package."""


class ZrplabError(Exception):
    """Base class for all package errors."""


class DivergentPartition(ZrplabError):
    """Single-site partition sum does not converge at the requested fugacity.

    Raised by the series evaluators when the ratio test detects a
    non-summable tail (constant jump rates with fugacity at or above the
    rate value).  This is the signature of the condensation regime.
    """


class DensityUnreachable(ZrplabError):
    """No fugacity reproduces the requested density.

    For bounded jump rates the expected density saturates at a finite
    critical value; densities above it have no product-measure
    representation.
    """


class EnumerationTooLarge(ZrplabError):
    """Exact enumeration of box configurations exceeds the configured caps."""


class RateOutOfBounds(ZrplabError):
    """A realized site rate falls outside the declared [a, b] interval."""


class Frozen(ZrplabError):
    """Simulator has total exit rate zero (no particle can move)."""


class TimestepTooLarge(ZrplabError):
    """Random-sequential-update timestep violates the accuracy guard."""


class CflViolation(ZrplabError):
    """Explicit PDE step requested with a timestep above the stability bound."""


class NegativeDensity(ZrplabError):
    """PDE state turned negative; indicates a scheme bug, never clipped."""


class GridMismatch(ZrplabError):
    """Two density fields live on incompatible grids."""


class ParseError(ZrplabError):
    """Config file could not be parsed; message carries line and field."""


class ValidationError(ZrplabError):
    """Config parsed but violates an invariant; message names the field."""


class NotCondensingWarning(UserWarning):
    """Condensation experiment started below the critical density."""
