"""Exception taxonomy shared by all gfts modules.

Two branches matter to callers: ``ValidationError`` (bad inputs, the CLI maps
these to exit code 1) and ``NumericalError`` (the inputs were legal but a
computation could not be completed, exit code 2).
"""


class GftsError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GftsError):
    """Input violates a documented precondition."""


class NumericalError(GftsError):
    """A numerical procedure failed on otherwise valid input."""


# -- validation ---------------------------------------------------------------

class ParseError(ValidationError):
    """Malformed panel CSV or grouping config text."""


class ConfigError(ValidationError):
    """Grouping configuration is syntactically valid but inconsistent."""


class IncompleteRectangle(ValidationError):
    """A (year, age, bottom-key) cell is missing from the panel."""


class DuplicateCell(ValidationError):
    """A (year, age, bottom-key) cell appears more than once."""


class NonPositiveExposure(ValidationError):
    """Exposure must be strictly positive in every observed cell."""


class ZeroExposure(ValidationError):
    """An aggregate exposure is zero, so a rate or ratio is undefined."""


class UnknownKey(ValidationError):
    """Series key does not belong to the grouping scheme."""


class KeyMismatch(ValidationError):
    """Forecasts and summing matrix disagree about which series exist."""


class ShapeMismatch(ValidationError):
    """Array arguments have incompatible shapes."""


class InvalidInterval(ValidationError):
    """Interval bounds are crossed (lower > upper)."""


class SeriesTooShort(ValidationError):
    """Not enough observations for the requested fit."""


class SampleTooSmall(ValidationError):
    """Not enough in-sample forecast errors to calibrate a band."""


class NonPositiveVariance(ValidationError):
    """Weighting variances must be strictly positive."""


# -- numerical ----------------------------------------------------------------

class NonConvergence(NumericalError):
    """An optimizer failed to reach its tolerance."""


class NonInvertible(NumericalError):
    """Fitted ARMA roots are on or inside the unit circle guard band."""


class AllCandidatesFailed(NumericalError):
    """Every model in an automatic search failed to fit."""


class SingularSystem(NumericalError):
    """A least-squares system is rank deficient."""


class Unattainable(NumericalError):
    """Requested band coverage cannot be reached within the scale cap."""


# -- warnings -------------------------------------------------------------------

class DegenerateSeries(UserWarning):
    """All curves identical: the principal component model is a flagged stub."""
