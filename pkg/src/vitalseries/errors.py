"""Exception types shared across the package."""


class VitalSeriesError(Exception):
    """Base class for all package errors."""


class DegenerateSeries(VitalSeriesError):
    """Too few usable observations to identify the model."""


class InvalidTau(VitalSeriesError):
    """A proposed change year leaves a segment that is too short."""


class InvalidConfig(VitalSeriesError):
    """A configuration value is out of its admissible range."""


class DegenerateRing(VitalSeriesError):
    """A polygon ring has fewer than 3 distinct vertices."""


class GeometryFailure(VitalSeriesError):
    """Polygon clipping failed on degenerate or self-intersecting input."""


class AlignmentError(VitalSeriesError):
    """Vector input does not align with the ids it must match."""


class InvalidMatrix(VitalSeriesError):
    """A distance matrix is not square/symmetric/zero-diagonal."""


class RankDeficient(VitalSeriesError):
    """The smoothing design matrix does not have full column rank."""


class EigenFailure(VitalSeriesError):
    """Eigendecomposition of the covariance operator failed."""


class InvalidAssignment(VitalSeriesError):
    """A cluster assignment does not cover the points handed in."""


class ParseError(VitalSeriesError):
    """An input file could not be parsed."""


class SchemaError(VitalSeriesError):
    """An input file parses but violates the expected schema."""


class DuplicateKey(VitalSeriesError):
    """An input table repeats a (district, year) key."""


class UnknownDistrict(VitalSeriesError):
    """A directive references a district id that does not exist."""


class MissingEpoch(VitalSeriesError):
    """No boundary epoch is available for a required interval."""


class MissingRawCount(VitalSeriesError):
    """A source district has no recorded count for a required year."""
