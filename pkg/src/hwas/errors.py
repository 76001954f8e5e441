"""Exception types raised across the pipeline."""


class HWASError(Exception):
    """Base class for all package errors."""


class InputValidationError(HWASError):
    """Input files or configuration failed validation (CLI exit code 1)."""


class UnmappableCode(HWASError):
    pass


class MalformedRow(InputValidationError):
    pass


class DuplicateVisitConflict(InputValidationError):
    pass


class EmptyTract(HWASError):
    pass


class NoData(HWASError):
    pass


class OutOfDomain(HWASError, ValueError):
    pass


class Collinear(HWASError):
    pass


class NotConverged(HWASError):
    pass


class UnknownCovariate(HWASError, KeyError):
    pass


class NoInformativeStrata(HWASError):
    pass


class NoControls(HWASError):
    pass


class MissingExposure(HWASError):
    pass


class DimensionMismatch(HWASError, ValueError):
    pass


class BundleMismatch(InputValidationError):
    """Output files in one bundle carry different config hashes."""
