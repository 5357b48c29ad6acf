"""Exception types shared across the package."""


class VartransferError(ValueError):
    """Base class for all errors raised by this package."""


class DataQualityError(VartransferError):
    """Input data contains non-finite values or malformed labels."""


class FilterDesignError(VartransferError):
    """Requested filter specification is unrealizable (e.g. fc >= fs/2)."""


class InvalidPriorError(VartransferError):
    """Prior hyperparameters violate their validity constraints."""


class InvalidPosteriorError(VartransferError):
    """Posterior hyperparameters cannot back a predictive distribution."""


class NumericalDegeneracyError(VartransferError):
    """A scale matrix lost positive definiteness beyond jitter repair."""


class DatasetError(VartransferError):
    """Dataset manifest, trial file, or role split is inconsistent."""
