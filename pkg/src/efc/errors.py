"""Exception hierarchy shared by the efc modules."""


class EfcError(Exception):
    """Base class for all errors raised by efc."""


class SingularCovariance(EfcError):
    """The frequency covariance matrix cannot be inverted reliably."""


class NonpositiveFrequency(EfcError):
    """A single-site frequency is zero, so its log-ratio is undefined."""


class TooFewFlows(EfcError):
    """Not enough training flows to estimate the model."""


class SchemaMismatch(EfcError):
    """Input columns or flow length disagree with the trained schema."""


class DataError(EfcError):
    """Input table is unusable (no rows left, bad header, too few rows)."""


class SingleClassError(EfcError):
    """A metric needs both classes but only one is present."""


class ModelFormatError(EfcError):
    """A model file is truncated, corrupt, or of an unsupported version."""


class VersionMismatch(ModelFormatError):
    pass


class ChecksumMismatch(ModelFormatError):
    pass
