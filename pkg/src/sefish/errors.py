"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
configuration problems are ``SpecError``, anything about the dataset on
disk is ``DataError`` (or a subclass), weights-file trouble is either
``WeightsFormatError`` (unreadable file) or ``CompatibilityError``
(readable file, wrong model), and diverging training is ``NumericalError``.
"""


class SefishError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SefishError):
    """Tensor shapes are incompatible with the requested operation."""


class SpecError(SefishError):
    """A model/layer/config specification is invalid."""


class CompatibilityError(SefishError):
    """A weights file does not match the model it is being loaded into."""


class WeightsFormatError(SefishError):
    """A weights file is truncated, corrupt, or of an unknown version."""


class DataError(SefishError):
    """Invalid data fed to the pipeline (bad labels, malformed inputs)."""


class IngestError(DataError):
    """A dataset directory cannot be ingested."""


class SplitError(DataError):
    """A dataset cannot be partitioned as requested."""


class TrainingError(SefishError):
    """The training loop was driven incorrectly (e.g. missing gradients)."""


class NumericalError(SefishError):
    """Training produced non-finite values."""
