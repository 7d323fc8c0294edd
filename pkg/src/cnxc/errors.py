"""Exception taxonomy shared by all cnxc modules.

Each class maps to one documented CLI exit code (see cli.EXIT_CODES):
layout problems in a dataset directory, malformed image files, corrupted
checkpoints, bad parameters/shapes, and numerical failures during training.
"""


class CnxcError(Exception):
    """Base class for all cnxc errors."""


class LayoutError(CnxcError):
    """Dataset directory does not follow the NORMAL/PNEUMONIA convention."""


class FormatError(CnxcError):
    """Malformed image bytes (bad magic, bad maxval, truncated payload)."""


class CorruptionError(CnxcError):
    """Checkpoint file is damaged: bad magic, length guard, or shapes."""


class ParameterError(CnxcError):
    """Invalid argument value (out-of-range scalar, bad config key, ...)."""


class ShapeError(ParameterError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(ParameterError):
    """Model configuration cannot be instantiated (e.g. spatial collapse)."""


class SplitError(ParameterError):
    """Dataset split cannot be performed (too few entries per class)."""


class DegenerateBatchError(ParameterError):
    """Batch statistics undefined (single-element channel in train mode)."""


class IterationError(ParameterError):
    """Batch iteration requested over an empty split."""


class UndefinedAUCError(ParameterError):
    """ROC/AUC requested on scores with only one label class present."""


class NumericalError(CnxcError):
    """Non-finite loss or gradients encountered; identifies the location."""
