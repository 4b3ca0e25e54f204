"""Exception types shared across the package."""


class FlimsegError(Exception):
    """Base class for all errors raised by flimseg."""


class ShapeError(FlimsegError, ValueError):
    """Channel or spatial dimension mismatch between operands."""


class ConstantInputError(FlimsegError, ValueError):
    """All values equal; no threshold separates two classes."""


class NoMarkersError(FlimsegError, ValueError):
    """An operation that needs marker voxels received none."""


class NoLabeledFiltersError(FlimsegError, ValueError):
    """Scoring requires at least one filter labeled good_WT or good_ET."""


class BudgetExhaustedError(FlimsegError, RuntimeError):
    """The image-selection budget has been reached."""


class StaleScoresError(FlimsegError, RuntimeError):
    """The score table is out of date; re-score before ranking."""


class NotReadyError(FlimsegError, RuntimeError):
    """A pipeline stage was invoked before its prerequisites exist."""


class StaleCacheError(FlimsegError, RuntimeError):
    """A forward cache no longer matches the current decoder parameters."""


class FormatError(FlimsegError, ValueError):
    """A file on disk does not conform to its declared format."""
