"""Exception types raised by the estimators."""


class SemimixError(Exception):
    """Base class for all estimation errors in this package."""


class InvalidBandwidthError(SemimixError, ValueError):
    pass


class EmptyDataError(SemimixError, ValueError):
    pass


class DegenerateGridError(SemimixError, ValueError):
    """The index values have zero range, so no grid can be spanned."""


class ShapeError(SemimixError, ValueError):
    pass


class StarvedNeighborhoodError(SemimixError):
    """A kernel-weighted denominator vanished at some evaluation point."""

    def __init__(self, message, grid_point=None, component=None):
        super().__init__(message)
        self.grid_point = grid_point
        self.component = component


class DegenerateIndexError(SemimixError, ValueError):
    pass


class RankDeficiencyError(SemimixError):
    pass


class SlicingError(SemimixError, ValueError):
    pass


class ComponentCollapseError(SemimixError):
    """A mixture component lost (almost) all of its responsibility mass."""


class DomainError(SemimixError, ValueError):
    pass
