"""Exception hierarchy shared by all modules."""


class MVSceneError(Exception):
    """Base class for all library errors."""


class NonPositiveDepth(MVSceneError):
    """A point landed behind (or numerically on) the camera plane."""


class DegenerateConfiguration(MVSceneError):
    """Input geometry is rank-deficient for the requested solve."""


class TooFewKeypoints(MVSceneError):
    """Not enough visible keypoints for the requested operation."""


class EmptyAfterFilter(MVSceneError):
    """No detection survived confidence/distance filtering."""


class EmptyCandidateSet(MVSceneError):
    """A candidate set was empty where at least one pose is required."""


class InsufficientPoints(MVSceneError):
    """Too few (or too degenerate) points to fit the requested model."""


class EmptyUnprojection(MVSceneError):
    """No masked pixel carried a valid depth value."""


class FitRejected(MVSceneError):
    """A primitive fit did not reach the required inlier ratio."""


class PlacementFailure(MVSceneError):
    """Scene generation could not place objects without overlap."""


class ParseError(MVSceneError):
    """A file could not be parsed; the message names the offending part."""


class ConfigError(MVSceneError):
    """Configuration file contained unknown keys or invalid values."""
