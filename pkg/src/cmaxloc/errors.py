"""Exception types raised by the solver stages."""


class CmaxlocError(Exception):
    """Base class for all solver errors."""


class DegeneratePair(CmaxlocError):
    """Two point observations cannot constrain the pose (parallel bearings)."""


class DegenerateLine(CmaxlocError):
    """A line observation has (near) collinear endpoint bearings."""


class DegeneratePairLine(CmaxlocError):
    """The point bearing lies in the back-projected plane of the line."""


class UnboundedHypothesis(CmaxlocError):
    """A denominator interval straddles zero, so no finite box exists."""


class NoConsensus(CmaxlocError):
    """No consensus set large enough to recover a pose."""


class InsufficientInput(CmaxlocError):
    """Not enough correspondences to form a single minimal sample."""


class GenerationFailure(CmaxlocError):
    """Synthetic scene generation exhausted its resampling budget."""
