"""Exception classes. The CLI prints the class name as a greppable error tag."""


class Cov2PoseError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(Cov2PoseError, ValueError):
    pass


class RankDeficient(Cov2PoseError, ArithmeticError):
    pass


class NotPositiveDefinite(Cov2PoseError, ArithmeticError):
    pass


class Overflow(Cov2PoseError, OverflowError):
    pass


class DegenerateRotation(Cov2PoseError, ArithmeticError):
    """Gram-Schmidt input with a vanishing or collinear pair of vectors.

    ``index`` carries the offending sample position inside a batch when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(Cov2PoseError, ValueError):
    pass


class DivergenceDetected(Cov2PoseError, RuntimeError):
    pass
