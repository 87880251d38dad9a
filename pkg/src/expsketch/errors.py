"""Exception hierarchy shared by every module."""


class ExpSketchError(Exception):
    """Base class for all library errors."""

    code = "error"


class ConfigError(ExpSketchError, ValueError):
    code = "config_error"


class DimensionMismatch(ExpSketchError, ValueError):
    code = "dimension_mismatch"


class RankDeficient(ExpSketchError, ArithmeticError):
    code = "rank_deficient"


class SingularR(ExpSketchError, ArithmeticError):
    code = "singular_r"


class NoConvergence(ExpSketchError, ArithmeticError):
    code = "no_convergence"

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class ZeroDirection(ExpSketchError, ValueError):
    code = "zero_direction"


class SampleTooSmall(ExpSketchError, ArithmeticError):
    code = "sample_too_small"


class IndexOutOfRange(ExpSketchError, IndexError):
    code = "index_out_of_range"


# errors a caller can fix by changing inputs map to exit code 2, the rest to 3
NUMERIC_ERRORS = (RankDeficient, SingularR, NoConvergence, SampleTooSmall)
