"""Exception hierarchy shared by all modules.

The CLI maps each family onto its own exit code, so callers can tell a bad
config apart from a numerical blow-up or a degenerate estimator.
"""


class SbgenError(Exception):
    exit_code = 1


class InputError(SbgenError, ValueError):
    """Malformed input: wrong shape, non-finite values, bad config keys."""

    exit_code = 2


class UnsupportedError(SbgenError, NotImplementedError):
    """Valid request that this build does not handle (e.g. quadrature in 5D)."""

    exit_code = 2


class StateError(SbgenError, RuntimeError):
    """Object used in an invalid state, such as a gradient tape replayed twice."""

    exit_code = 2


class NumericalError(SbgenError, ArithmeticError):
    """Non-finite intermediate during a computation."""

    exit_code = 3

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class EstimationError(SbgenError, ArithmeticError):
    """An estimator has no usable input (all weights -inf, MGF underflow, ...)."""

    exit_code = 4
