"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage errors exit with 1, numerical
failures with 2, and ``OSError`` with 3.
"""


class JointStabError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(JointStabError, ValueError):
    """Invalid arguments or inconsistent shapes."""


class NumericalError(JointStabError, ArithmeticError):
    """A numerical routine failed (singular system, eigensolver failure...)."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap or diverged."""

    def __init__(self, message, iterations=None, delta=None):
        super().__init__(message)
        self.iterations = iterations
        self.delta = delta


class GenerationError(NumericalError):
    """Ensemble generation exhausted its retry budget."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts
