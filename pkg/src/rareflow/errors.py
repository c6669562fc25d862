"""Exception hierarchy.

Validation problems (bad input, violated preconditions) derive from
:class:`ValidationError`; numerical failures (non-convergence, blow-up)
derive from :class:`NumericalError`.  The CLI maps the two families to
exit codes 2 and 1.
"""


class RareflowError(Exception):
    pass


class ValidationError(RareflowError, ValueError):
    pass


class NonErgodicError(ValidationError):
    """Chain is reducible or periodic; ``diagnostic`` names which."""

    def __init__(self, message: str, diagnostic: str):
        super().__init__(message)
        self.diagnostic = diagnostic


class PreconditionError(ValidationError):
    pass


class NumericalError(RareflowError, RuntimeError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BlowUpError(NumericalError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class CensoredError(NumericalError):
    pass
