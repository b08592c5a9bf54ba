"""Exception types shared across the solver modules."""


class ContractViolationError(ValueError):
    """An operation was called with inputs that violate its preconditions."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance.

    Carries the achieved residual (and, for the SCF loop, the residual
    history) so callers can report how far the iteration got.
    """

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history if history is not None else []


class EvolutionAborted(RuntimeError):
    """Time integration hit a non-finite value.

    The trace recorded up to the last good step is attached for
    post-mortem inspection.
    """

    def __init__(self, message, trace=None, time=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.time = time
