"""Exception hierarchy shared by all submodules."""


class FermionFilterError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(FermionFilterError, ValueError):
    pass


class IndexOutOfRange(FermionFilterError, IndexError):
    pass


class MixedParity(FermionFilterError, ValueError):
    """An operator without definite parity was used where one is required."""


class MixedParityOnFermionicSpace(MixedParity):
    pass


class InvalidParityAssignment(FermionFilterError, ValueError):
    pass


class ModelValidationError(FermionFilterError, ValueError):
    """A system model failed its parity or unitarity checks."""

    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


class InvariantViolation(FermionFilterError, RuntimeError):
    """A density matrix left the set of valid states.

    ``step`` is the index of the first offending time step (``None`` when the
    check was not part of a time series).
    """

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class DegenerateRatio(FermionFilterError, RuntimeError):
    """A detection was demanded where the jump intensity is (numerically) zero."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class NonUniqueSteadyState(FermionFilterError, RuntimeError):
    pass


class GridMismatch(FermionFilterError, ValueError):
    pass


class BoundaryMassLeak(FermionFilterError, RuntimeError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class UnsafeTimeStep(FermionFilterError, ValueError):
    """dt breaks a stability bound (jump thinning or the grid CFL limit)."""


class ConfigError(FermionFilterError, ValueError):
    pass
