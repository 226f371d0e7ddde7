"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class SpncsError(Exception):
    exit_code = 1


class SchemaError(SpncsError):
    """Malformed scenario or inconsistent dimensions."""

    exit_code = 2


class DimensionError(SchemaError):
    pass


class ConstraintError(SpncsError):
    """A design constraint (timing, mu, lambda, LMI) is not met."""

    exit_code = 3


class InfeasibleError(ConstraintError):
    pass


class JumpSetError(ConstraintError):
    pass


class NumericalGuardError(SpncsError):
    """Singular matrices, stiffness, non-finite values."""

    exit_code = 4


class SingularMatrixError(NumericalGuardError):
    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is singular at pivot {pivot}")


class AsymmetryError(NumericalGuardError):
    pass


class NonFiniteError(NumericalGuardError):
    pass


class StiffnessError(NumericalGuardError):
    def __init__(self, step: float, suggested: float):
        self.step = step
        self.suggested = suggested
        super().__init__(
            f"step {step:.3g} exceeds the RK4 stability guard; use step <= {suggested:.6g}"
        )


class SimulationError(NumericalGuardError):
    pass
