"""Domain exceptions raised by the services layer.

Routers translate any ``PhaseFieldError`` into an HTTP 422; the CLI prints the
message and exits nonzero.
"""


class PhaseFieldError(Exception):
    """Root of every error raised by the numerical services."""


class InvalidFieldError(PhaseFieldError, ValueError):
    """Non-finite values, mismatched grids or out-of-range parameters."""


class MeanZeroError(PhaseFieldError, ValueError):
    def __init__(self, mean: float, tolerance: float):
        super().__init__(
            f"not in the mean-zero subspace: |mean| = {mean:.3e} exceeds tolerance {tolerance:.3e}"
        )
        self.mean = mean
        self.tolerance = tolerance


class DiagonalSolveError(PhaseFieldError, ValueError):
    """A diagonal spectral symbol has a zero or negative entry."""


class SharpConfigurationError(PhaseFieldError, ValueError):
    def __init__(self, detail: str = ""):
        message = "not a sharp configuration"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class WellPreparedError(PhaseFieldError, ValueError):
    """Initial interface violates the cut-off construction (too close to the wall)."""


class NoInterfaceError(PhaseFieldError, ValueError):
    def __init__(self, detail: str = "field does not change sign"):
        super().__init__(f"no interface: {detail}")


class DegenerateGradientError(PhaseFieldError, ValueError):
    """|grad u| vanishes on the contour, so the curvature is undefined."""


class EmptyMaskError(PhaseFieldError, ValueError):
    """The far-field mask selected no grid node."""


class OracleError(PhaseFieldError, ValueError):
    """The radial sharp-interface solve is degenerate or ill-conditioned."""


class NewtonConvergenceError(PhaseFieldError, RuntimeError):
    def __init__(self, stage: str, residual: float, iterations: int):
        super().__init__(
            f"Newton for the {stage} subproblem did not converge: "
            f"residual {residual:.3e} after {iterations} iterations"
        )
        self.stage = stage
        self.residual = residual
        self.iterations = iterations


class DissipationViolation(PhaseFieldError, RuntimeError):
    def __init__(self, energy_before: float, energy_after: float, dissipation: float, tolerance: float):
        super().__init__(
            "dissipation violated: "
            f"E_after + dissipation = {energy_after + dissipation:.12e} > "
            f"E_before + tol = {energy_before + tolerance:.12e}"
        )
        self.energy_before = energy_before
        self.energy_after = energy_after
        self.dissipation = dissipation
        self.tolerance = tolerance


class AprioriBoundViolation(PhaseFieldError, RuntimeError):
    def __init__(self, quantity: str, value: float, bound: float):
        super().__init__(f"a-priori bound violated for {quantity}: {value:.6e} > {bound:.6e}")
        self.quantity = quantity
        self.value = value
        self.bound = bound
