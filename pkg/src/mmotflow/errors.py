"""Exception types shared across the solver modules."""


class MMOTError(Exception):
    """Base class for all solver errors."""


class SizeGuardError(MMOTError):
    """Raised when an enumeration would exceed the configured size budget."""

    def __init__(self, required: int, budget: int, what: str = "enumeration"):
        self.required = required
        self.budget = budget
        super().__init__(
            f"{what} needs {required:.3e} entries, budget is {budget:.3e}"
        )


class MaxIterationsError(MMOTError):
    """An iterative solver hit its iteration cap before converging."""

    def __init__(self, iterations: int, residual: float, what: str = "solver"):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge in {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


class NotSPDError(MMOTError):
    """Reduced Hessian factorization failed: left the validity region."""

    def __init__(self, eps: float, detail: str = ""):
        self.eps = eps
        msg = f"reduced Hessian not positive definite at eps={eps:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TrajectoryBoundError(MMOTError):
    """Potential left the a-priori sup-norm bound during integration."""

    def __init__(self, eps: float, sup_norm: float, bound: float):
        self.eps = eps
        self.sup_norm = sup_norm
        self.bound = bound
        super().__init__(
            f"|phi|_inf = {sup_norm:.6g} exceeds bound {bound:.6g} at eps={eps:.6g}"
        )


class LineSearchStallError(MMOTError):
    """Backtracking line search shrank the step below the stall threshold."""

    def __init__(self, step: float, iteration: int):
        self.step = step
        self.iteration = iteration
        super().__init__(
            f"line search stalled (step {step:.3e}) at iteration {iteration}"
        )


class NegativeEntryError(MMOTError):
    """A coupling tensor contained a negative entry."""


class ConfigError(MMOTError):
    """A run configuration failed to parse or validate."""
