"""Reference solver: gradient descent with Armijo backtracking.

Produces the ground-truth potential used for error measurement in the
experiments.  The descent runs in the anchored subspace (the anchor component
of the direction is forced to zero), where the objective is strictly convex,
so the returned minimizer is unique regardless of the starting point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual
from .dual import Potential, ProblemParams
from .errors import LineSearchStallError, MaxIterationsError


@dataclass
class DescentReport:
    iterations: int
    grad_norm: float
    value: float
    n_evaluations: int
    value_history: list = field(default_factory=list)


def minimize_backtracking(
    params: ProblemParams,
    eps: float,
    phi_init=None,
    tol: float = 1e-10,
    max_iter: int = 50_000,
    armijo_c: float = 1e-4,
    shrink: float = 0.5,
    initial_step: float = 1.0,
    stall_step: float = 1e-16,
) -> tuple[Potential, DescentReport]:
    phi = np.zeros(params.n) if phi_init is None else dual._phi_values(phi_init).copy()
    phi -= phi[params.anchor]

    def evaluate(point):
        der = dual.derivatives(params, point, eps, need_hessian=False,
                               need_mixed=False)
        return der.objective, der.gradient

    value, grad = evaluate(phi)
    n_evals = 1
    history = [value]
    iterations = 0
    while float(np.max(np.abs(grad))) > tol:
        if iterations >= max_iter:
            raise MaxIterationsError(
                max_iter, float(np.max(np.abs(grad))), "backtracking descent"
            )
        direction = -grad.copy()
        direction[params.anchor] = 0.0
        slope = float(grad @ direction)  # negative while not converged
        step = initial_step
        while True:
            trial = phi + step * direction
            # one sweep yields both the Armijo value and, on acceptance,
            # the next gradient
            trial_value, trial_grad = evaluate(trial)
            n_evals += 1
            if trial_value <= value + armijo_c * step * slope:
                break
            step *= shrink
            if step < stall_step:
                raise LineSearchStallError(step, iterations)
        phi, value, grad = trial, trial_value, trial_grad
        history.append(value)
        iterations += 1

    report = DescentReport(
        iterations=iterations,
        grad_norm=float(np.max(np.abs(grad))),
        value=value,
        n_evaluations=n_evals,
        value_history=history,
    )
    return Potential.anchored(phi, params.anchor), report
