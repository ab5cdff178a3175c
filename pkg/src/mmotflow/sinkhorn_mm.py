"""Damped symmetric multi-marginal Sinkhorn at fixed eps.

Baseline and independent oracle: fixed-point iteration on the single
symmetric potential, moving it by the log-ratio between the model marginal
and the target.  Updating every copy of the potential at once can oscillate,
so the step is damped by 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual
from .dual import Potential, ProblemParams
from .errors import MaxIterationsError


@dataclass
class SinkhornReport:
    iterations: int
    residual: float
    objective: float
    converged: bool
    objective_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)


def solve_symmetric_mm(
    params: ProblemParams,
    eps: float,
    tol: float = 1e-9,
    max_iter: int = 200_000,
    phi_init=None,
    damping: float = 0.5,
) -> tuple[Potential, SinkhornReport]:
    """Iterate phi <- phi - damping * eta * log(model_marginal / rho).

    Stops once the dual gradient sup-norm, (m-1) * |model - rho|_inf, is at
    most tol.  Returns the anchored potential and a report with the
    per-iteration objective values (non-increasing under damping).
    """
    rho = params.marginal.weights
    eta, m = params.eta, params.m
    phi = np.zeros(params.n) if phi_init is None else dual._phi_values(phi_init).copy()
    phi -= phi[params.anchor]

    objectives = []
    residuals = []
    updates = 0
    while True:
        stats = dual.gibbs_stats(params, phi, eps)
        objectives.append(dual._objective_from_stats(params, phi, stats))
        residual = (m - 1) * float(np.max(np.abs(stats.marginal - rho)))
        residuals.append(residual)
        if residual <= tol:
            break
        if updates >= max_iter:
            raise MaxIterationsError(max_iter, residual, "symmetric Sinkhorn")
        phi = phi - damping * eta * np.log(stats.marginal / rho)
        phi -= phi[params.anchor]
        updates += 1

    report = SinkhornReport(
        iterations=updates,
        residual=residual,
        objective=objectives[-1],
        converged=True,
        objective_history=objectives,
        residual_history=residuals,
    )
    return Potential.anchored(phi, params.anchor), report
