"""Entropic two-marginal solves and the star-shaped initial condition.

The continuation starts at eps = 0, where the multi-marginal problem
decouples: its optimal plan is a product of two-marginal plans conditioned on
the first coordinate, and its dual potential equals the two-marginal one.
Both facts are exposed here (``product_plan``, ``star_center_potential``)
next to the log-domain Sinkhorn solver that produces them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .costs import DiscreteMarginal
from .errors import MaxIterationsError, MMOTError, SizeGuardError

PLAN_BUDGET = 1_000_000


@dataclass
class TwoMarginalSolution:
    """Potentials and plan from one entropic two-marginal solve.

    plan[i, j] = exp((psi_i + phi_j - cost_ij) / eta) * row_i * col_j, with
    phi anchored (phi[anchor] = 0, the shift moved into psi).
    """

    psi: np.ndarray
    phi: np.ndarray
    plan: np.ndarray
    iterations: int
    residual: float
    residual_history: list = field(default_factory=list)


def sinkhorn_two_marginal(
    rho: DiscreteMarginal,
    cost: np.ndarray,
    eta: float,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    anchor: int = 0,
    col_marginal: DiscreteMarginal | None = None,
) -> TwoMarginalSolution:
    """Log-domain Sinkhorn for min <cost, pi> + eta * KL(pi | rho x col).

    Alternates exact row/column matching in the log domain; stops once the
    sup-norm violation of both marginals is at most tol.  Each iteration ends
    with the column update, so at exit the columns are exact and the rows are
    within tol.
    """
    cost = np.asarray(cost, dtype=float)
    row_w = rho.weights
    col_w = row_w if col_marginal is None else col_marginal.weights
    if cost.shape != (row_w.size, col_w.size):
        raise MMOTError(f"cost shape {cost.shape} does not match marginals")
    if tol <= 0.0:
        raise MMOTError("tol must be positive")

    log_row = np.log(row_w)
    log_col = np.log(col_w)
    kernel = -cost / eta
    psi = np.zeros(row_w.size)
    phi = np.zeros(col_w.size)
    history = []
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        psi = -eta * logsumexp(kernel + phi[None, :] / eta + log_col[None, :], axis=1)
        phi = -eta * logsumexp(kernel + psi[:, None] / eta + log_row[:, None], axis=0)
        log_plan = (
            kernel
            + (psi[:, None] + phi[None, :]) / eta
            + log_row[:, None]
            + log_col[None, :]
        )
        rows = np.exp(logsumexp(log_plan, axis=1))
        cols = np.exp(logsumexp(log_plan, axis=0))
        residual = max(
            float(np.max(np.abs(rows - row_w))), float(np.max(np.abs(cols - col_w)))
        )
        history.append(residual)
        if residual <= tol:
            break
    else:
        raise MaxIterationsError(max_iter, residual, "two-marginal Sinkhorn")

    shift = phi[anchor]
    phi = phi - shift
    phi[anchor] = 0.0
    psi = psi + shift
    plan = np.exp(
        kernel
        + (psi[:, None] + phi[None, :]) / eta
        + log_row[:, None]
        + log_col[None, :]
    )
    return TwoMarginalSolution(
        psi=psi,
        phi=phi,
        plan=plan,
        iterations=iterations,
        residual=residual,
        residual_history=history,
    )


def star_center_potential(solutions) -> np.ndarray:
    """Center potential of the star-shaped dual: the sum of the leaf psi's."""
    return np.sum([s.psi for s in solutions], axis=0)


def product_plan(solutions, rho: DiscreteMarginal,
                 budget: int = PLAN_BUDGET) -> np.ndarray:
    """Optimal eps=0 coupling: product of pair conditionals given x1.

    gamma(x1, .., xm) = rho(x1) * prod_i plan_i(x1, x_i) / rho(x1), built as a
    full (N,)*m tensor; small N only.
    """
    n = rho.n
    m = len(solutions) + 1
    if n ** m > budget:
        raise SizeGuardError(n ** m, budget, "product plan tensor")
    gamma = np.ones((n,) * m)
    for i, sol in enumerate(solutions, start=1):
        cond = sol.plan / rho.weights[:, None]
        shape = [1] * m
        shape[0] = n
        shape[i] = n
        gamma = gamma * cond.reshape(shape)
    shape = [1] * m
    shape[0] = n
    return gamma * rho.weights.reshape(shape)
