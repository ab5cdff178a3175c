"""Gibbs coupling reconstruction and the regularized primal objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import dual
from .costs import inner_pair_cost_tensor
from .dual import ProblemParams
from .errors import NegativeEntryError, SizeGuardError

FULL_TENSOR_BUDGET = 1_000_000
SUPPORT_THRESHOLD = 1e-3


def reconstruct_pair_marginal(params: ProblemParams, phi, eps: float) -> np.ndarray:
    """Two-fold marginal of the Gibbs plan over (x1, x2).

    Row z is rho_z times the conditional law of a symmetric coordinate given
    x1 = z; the eliminated first potential enters through the per-center
    partition function, which makes every row sum exactly rho_z.
    """
    stats = dual.gibbs_stats(params, phi, eps)
    return params.marginal.weights[:, None] * stats.cond_marginal


def reconstruct_full(
    params: ProblemParams, phi, eps: float, budget: int = FULL_TENSOR_BUDGET
) -> np.ndarray:
    """Full coupling tensor (small N only), axis 0 = first coordinate."""
    n, m, eta = params.n, params.m, params.eta
    if n ** m > budget:
        raise SizeGuardError(n ** m, budget, "full coupling tensor")
    phi_v = dual._phi_values(phi)
    rho = params.marginal.weights
    stats = dual.gibbs_stats(params, phi_v, eps)

    log_g = np.zeros((n,) * m)
    alpha = phi_v / eta + np.log(rho)
    for j in range(1, m):
        shape = [1] * m
        shape[j] = n
        log_g = log_g + alpha.reshape(shape)
    W = params.bundle.W
    for j in range(1, m):
        shape = [1] * m
        shape[0] = n
        shape[j] = n
        log_g = log_g - W.reshape(shape) / eta
    log_g = log_g - (eps / eta) * inner_pair_cost_tensor(W, m - 1)[None, ...]
    center = np.log(rho) - stats.log_partition
    shape = [1] * m
    shape[0] = n
    return np.exp(log_g + center.reshape(shape))


def primal_value(params: ProblemParams, gamma: np.ndarray, eps: float) -> float:
    """Transport cost plus eta times the entropy gap to the product measure.

    Entropy uses h(t) = t(log t - 1) with h(0) = 0; for a feasible coupling
    the gap equals the relative entropy, and at the dual optimum the value
    equals minus the reduced dual objective.
    """
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0.0):
        raise NegativeEntryError("coupling tensor has negative entries")
    m = params.m
    if gamma.shape != (params.n,) * m:
        raise SizeGuardError(gamma.size, params.n ** m, "coupling tensor shape")
    W = params.bundle.W
    cost = np.zeros_like(gamma)
    for j in range(1, m):
        shape = [1] * m
        shape[0] = params.n
        shape[j] = params.n
        cost = cost + W.reshape(shape)
    cost = cost + eps * inner_pair_cost_tensor(W, m - 1)[None, ...]

    positive = gamma > 0.0
    vals = gamma[positive]
    entropy = float(np.sum(vals * (np.log(vals) - 1.0)))
    rho = params.marginal.weights
    entropy_product = m * float(rho @ np.log(rho)) - 1.0
    return float(np.sum(cost * gamma)) + params.eta * (entropy - entropy_product)


def support_mask(matrix: np.ndarray, rel_threshold: float = SUPPORT_THRESHOLD):
    """Entries at least rel_threshold times the largest one."""
    matrix = np.asarray(matrix)
    return matrix >= rel_threshold * matrix.max()


@dataclass
class CouplingView:
    pair_marginal: np.ndarray
    mask: np.ndarray
    mass: float
    full: Optional[np.ndarray] = None
    primal: Optional[float] = None


def build_coupling_view(
    params: ProblemParams, phi, eps: float, want_full: bool = False
) -> CouplingView:
    pair = reconstruct_pair_marginal(params, phi, eps)
    full = None
    primal = None
    if want_full:
        full = reconstruct_full(params, phi, eps)
        primal = primal_value(params, full, eps)
    return CouplingView(
        pair_marginal=pair,
        mask=support_mask(pair),
        mass=float(pair.sum()),
        full=full,
        primal=primal,
    )
