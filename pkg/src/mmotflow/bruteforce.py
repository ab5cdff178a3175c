"""Dense full-tensor reference implementations.

Everything here enumerates the whole product space as one ndarray and reads
quantities off it by plain axis sums.  Intended for small instances only, as
an independent check of the chunked production code and of the chain
contraction; guarded by an entry budget.
"""

from __future__ import annotations

import numpy as np

from .costs import inner_pair_cost_tensor
from .dual import ProblemParams, _phi_values
from .errors import SizeGuardError

DENSE_BUDGET = 100_000


def _guard(entries: int, budget: int = DENSE_BUDGET):
    if entries > budget:
        raise SizeGuardError(entries, budget, "dense tensor")


def cost_tensor(W: np.ndarray, m: int, eps: float) -> np.ndarray:
    """Interpolated cost over the full product space, axis 0 = center."""
    n = W.shape[0]
    _guard(n ** m)
    out = np.zeros((n,) * m)
    for j in range(1, m):
        shape = [1] * m
        shape[0] = n
        shape[j] = n
        out = out + W.reshape(shape)
    inner = inner_pair_cost_tensor(W, m - 1)
    return out + eps * inner[None, ...]


def eps_cost_derivative_tensor(W: np.ndarray, m: int) -> np.ndarray:
    """d/d(eps) of the cost tensor: the inner pairwise sum, center-independent."""
    n = W.shape[0]
    _guard(n ** m)
    inner = inner_pair_cost_tensor(W, m - 1)
    return np.broadcast_to(inner[None, ...], (n,) * m)


def _conditional_tensor(params: ProblemParams, phi, eps: float):
    """Normalized Gibbs conditional q[y, x2..xm] and log Z_y, full tensor."""
    phi_v = _phi_values(phi)
    n, m, eta = params.n, params.m, params.eta
    _guard(n ** m)
    rho = params.marginal.weights
    c = cost_tensor(params.bundle.W, m, eps)
    logits = -c / eta
    alpha = phi_v / eta + np.log(rho)
    for j in range(1, m):
        shape = [1] * m
        shape[j] = n
        logits = logits + alpha.reshape(shape)
    flat = logits.reshape(n, -1)
    peak = flat.max(axis=1)
    q = np.exp(flat - peak[:, None])
    norms = q.sum(axis=1)
    q /= norms[:, None]
    return q.reshape((n,) * m), peak + np.log(norms)


def dense_objective(params: ProblemParams, phi, eps: float) -> float:
    phi_v = _phi_values(phi)
    _, log_z = _conditional_tensor(params, phi_v, eps)
    rho = params.marginal.weights
    return float(-(params.m - 1) * (phi_v @ rho) + params.eta * (rho @ log_z))


def dense_plan(params: ProblemParams, phi, eps: float) -> np.ndarray:
    """Gibbs coupling reconstructed from the reduced potential, full tensor."""
    q, _ = _conditional_tensor(params, phi, eps)
    rho = params.marginal.weights
    shape = [1] * params.m
    shape[0] = params.n
    return q * rho.reshape(shape)


def dense_gradient(params: ProblemParams, phi, eps: float) -> np.ndarray:
    plan = dense_plan(params, phi, eps)
    axes = tuple(a for a in range(params.m) if a != 1)
    model_marginal = plan.sum(axis=axes)
    return (params.m - 1) * (model_marginal - params.marginal.weights)


def dense_hessian(params: ProblemParams, phi, eps: float) -> np.ndarray:
    n, m, eta = params.n, params.m, params.eta
    rho = params.marginal.weights
    q, _ = _conditional_tensor(params, phi, eps)
    trailing = tuple(range(2, m))
    r = q.sum(axis=trailing) if trailing else q  # (N, N) one-coordinate laws
    pair = q.sum(axis=tuple(range(3, m))) if m > 3 else q
    marginal = rho @ r
    pair_avg = np.einsum("y,yij->ij", rho, pair)
    rank_one = np.einsum("y,yi,yj->ij", rho, r, r)
    h = np.diag(marginal) + (m - 2) * pair_avg - (m - 1) * rank_one
    return ((m - 1) / eta) * h


def dense_mixed(params: ProblemParams, phi, eps: float) -> np.ndarray:
    n, m, eta = params.n, params.m, params.eta
    rho = params.marginal.weights
    q, _ = _conditional_tensor(params, phi, eps)
    dcost = eps_cost_derivative_tensor(params.bundle.W, m)
    weighted = q * dcost
    trailing = tuple(range(2, m))
    r = q.sum(axis=trailing) if trailing else q
    bw = weighted.sum(axis=trailing) if trailing else weighted
    c_mean = weighted.reshape(n, -1).sum(axis=1)
    term = rho @ bw - (rho * c_mean) @ r
    return -((m - 1) / eta) * term


def dense_chain_stats(problem, stack, eps: float):
    """Full-tensor marginal/pair/eps sums for the chain-plus-closure cost.

    Returns the same payload as ``euler_chain.chain_contract`` (as a plain
    dict) computed by brute force over X^m.
    """
    from .costs import pairwise_distances

    n = problem.marginal.n
    m = problem.m
    _guard(n ** m)
    rho = problem.marginal.weights
    eta = problem.eta
    d2 = pairwise_distances(problem.marginal.grid.points) ** 2
    kin = problem.kinetic_scale

    cost = np.zeros((n,) * m)
    dcost = np.zeros((n,) * m)
    for i in range(m - 1):
        shape = [1] * m
        shape[i] = n
        shape[i + 1] = n
        edge = kin * d2.reshape(shape)
        if i == 0:
            cost = cost + edge
        else:
            cost = cost + eps * edge
            dcost = dcost + edge
    pen_shape = [1] * m
    pen_shape[0] = n
    pen_shape[m - 1] = n
    cost = cost + (problem.beta * d2[problem.final_map]).reshape(pen_shape)

    logits = -cost / eta
    values = np.asarray(stack.values if hasattr(stack, "values") else stack)
    for i in range(m):
        shape = [1] * m
        shape[i] = n
        logits = logits + ((values[i] / eta) + np.log(rho)).reshape(shape)
    peak = logits.max()
    gamma = np.exp(logits - peak) * np.exp(peak)  # plain Gibbs mass, small cases

    one = np.empty((m, n))
    for i in range(m):
        axes = tuple(a for a in range(m) if a != i)
        one[i] = gamma.sum(axis=axes)
    pairs = {}
    for i in range(m):
        for j in range(i + 1, m):
            axes = tuple(a for a in range(m) if a not in (i, j))
            pairs[(i, j)] = gamma.sum(axis=axes)
    weighted = gamma * dcost
    eps_marg = np.empty((m, n))
    for i in range(m):
        axes = tuple(a for a in range(m) if a != i)
        eps_marg[i] = weighted.sum(axis=axes)
    return {
        "mass": float(gamma.sum()),
        "one_marginals": one,
        "pair_marginals": pairs,
        "eps_marginals": eps_marg,
        "eps_total": float(weighted.sum()),
        "plan": gamma,
    }
