"""Reduced dual objective of the symmetric regularized problem.

With all m marginals equal and the cost symmetric in coordinates 2..m, the
dual potentials of coordinates 2..m coincide and the first-coordinate
potential can be eliminated through its own optimality condition.  What is
left is a convex function of a single vector ``phi``:

    F(phi, eps) = -(m-1) <phi, rho> + eta * sum_z rho_z * log Z_z(phi, eps)

    Z_z = sum over tuples (x2..xm) of exp((phi_{x2}+...+phi_{xm}
          - cost_eps(z, x2..xm)) / eta) * rho_{x2} * ... * rho_{xm}

Everything here is computed from one chunked pass over the tuple space: for
each center point z, the softmax over tuples yields the conditional
distribution of (x2..xm) given x1 = z, and every derivative of F is an
aggregate of per-center moments of that distribution.  All exponentials are
max-subtracted, so small eta (the experiments go down to 0.002) cannot
overflow.

F is invariant under constant shifts of phi, hence the gradient sums to zero
and the Hessian annihilates the constant vector; uniqueness is restored by
anchoring one component to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .costs import CostBundle, DiscreteMarginal, inner_pair_cost_tensor
from .errors import MMOTError, SizeGuardError

# elements per temporary chunk array in the tuple-space sweep
_CHUNK_BUDGET = 2_000_000


@dataclass(frozen=True)
class Potential:
    """Dual vector with one component pinned to zero."""

    values: np.ndarray
    anchor: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise MMOTError("potential must be a vector")
        if v[self.anchor] != 0.0:
            raise MMOTError(
                f"potential not anchored: values[{self.anchor}] = {v[self.anchor]!r}"
            )
        object.__setattr__(self, "values", v)

    @classmethod
    def anchored(cls, values, anchor: int = 0) -> "Potential":
        """Shift an arbitrary vector so the anchor component is exactly zero."""
        v = np.asarray(values, dtype=float).copy()
        v -= v[anchor]
        v[anchor] = 0.0
        return cls(v, anchor)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ProblemParams:
    """Instance data for the symmetric equal-marginal problem."""

    eta: float
    m: int
    marginal: DiscreteMarginal
    bundle: CostBundle
    anchor: int = 0
    enum_budget: int = 10_000_000

    def __post_init__(self):
        if self.eta <= 0.0:
            raise MMOTError(f"eta must be positive, got {self.eta}")
        if self.m < 3:
            raise MMOTError(f"need m >= 3 marginals, got {self.m}")
        if self.bundle.m != self.m:
            raise MMOTError(
                f"cost bundle built for m={self.bundle.m}, problem has m={self.m}"
            )
        if self.bundle.n != self.marginal.n:
            raise MMOTError("cost matrix size does not match marginal size")
        if not 0 <= self.anchor < self.marginal.n:
            raise MMOTError(f"anchor index {self.anchor} out of range")

    @property
    def n(self) -> int:
        return self.marginal.n

    def zero_potential(self) -> Potential:
        return Potential(np.zeros(self.n), self.anchor)


PhiLike = Union[Potential, np.ndarray]


def _phi_values(phi: PhiLike) -> np.ndarray:
    if isinstance(phi, Potential):
        return phi.values
    return np.asarray(phi, dtype=float)


@dataclass
class GibbsStats:
    """Per-center sufficient statistics of the Gibbs conditional.

    cond_marginal[y, z] is the probability that a designated coordinate among
    2..m equals z given x1 = y; marginal is its rho-average, i.e. the model
    marginal whose mismatch with rho drives the gradient.
    """

    log_partition: np.ndarray            # (N,)  log Z_y
    cond_marginal: np.ndarray            # (N, N)
    marginal: np.ndarray                 # (N,)
    pair_marginal: Optional[np.ndarray]  # (N, N)  rho-average of two-coordinate laws
    eps_marginal: Optional[np.ndarray]   # (N,)  rho-avg of E[d_eps cost; coord = z]
    eps_cross: Optional[np.ndarray]      # (N,)  rho-avg of E[d_eps cost] * cond law
    cond_eps_mean: Optional[np.ndarray]  # (N,)  E[d_eps cost | x1 = y]


@dataclass
class DualDerivatives:
    """Gradient, Hessian and mixed eps-derivative of F at one point."""

    gradient: np.ndarray
    hessian: Optional[np.ndarray]
    mixed: Optional[np.ndarray]
    objective: float
    stats: GibbsStats


def gibbs_stats(
    params: ProblemParams,
    phi: PhiLike,
    eps: float,
    need_pair: bool = False,
    need_eps: bool = False,
) -> GibbsStats:
    """One pass over the tuple space X^(m-1), chunked over center points."""
    phi_v = _phi_values(phi)
    n, m, eta = params.n, params.m, params.eta
    rho = params.marginal.weights
    W = params.bundle.W
    k = m - 1
    tuple_count = n ** k
    if tuple_count > params.enum_budget:
        raise SizeGuardError(tuple_count, params.enum_budget, "tuple space X^(m-1)")

    alpha = phi_v / eta + np.log(rho)
    base = np.zeros((n,) * k)
    for axis in range(k):
        shape = [1] * k
        shape[axis] = n
        base = base + alpha.reshape(shape)
    ip = inner_pair_cost_tensor(W, k) if (k >= 2) else np.zeros((n,) * k)
    base = base - (eps / eta) * ip
    star = W / eta  # star[y, x]: exponent contribution of edge (x1=y, x)

    log_partition = np.empty(n)
    cond_marginal = np.empty((n, n))
    pair_sum = np.zeros((n, n)) if need_pair else None
    eps_marg = np.zeros(n) if need_eps else None
    eps_cross = np.zeros(n) if need_eps else None
    cond_eps = np.empty(n) if need_eps else None

    chunk = max(1, min(n, _CHUNK_BUDGET // max(tuple_count, 1)))
    base_flat = base.reshape(-1)
    ip_flat = ip.reshape(-1)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        rows = star[lo:hi]  # (C, N)
        star_sum = np.zeros((hi - lo,) + (n,) * k)
        for axis in range(k):
            shape = [hi - lo] + [1] * k
            shape[1 + axis] = n
            star_sum = star_sum + rows.reshape(shape)
        logits = base_flat[None, :] - star_sum.reshape(hi - lo, -1)
        peak = logits.max(axis=1)
        q = np.exp(logits - peak[:, None])
        norms = q.sum(axis=1)
        log_partition[lo:hi] = peak + np.log(norms)
        q /= norms[:, None]
        qt = q.reshape((hi - lo, n, -1))
        r = qt.sum(axis=2)  # (C, N) conditional law of one designated coordinate
        cond_marginal[lo:hi] = r
        if need_pair:
            pt = q.reshape((hi - lo, n, n, -1)).sum(axis=3)
            pair_sum += np.einsum("c,cij->ij", rho[lo:hi], pt)
        if need_eps:
            qip = q * ip_flat[None, :]
            bw = qip.reshape((hi - lo, n, -1)).sum(axis=2)
            c_mean = qip.sum(axis=1)
            eps_marg += rho[lo:hi] @ bw
            eps_cross += (rho[lo:hi] * c_mean) @ r
            cond_eps[lo:hi] = c_mean

    return GibbsStats(
        log_partition=log_partition,
        cond_marginal=cond_marginal,
        marginal=cond_marginal.T @ rho,
        pair_marginal=pair_sum,
        eps_marginal=eps_marg,
        eps_cross=eps_cross,
        cond_eps_mean=cond_eps,
    )


def _objective_from_stats(params: ProblemParams, phi_v: np.ndarray,
                          stats: GibbsStats) -> float:
    rho = params.marginal.weights
    return float(
        -(params.m - 1) * (phi_v @ rho) + params.eta * (rho @ stats.log_partition)
    )


def _gradient_from_stats(params: ProblemParams, stats: GibbsStats) -> np.ndarray:
    return (params.m - 1) * (stats.marginal - params.marginal.weights)


def _hessian_from_stats(params: ProblemParams, stats: GibbsStats) -> np.ndarray:
    m, eta = params.m, params.eta
    rho = params.marginal.weights
    r = stats.cond_marginal
    rank_one = np.einsum("y,yi,yj->ij", rho, r, r)
    h = np.diag(stats.marginal) + (m - 2) * stats.pair_marginal - (m - 1) * rank_one
    return ((m - 1) / eta) * h


def _mixed_from_stats(params: ProblemParams, stats: GibbsStats) -> np.ndarray:
    m, eta = params.m, params.eta
    return -((m - 1) / eta) * (stats.eps_marginal - stats.eps_cross)


def objective(params: ProblemParams, phi: PhiLike, eps: float) -> float:
    phi_v = _phi_values(phi)
    stats = gibbs_stats(params, phi_v, eps)
    return _objective_from_stats(params, phi_v, stats)


def gradient(params: ProblemParams, phi: PhiLike, eps: float) -> np.ndarray:
    stats = gibbs_stats(params, phi, eps)
    return _gradient_from_stats(params, stats)


def hessian(params: ProblemParams, phi: PhiLike, eps: float) -> np.ndarray:
    stats = gibbs_stats(params, phi, eps, need_pair=True)
    return _hessian_from_stats(params, stats)


def mixed_eps_gradient(params: ProblemParams, phi: PhiLike, eps: float) -> np.ndarray:
    stats = gibbs_stats(params, phi, eps, need_eps=True)
    return _mixed_from_stats(params, stats)


def derivatives(
    params: ProblemParams,
    phi: PhiLike,
    eps: float,
    need_hessian: bool = True,
    need_mixed: bool = True,
) -> DualDerivatives:
    """Objective, gradient and (optionally) Hessian/mixed in a single pass."""
    phi_v = _phi_values(phi)
    stats = gibbs_stats(params, phi_v, eps, need_pair=need_hessian,
                        need_eps=need_mixed)
    return DualDerivatives(
        gradient=_gradient_from_stats(params, stats),
        hessian=_hessian_from_stats(params, stats) if need_hessian else None,
        mixed=_mixed_from_stats(params, stats) if need_mixed else None,
        objective=_objective_from_stats(params, phi_v, stats),
        stats=stats,
    )


def reduced(matrix_or_vector: np.ndarray, anchor: int) -> np.ndarray:
    """Drop the anchored row (and column, for matrices)."""
    out = np.delete(matrix_or_vector, anchor, axis=0)
    if out.ndim == 2:
        out = np.delete(out, anchor, axis=1)
    return out


def embed_anchored(vec_red: np.ndarray, anchor: int) -> np.ndarray:
    """Insert a zero back at the anchored position."""
    return np.insert(vec_red, anchor, 0.0)
