"""Relaxed incompressible-flow problem: m distinct potentials on a chain.

The cost couples consecutive time slices by a kinetic term, scales the inner
chain edges by the interpolation weight, and closes the loop with a penalty
tying the final position to a prescribed rearrangement of the initial one:

    cost = kin*|x1 - x0|^2 + eps * kin * sum_{i=1}^{m-2} |x_{i+1} - x_i|^2
           + beta*|grid[F(x0)] - x_{m-1}|^2,      kin = m^2 / (2 T^2)

Conditioned on the first coordinate the Gibbs measure is a chain, so every
sum the dual derivatives need (partition values, one- and two-fold marginals,
derivative-weighted sums) comes from forward/backward message passing plus
transfer-matrix products, all in the log domain.  Nothing here enumerates
X^m.

The dual is invariant under adding constants summing to zero across the m
potentials; the gauge is fixed by anchoring potentials 1..m-1, which leaves
the reduced Hessian positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .costs import DiscreteMarginal, Grid, pairwise_distances
from .errors import (
    MaxIterationsError,
    MMOTError,
    NotSPDError,
    SizeGuardError,
)
from .ode import TABLEAUS, resolve_steps, run_fixed_steps
from .two_marginal import sinkhorn_two_marginal

_CHUNK_BUDGET = 2_000_000
_ACCUM_BUDGET = 500_000_000


def final_map(grid: Grid, spec) -> np.ndarray:
    """Resolve a final-configuration map to a grid-index permutation.

    ``spec`` is "reflect" (x -> 1-x), "shift_mod" (x -> (x+1/2) mod 1, needs a
    periodic grid), or an explicit index list.
    """
    coords = grid.coords()
    if isinstance(spec, str):
        if spec == "reflect":
            target = 1.0 - coords
        elif spec == "shift_mod":
            target = np.mod(coords + 0.5, 1.0)
        else:
            raise MMOTError(f"unknown final map {spec!r}")
        idx = np.abs(target[:, None] - coords[None, :]).argmin(axis=1)
        if np.max(np.abs(coords[idx] - target)) > 1e-9:
            raise MMOTError(f"final map {spec!r} does not land on the grid")
    else:
        idx = np.asarray(spec, dtype=int)
    if sorted(idx.tolist()) != list(range(grid.n)):
        raise MMOTError("final map is not a permutation of the grid indices")
    return idx


@dataclass(frozen=True)
class EulerProblem:
    marginal: DiscreteMarginal
    m: int
    final_map: np.ndarray
    beta: float
    T: float = 1.0
    eta: float = 0.05
    anchor: int = 0

    def __post_init__(self):
        if self.m < 3:
            raise MMOTError("need at least 3 time marginals")
        if self.beta <= 0.0:
            raise MMOTError("penalization weight must be positive")
        if self.eta <= 0.0 or self.T <= 0.0:
            raise MMOTError("eta and T must be positive")
        fm = np.asarray(self.final_map, dtype=int)
        if sorted(fm.tolist()) != list(range(self.marginal.n)):
            raise MMOTError("final map is not a permutation of the grid indices")
        object.__setattr__(self, "final_map", fm)
        if self.m * self.m * self.marginal.n ** 2 > _ACCUM_BUDGET:
            raise SizeGuardError(
                self.m * self.m * self.marginal.n ** 2, _ACCUM_BUDGET,
                "pair-marginal storage",
            )

    @property
    def n(self) -> int:
        return self.marginal.n

    @property
    def kinetic_scale(self) -> float:
        return self.m ** 2 / (2.0 * self.T ** 2)


@dataclass(frozen=True)
class PotentialStack:
    """Potentials phi^0..phi^{m-1}; rows 1..m-1 anchored, row 0 free."""

    values: np.ndarray  # (m, N)
    anchor: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise MMOTError("potential stack must be an (m, N) array")
        if np.any(v[1:, self.anchor] != 0.0):
            raise MMOTError("rows 1..m-1 of the stack must be anchored")
        object.__setattr__(self, "values", v)

    @classmethod
    def anchored(cls, raw, anchor: int = 0) -> "PotentialStack":
        """Apply the zero-sum gauge shift that anchors rows 1..m-1."""
        v = np.asarray(raw, dtype=float).copy()
        shifts = v[1:, anchor].copy()
        v[1:] -= shifts[:, None]
        v[1:, anchor] = 0.0
        v[0] += shifts.sum()
        return cls(v, anchor)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass
class ChainStats:
    """Gibbs-mass sums of the chain-plus-closure measure.

    All quantities are plain (unnormalized) masses of the Gibbs measure; at a
    dual optimum the total mass is 1 and one_marginals[i] equals rho.
    """

    log_weights: np.ndarray                       # (N,) log mass per x0 value
    mass: float
    one_marginals: np.ndarray                     # (m, N)
    pair_marginals: Optional[Dict[tuple, np.ndarray]]  # (i, j) -> (N, N)
    eps_marginals: Optional[np.ndarray]           # (m, N) d_eps-cost weighted
    eps_total: Optional[float]


def _stack_values(stack) -> np.ndarray:
    if isinstance(stack, PotentialStack):
        return stack.values
    return np.asarray(stack, dtype=float)


def chain_contract(
    problem: EulerProblem,
    stack,
    eps: float,
    need_pairs: bool = True,
    need_eps: bool = True,
) -> ChainStats:
    """Message-passing evaluation of every Gibbs sum the dual system needs.

    The first coordinate is conditioned on (outer loop, vectorized in
    chunks); the rest is a chain, handled by forward/backward messages.
    Two-fold marginals between non-adjacent nodes use transfer-matrix
    products, which are independent of the conditioning value because all
    interior node weights are.  Derivative-weighted sums propagate a second
    message carrying the accumulated inner-edge cost.  O(m^2 N^3) work total.
    """
    n, m, eta = problem.n, problem.m, problem.eta
    rho = problem.marginal.weights
    values = _stack_values(stack)
    d2 = pairwise_distances(problem.marginal.grid.points) ** 2
    kin = problem.kinetic_scale

    alphas = values / eta + np.log(rho)[None, :]
    lk = -(eps * kin / eta) * d2
    with np.errstate(divide="ignore"):
        lg = np.log(kin * d2)  # log of one inner edge's d_eps cost, -inf diagonal

    # transfer matrices between non-adjacent inner nodes, shared across x0
    # (interior node weights do not depend on the conditioning value)
    transfer: Dict[tuple, np.ndarray] = {}
    if need_pairs:
        for i in range(1, m - 1):
            acc = lk
            for j in range(i + 2, m):
                acc = logsumexp(
                    acc[:, :, None] + alphas[j - 1][None, :, None] + lk[None, :, :],
                    axis=1,
                )
                transfer[(i, j)] = acc

    log_weights = np.empty(n)
    one = np.zeros((m, n))
    pairs = (
        {(i, j): np.zeros((n, n)) for i in range(m) for j in range(i + 1, m)}
        if need_pairs
        else None
    )
    eps_marg = np.zeros((m, n)) if need_eps else None
    eps_total = 0.0

    chunk = max(1, min(n, _CHUNK_BUDGET // (n * n)))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        c = hi - lo
        # node weights of the conditional chain, (c, N) each; the first node
        # carries the always-on kinetic edge to x0, the last one the penalty
        node = [None] * m
        node[1] = alphas[1][None, :] - (kin / eta) * d2[lo:hi]
        for i in range(2, m - 1):
            node[i] = np.broadcast_to(alphas[i], (c, n))
        node[m - 1] = (
            alphas[m - 1][None, :]
            - (problem.beta / eta) * d2[problem.final_map[lo:hi]]
        )

        lf = [None] * m
        lb = [None] * m
        lf[1] = node[1]
        for i in range(1, m - 1):
            lf[i + 1] = (
                logsumexp(lf[i][:, :, None] + lk[None, :, :], axis=1) + node[i + 1]
            )
        lb[m - 1] = np.zeros((c, n))
        for i in range(m - 2, 0, -1):
            lb[i] = logsumexp(
                lk[None, :, :] + (node[i + 1] + lb[i + 1])[:, None, :], axis=2
            )
        log_z = logsumexp(lf[m - 1], axis=1)
        w = np.exp(alphas[0][lo:hi] + log_z)
        log_weights[lo:hi] = alphas[0][lo:hi] + log_z

        one[0, lo:hi] = w
        cond = {}
        for i in range(1, m):
            cond[i] = np.exp(lf[i] + lb[i] - log_z[:, None])
            one[i] += w @ cond[i]

        if need_pairs:
            for i in range(1, m):
                pairs[(0, i)][lo:hi] = w[:, None] * cond[i]
            for i in range(1, m - 1):
                adj = np.exp(
                    lf[i][:, :, None]
                    + lk[None, :, :]
                    + (node[i + 1] + lb[i + 1])[:, None, :]
                    - log_z[:, None, None]
                )
                pairs[(i, i + 1)] += np.einsum("v,vxy->xy", w, adj)
                for j in range(i + 2, m):
                    block = np.exp(
                        lf[i][:, :, None]
                        + transfer[(i, j)][None, :, :]
                        + (node[j] + lb[j])[:, None, :]
                        - log_z[:, None, None]
                    )
                    pairs[(i, j)] += np.einsum("v,vxy->xy", w, block)

        if need_eps:
            minf = np.full((c, n), -np.inf)
            lf_w = [None] * m
            lb_w = [None] * m
            lf_w[1] = minf
            for i in range(1, m - 1):
                lf_w[i + 1] = (
                    logsumexp(
                        np.logaddexp(
                            lf_w[i][:, :, None], lf[i][:, :, None] + lg[None, :, :]
                        )
                        + lk[None, :, :],
                        axis=1,
                    )
                    + node[i + 1]
                )
            lb_w[m - 1] = minf
            for i in range(m - 2, 0, -1):
                lb_w[i] = logsumexp(
                    lk[None, :, :]
                    + node[i + 1][:, None, :]
                    + np.logaddexp(
                        lb_w[i + 1][:, None, :], lg[None, :, :] + lb[i + 1][:, None, :]
                    ),
                    axis=2,
                )
            mean_w = np.exp(logsumexp(lf_w[m - 1], axis=1) - log_z)
            eps_marg[0, lo:hi] = w * mean_w
            eps_total += float(w @ mean_w)
            for i in range(1, m):
                pinned = np.logaddexp(lf_w[i] + lb[i], lf[i] + lb_w[i])
                eps_marg[i] += w @ np.exp(pinned - log_z[:, None])

    return ChainStats(
        log_weights=log_weights,
        mass=float(np.exp(logsumexp(log_weights))),
        one_marginals=one,
        pair_marginals=pairs,
        eps_marginals=eps_marg,
        eps_total=eps_total if need_eps else None,
    )


def chain_objective(problem: EulerProblem, stack, stats: ChainStats) -> float:
    rho = problem.marginal.weights
    linear = float(np.sum(_stack_values(stack) @ rho))
    return -linear + problem.eta * stats.mass


def chain_gradient(stats: ChainStats, rho: np.ndarray) -> np.ndarray:
    """Per-block marginal mismatch, flattened to (m*N,)."""
    return (stats.one_marginals - rho[None, :]).reshape(-1)


def chain_hessian(problem: EulerProblem, stats: ChainStats) -> np.ndarray:
    n, m = problem.n, problem.m
    h = np.zeros((m * n, m * n))
    for i in range(m):
        sl = slice(i * n, (i + 1) * n)
        h[sl, sl] = np.diag(stats.one_marginals[i])
    for (i, j), block in stats.pair_marginals.items():
        h[i * n:(i + 1) * n, j * n:(j + 1) * n] = block
        h[j * n:(j + 1) * n, i * n:(i + 1) * n] = block.T
    return h / problem.eta


def chain_mixed(problem: EulerProblem, stats: ChainStats) -> np.ndarray:
    return -(stats.eps_marginals / problem.eta).reshape(-1)


def _kept_indices(problem: EulerProblem) -> np.ndarray:
    removed = [i * problem.n + problem.anchor for i in range(1, problem.m)]
    return np.setdiff1d(np.arange(problem.m * problem.n), removed)


def chain_rhs(problem: EulerProblem, stack, eps: float):
    """Reduced SPD solve for the stacked system; returns (m, N) direction."""
    stats = chain_contract(problem, stack, eps)
    hess = chain_hessian(problem, stats)
    mixed = chain_mixed(problem, stats)
    keep = _kept_indices(problem)
    h_red = hess[np.ix_(keep, keep)]
    try:
        factor = scipy.linalg.cho_factor(h_red, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotSPDError(eps, str(exc)) from exc
    z = np.zeros(problem.m * problem.n)
    z[keep] = scipy.linalg.cho_solve(factor, -mixed[keep], check_finite=False)
    grad_norm = float(np.max(np.abs(chain_gradient(stats, problem.marginal.weights))))
    return z.reshape(problem.m, problem.n), grad_norm


def initial_stack(problem: EulerProblem, tol: float = 1e-12,
                  max_iter: int = 500_000) -> PotentialStack:
    """Exact eps=0 dual: two-marginal solves on the two surviving edges.

    At eps=0 only the (0,1) kinetic edge and the (0, m-1) penalty edge carry
    cost, a star centered at coordinate 0; its dual potentials are the two
    pair potentials with the center receiving the sum of the psi's, and zero
    on the free middle coordinates.
    """
    d2 = pairwise_distances(problem.marginal.grid.points) ** 2
    kinetic_cost = problem.kinetic_scale * d2
    penalty_cost = problem.beta * d2[problem.final_map]
    first = sinkhorn_two_marginal(
        problem.marginal, kinetic_cost, problem.eta, tol=tol,
        max_iter=max_iter, anchor=problem.anchor,
    )
    last = sinkhorn_two_marginal(
        problem.marginal, penalty_cost, problem.eta, tol=tol,
        max_iter=max_iter, anchor=problem.anchor,
    )
    values = np.zeros((problem.m, problem.n))
    values[0] = first.psi + last.psi
    values[1] = first.phi
    values[problem.m - 1] = last.phi
    return PotentialStack.anchored(values, problem.anchor)


@dataclass
class ChainSinkhornReport:
    sweeps: int
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list)


def chain_sinkhorn(
    problem: EulerProblem,
    eps: float,
    tol: float = 1e-9,
    max_sweeps: int = 100_000,
    stack_init: PotentialStack | None = None,
) -> tuple[PotentialStack, ChainSinkhornReport]:
    """Coordinate-wise Sinkhorn on the m potentials (Gauss-Seidel sweeps).

    Each block update matches that block's marginal exactly given the others;
    the sweep-start residual is the sup-norm marginal violation of the
    current stack.
    """
    rho = problem.marginal.weights
    values = (
        initial_stack(problem).values.copy()
        if stack_init is None
        else np.asarray(stack_init.values, dtype=float).copy()
    )
    history = []
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        start_residual = None
        for i in range(problem.m):
            stats = chain_contract(problem, values, eps,
                                   need_pairs=False, need_eps=False)
            if i == 0:
                start_residual = float(
                    np.max(np.abs(stats.one_marginals - rho[None, :]))
                )
                history.append(start_residual)
                if start_residual <= tol:
                    stack = PotentialStack.anchored(values, problem.anchor)
                    return stack, ChainSinkhornReport(
                        sweeps=sweep - 1,
                        residual=start_residual,
                        converged=True,
                        residual_history=history,
                    )
            values[i] -= problem.eta * np.log(stats.one_marginals[i] / rho)
        residual = start_residual
    raise MaxIterationsError(max_sweeps, residual, "chain Sinkhorn")


@dataclass
class ChainTrajectory:
    scheme: str
    steps: int
    epsilons: np.ndarray
    stacks: np.ndarray       # (K+1, m, N)
    grad_norms: np.ndarray   # (K+1,)
    n_rhs_evals: int

    @property
    def h(self) -> float:
        return 1.0 / self.steps

    def final(self, anchor: int = 0) -> PotentialStack:
        return PotentialStack.anchored(self.stacks[-1], anchor)


def integrate_chain(
    problem: EulerProblem,
    stack0: PotentialStack | None = None,
    scheme: str = "rk5",
    h=None,
) -> ChainTrajectory:
    """Continuation of the stacked dual system from eps=0 to eps=1."""
    if scheme not in TABLEAUS:
        raise MMOTError(f"unknown scheme {scheme!r}")
    steps = resolve_steps(h if h is not None else "1/100")
    if stack0 is None:
        stack0 = initial_stack(problem)
    keep = _kept_indices(problem)
    m, n = problem.m, problem.n

    node_grads: list[float] = []
    pending: list[float] = []
    evals = [0]

    def unflatten(y_red):
        full = np.zeros(m * n)
        full[keep] = y_red
        return full.reshape(m, n)

    def f(y_red, t):
        z, grad_norm = chain_rhs(problem, unflatten(y_red), t)
        evals[0] += 1
        pending.append(grad_norm)
        return z.reshape(-1)[keep]

    def on_step(k, y):
        node_grads.append(pending[0])
        pending.clear()

    states = run_fixed_steps(
        f, stack0.values.reshape(-1)[keep], TABLEAUS[scheme], steps,
        on_step=on_step,
    )
    stacks = np.array([unflatten(s) for s in states])
    final_stats = chain_contract(problem, stacks[-1], 1.0,
                                 need_pairs=False, need_eps=False)
    final_grad = float(
        np.max(np.abs(final_stats.one_marginals - problem.marginal.weights[None, :]))
    )
    return ChainTrajectory(
        scheme=scheme,
        steps=steps,
        epsilons=np.arange(steps + 1) / steps,
        stacks=stacks,
        grad_norms=np.array(node_grads + [final_grad]),
        n_rhs_evals=evals[0],
    )
