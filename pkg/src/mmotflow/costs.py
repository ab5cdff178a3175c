"""Grids, marginals and pairwise interaction costs.

The multi-marginal cost used throughout is built from a single symmetric
pairwise matrix ``W`` and an interpolation weight ``eps``:

    cost(x1, ..., xm) = sum_{i>=2} W[x1, xi]  +  eps * sum_{2<=i<j} W[xi, xj]

At ``eps = 0`` only the interactions with the first coordinate survive (a
star-shaped cost, solvable through two-marginal problems); at ``eps = 1`` the
full symmetric pairwise cost is recovered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MMOTError

COST_KINDS = ("log", "neg_harmonic", "coulomb_truncated", "squared_distance")


@dataclass(frozen=True)
class Grid:
    """Finite set of support points in R^d (d=1 in the CLI)."""

    points: np.ndarray  # shape (N,) or (N, d)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise MMOTError("grid needs at least 2 points, shaped (N,) or (N, d)")
        object.__setattr__(self, "points", pts)
        d = pairwise_distances(pts)
        if np.any(d[~np.eye(len(pts), dtype=bool)] == 0.0):
            raise MMOTError("grid points must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def coords(self) -> np.ndarray:
        """1-d coordinate view (only meaningful for d=1 grids)."""
        return self.points[:, 0]


def uniform_grid(n: int, domain=(0.0, 1.0), periodic: bool = False) -> Grid:
    """Equispaced grid on an interval; ``periodic`` drops the right endpoint."""
    a, b = float(domain[0]), float(domain[1])
    if not b > a:
        raise MMOTError(f"empty domain [{a}, {b}]")
    pts = np.linspace(a, b, n, endpoint=not periodic)
    return Grid(pts)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class DiscreteMarginal:
    """Probability weights on a grid; all weights strictly positive."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.grid.n,):
            raise MMOTError(
                f"weights shape {w.shape} does not match grid size {self.grid.n}"
            )
        if np.any(w <= 0.0):
            raise MMOTError("marginal weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise MMOTError(f"marginal weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.grid.n


def uniform_marginal(grid: Grid) -> DiscreteMarginal:
    return DiscreteMarginal(grid, np.full(grid.n, 1.0 / grid.n))


@dataclass(frozen=True)
class CostBundle:
    """Pairwise matrix plus the data needed to evaluate the interpolated cost.

    ``sup_bound`` is a valid upper bound on |cost| for every eps in [0, 1]:
    the cost is affine in eps, so bounding both endpoints suffices, and each
    endpoint is bounded by the number of active pairs times max|W|.
    """

    kind: str
    params: dict
    W: np.ndarray
    m: int
    sup_bound: float = field(init=False)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise MMOTError("cost matrix must be square")
        if not np.all(np.isfinite(W)):
            raise MMOTError(f"cost matrix has non-finite entries (kind={self.kind})")
        if not np.array_equal(W, W.T):
            raise MMOTError("cost matrix is not symmetric")
        if self.m < 2:
            raise MMOTError("need at least 2 marginals")
        object.__setattr__(self, "W", W)
        m = self.m
        n_pairs = (m - 1) + (m - 1) * (m - 2) / 2.0
        object.__setattr__(self, "sup_bound", n_pairs * float(np.max(np.abs(W))))

    @property
    def n(self) -> int:
        return self.W.shape[0]


def build_cost_matrix(grid: Grid, kind: str, m: int, **params) -> CostBundle:
    """Evaluate the pairwise interaction on a grid.

    Supported kinds (d = |x - y|):
      log               -log(a + d), a > 0 (default 0.1)
      neg_harmonic      -d^2
      coulomb_truncated min(1/d, cap), cap > 0 (default 10 / min spacing)
      squared_distance  d^2
    """
    d = pairwise_distances(grid.points)
    if kind == "log":
        a = float(params.pop("a", 0.1))
        if a <= 0.0:
            raise MMOTError(f"log cost offset must be positive, got {a}")
        W = -np.log(a + d)
    elif kind == "neg_harmonic":
        W = -(d ** 2)
    elif kind == "coulomb_truncated":
        off = d[~np.eye(grid.n, dtype=bool)]
        default_cap = 10.0 / float(off.min())
        cap = float(params.pop("cap", default_cap))
        if cap <= 0.0:
            raise MMOTError(f"coulomb truncation cap must be positive, got {cap}")
        with np.errstate(divide="ignore"):
            W = np.minimum(1.0 / d, cap)
        params["cap"] = cap
    elif kind == "squared_distance":
        W = d ** 2
    else:
        raise MMOTError(f"unknown cost kind {kind!r}, expected one of {COST_KINDS}")
    if params and kind != "coulomb_truncated":
        known = {"log": {"a"}}.get(kind, set())
        extra = set(params) - known
        if extra:
            raise MMOTError(f"unused cost parameters for kind {kind!r}: {sorted(extra)}")
    saved = {"a": a} if kind == "log" else dict(params)
    return CostBundle(kind=kind, params=saved, W=W, m=m)


def epsilon_cost(bundle: CostBundle, indices, eps: float):
    """Interpolated cost of one index tuple and its derivative in eps.

    Returns ``(value, d_eps)`` where ``d_eps`` is the eps-independent sum of
    interactions among coordinates 2..m.
    """
    idx = tuple(int(i) for i in indices)
    if len(idx) != bundle.m:
        raise MMOTError(f"expected {bundle.m} indices, got {len(idx)}")
    W = bundle.W
    first = idx[0]
    star = sum(W[first, j] for j in idx[1:])
    inner = 0.0
    for a in range(1, len(idx)):
        for b in range(a + 1, len(idx)):
            inner += W[idx[a], idx[b]]
    return star + eps * inner, inner


def inner_pair_cost_tensor(W: np.ndarray, k: int) -> np.ndarray:
    """Sum of W over all unordered pairs of k coordinates, as a (N,)*k tensor."""
    n = W.shape[0]
    out = np.zeros((n,) * k)
    for a in range(k):
        for b in range(a + 1, k):
            shape = [1] * k
            shape[a] = n
            shape[b] = n
            out = out + W.reshape(shape)
    return out
