"""Fixed-step explicit integration of the continuation ODE.

The tracked solution solves  H(phi, eps) dphi/deps = -g_eps(phi, eps)  where
H is the dual Hessian restricted to the anchored subspace (symmetric positive
definite along the trajectory) and g_eps the mixed eps-derivative of the dual
gradient.  Each right-hand-side evaluation assembles both and performs one
Cholesky solve; a factorization failure means the state left the validity
region and aborts the run.

Schemes: explicit Euler, Kutta's third-order, and the Dormand-Prince 5th and
8th order methods run with their higher-order weights at a fixed step.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import dual
from .dual import Potential, ProblemParams
from .errors import MMOTError, NotSPDError, TrajectoryBoundError

_F = Fraction


@dataclass(frozen=True)
class Tableau:
    name: str
    order: int
    c: tuple
    a: tuple  # strictly lower-triangular rows
    b: tuple

    def __post_init__(self):
        s = len(self.b)
        assert len(self.c) == s and len(self.a) == s
        assert abs(float(sum(self.b)) - 1.0) < 1e-13
        for i, row in enumerate(self.a):
            assert len(row) == i
            assert abs(float(sum(row, _F(0))) - float(self.c[i])) < 1e-12

    @property
    def stages(self) -> int:
        return len(self.b)


EULER = Tableau("euler", 1, (_F(0),), ((),), (_F(1),))

KUTTA3 = Tableau(
    "rk3",
    3,
    (_F(0), _F(1, 2), _F(1)),
    ((), (_F(1, 2),), (_F(-1), _F(2))),
    (_F(1, 6), _F(2, 3), _F(1, 6)),
)

DOPRI5 = Tableau(
    "rk5",
    5,
    (_F(0), _F(1, 5), _F(3, 10), _F(4, 5), _F(8, 9), _F(1)),
    (
        (),
        (_F(1, 5),),
        (_F(3, 40), _F(9, 40)),
        (_F(44, 45), _F(-56, 15), _F(32, 9)),
        (_F(19372, 6561), _F(-25360, 2187), _F(64448, 6561), _F(-212, 729)),
        (_F(9017, 3168), _F(-355, 33), _F(46732, 5247), _F(49, 176),
         _F(-5103, 18656)),
    ),
    (_F(35, 384), _F(0), _F(500, 1113), _F(125, 192), _F(-2187, 6784),
     _F(11, 84)),
)

# Prince & Dormand's 13-stage 8(7) pair, propagated with the 8th-order weights.
DOPRI8 = Tableau(
    "rk8",
    8,
    (
        _F(0), _F(1, 18), _F(1, 12), _F(1, 8), _F(5, 16), _F(3, 8),
        _F(59, 400), _F(93, 200), _F(5490023248, 9719169821), _F(13, 20),
        _F(1201146811, 1299019798), _F(1), _F(1),
    ),
    (
        (),
        (_F(1, 18),),
        (_F(1, 48), _F(1, 16)),
        (_F(1, 32), _F(0), _F(3, 32)),
        (_F(5, 16), _F(0), _F(-75, 64), _F(75, 64)),
        (_F(3, 80), _F(0), _F(0), _F(3, 16), _F(3, 20)),
        (_F(29443841, 614563906), _F(0), _F(0), _F(77736538, 692538347),
         _F(-28693883, 1125000000), _F(23124283, 1800000000)),
        (_F(16016141, 946692911), _F(0), _F(0), _F(61564180, 158732637),
         _F(22789713, 633445777), _F(545815736, 2771057229),
         _F(-180193667, 1043307555)),
        (_F(39632708, 573591083), _F(0), _F(0), _F(-433636366, 683701615),
         _F(-421739975, 2616292301), _F(100302831, 723423059),
         _F(790204164, 839813087), _F(800635310, 3783071287)),
        (_F(246121993, 1340847787), _F(0), _F(0),
         _F(-37695042795, 15268766246), _F(-309121744, 1061227803),
         _F(-12992083, 490766935), _F(6005943493, 2108947869),
         _F(393006217, 1396673457), _F(123872331, 1001029789)),
        (_F(-1028468189, 846180014), _F(0), _F(0), _F(8478235783, 508512852),
         _F(1311729495, 1432422823), _F(-10304129995, 1701304382),
         _F(-48777925059, 3047939560), _F(15336726248, 1032824649),
         _F(-45442868181, 3398467696), _F(3065993473, 597172653)),
        (_F(185892177, 718116043), _F(0), _F(0), _F(-3185094517, 667107341),
         _F(-477755414, 1098053517), _F(-703635378, 230739211),
         _F(5731566787, 1027545527), _F(5232866602, 850066563),
         _F(-4093664535, 808688257), _F(3962137247, 1805957418),
         _F(65686358, 487910083)),
        (_F(403863854, 491063109), _F(0), _F(0), _F(-5068492393, 434740067),
         _F(-411421997, 543043805), _F(652783627, 914296604),
         _F(11173962825, 925320556), _F(-13158990841, 6184727034),
         _F(3936647629, 1978049680), _F(-160528059, 685178525),
         _F(248638103, 1413531060), _F(0)),
    ),
    (
        _F(14005451, 335480064), _F(0), _F(0), _F(0), _F(0),
        _F(-59238493, 1068277825), _F(181606767, 758867731),
        _F(561292985, 797845732), _F(-1041891430, 1371343529),
        _F(760417239, 1151165299), _F(118820643, 751138087),
        _F(-528747749, 2220607170), _F(1, 4),
    ),
)

TABLEAUS = {t.name: t for t in (EULER, KUTTA3, DOPRI5, DOPRI8)}


def resolve_steps(h) -> int:
    """Number of steps for a step size whose reciprocal must be an integer."""
    if isinstance(h, str):
        h = Fraction(h)
    if isinstance(h, Fraction):
        if h.numerator != 1:
            raise MMOTError(f"1/h must be an integer, got h={h}")
        return h.denominator
    steps = round(1.0 / float(h))
    if steps < 1 or abs(steps * float(h) - 1.0) > 1e-9:
        raise MMOTError(f"1/h must be an integer, got h={h!r}")
    return steps


def run_fixed_steps(
    f: Callable[[np.ndarray, float], np.ndarray],
    y0: np.ndarray,
    tableau: Tableau,
    steps: int,
    on_step=None,
) -> list[np.ndarray]:
    """Generic explicit RK driver on [0, 1]; returns all node states."""
    a = [[float(v) for v in row] for row in tableau.a]
    b = [float(v) for v in tableau.b]
    c = [float(v) for v in tableau.c]
    h = 1.0 / steps
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    for k in range(steps):
        t = k / steps
        slopes = []
        for i in range(tableau.stages):
            yi = y
            if i:
                yi = y + h * sum(a[i][j] * slopes[j] for j in range(i) if a[i][j])
            slopes.append(f(yi, t + c[i] * h))
        y = y + h * sum(bi * ki for bi, ki in zip(b, slopes) if bi)
        out.append(y.copy())
        if on_step is not None:
            on_step(k + 1, y)
    return out


@dataclass
class RhsDiagnostics:
    grad_norm: float
    objective: float
    min_pivot: float  # smallest squared Cholesky diagonal, an eigenvalue proxy


def rhs(params: ProblemParams, phi, eps: float):
    """Solve the reduced SPD system for dphi/deps; anchor component stays 0."""
    der = dual.derivatives(params, phi, eps)
    h_red = dual.reduced(der.hessian, params.anchor)
    b_red = -dual.reduced(der.mixed, params.anchor)
    try:
        factor = scipy.linalg.cho_factor(h_red, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotSPDError(eps, str(exc)) from exc
    z = dual.embed_anchored(
        scipy.linalg.cho_solve(factor, b_red, check_finite=False), params.anchor
    )
    diag = RhsDiagnostics(
        grad_norm=float(np.max(np.abs(der.gradient))),
        objective=der.objective,
        min_pivot=float(np.min(np.diag(factor[0])) ** 2),
    )
    return z, diag


@dataclass
class Trajectory:
    scheme: str
    steps: int
    epsilons: np.ndarray      # (K+1,)
    phis: np.ndarray          # (K+1, N)
    grad_norms: np.ndarray    # (K+1,) dual-gradient sup norm at each node
    sup_norms: np.ndarray     # (K+1,) |phi|_inf
    min_pivots: np.ndarray    # (K+1,) smallest Cholesky pivot^2 seen at the node
    bound: float              # 4M a-priori bound on |phi|_inf
    n_rhs_evals: int

    @property
    def h(self) -> float:
        return 1.0 / self.steps

    def final(self, anchor: int = 0) -> Potential:
        return Potential(self.phis[-1], anchor)


def integrate(
    params: ProblemParams,
    phi0: Potential,
    scheme: str = "rk3",
    h=Fraction(1, 100),
    bound_slack: float = 0.1,
) -> Trajectory:
    """Integrate from eps=0 to eps=1, checking the a-priori potential bound.

    The bound |phi|_inf <= 4M holds for the exact solution; integration error
    gets an extra slack of ``bound_slack * M`` before the run aborts.
    """
    if scheme not in TABLEAUS:
        raise MMOTError(f"unknown scheme {scheme!r}, expected one of {sorted(TABLEAUS)}")
    tableau = TABLEAUS[scheme]
    steps = resolve_steps(h)
    bound = 4.0 * params.bundle.sup_bound
    abort_at = bound + bound_slack * params.bundle.sup_bound

    node_diags: list[RhsDiagnostics] = []
    evals = [0]
    pending: list[RhsDiagnostics] = []

    def f(y, t):
        z, diag = rhs(params, y, t)
        evals[0] += 1
        pending.append(diag)
        return z

    def on_step(k, y):
        # diagnostics of the node itself come from the first stage (c[0] = 0)
        node_diags.append(pending[0])
        pending.clear()
        sup = float(np.max(np.abs(y)))
        if sup > abort_at:
            raise TrajectoryBoundError(k / steps, sup, abort_at)

    states = run_fixed_steps(f, phi0.values, tableau, steps, on_step=on_step)

    phis = np.array(states)
    final_grad = dual.gradient(params, phis[-1], 1.0)
    grad_norms = np.array(
        [d.grad_norm for d in node_diags] + [float(np.max(np.abs(final_grad)))]
    )
    min_pivots = np.array([d.min_pivot for d in node_diags] + [np.nan])
    return Trajectory(
        scheme=scheme,
        steps=steps,
        epsilons=np.arange(steps + 1) / steps,
        phis=phis,
        grad_norms=grad_norms,
        sup_norms=np.max(np.abs(phis), axis=1),
        min_pivots=min_pivots,
        bound=bound,
        n_rhs_evals=evals[0],
    )
