"""Multi-marginal entropic optimal transport by continuation in the cost
interpolation parameter, with Sinkhorn and gradient-descent baselines."""

from .costs import (
    CostBundle,
    DiscreteMarginal,
    Grid,
    build_cost_matrix,
    epsilon_cost,
    uniform_grid,
    uniform_marginal,
)
from .coupling import (
    CouplingView,
    build_coupling_view,
    primal_value,
    reconstruct_full,
    reconstruct_pair_marginal,
    support_mask,
)
from .dual import (
    DualDerivatives,
    Potential,
    ProblemParams,
    derivatives,
    gradient,
    hessian,
    mixed_eps_gradient,
    objective,
)
from .errors import (
    ConfigError,
    LineSearchStallError,
    MaxIterationsError,
    MMOTError,
    NegativeEntryError,
    NotSPDError,
    SizeGuardError,
    TrajectoryBoundError,
)
from .euler_chain import (
    ChainStats,
    ChainTrajectory,
    EulerProblem,
    PotentialStack,
    chain_contract,
    chain_sinkhorn,
    final_map,
    initial_stack,
    integrate_chain,
)
from .ode import Trajectory, integrate, rhs
from .refsolve import minimize_backtracking
from .sinkhorn_mm import solve_symmetric_mm
from .two_marginal import (
    TwoMarginalSolution,
    product_plan,
    sinkhorn_two_marginal,
    star_center_potential,
)

__version__ = "0.1.0"

__all__ = [
    "CostBundle",
    "DiscreteMarginal",
    "Grid",
    "build_cost_matrix",
    "epsilon_cost",
    "uniform_grid",
    "uniform_marginal",
    "CouplingView",
    "build_coupling_view",
    "primal_value",
    "reconstruct_full",
    "reconstruct_pair_marginal",
    "support_mask",
    "DualDerivatives",
    "Potential",
    "ProblemParams",
    "derivatives",
    "gradient",
    "hessian",
    "mixed_eps_gradient",
    "objective",
    "ConfigError",
    "LineSearchStallError",
    "MaxIterationsError",
    "MMOTError",
    "NegativeEntryError",
    "NotSPDError",
    "SizeGuardError",
    "TrajectoryBoundError",
    "ChainStats",
    "ChainTrajectory",
    "EulerProblem",
    "PotentialStack",
    "chain_contract",
    "chain_sinkhorn",
    "final_map",
    "initial_stack",
    "integrate_chain",
    "Trajectory",
    "integrate",
    "rhs",
    "minimize_backtracking",
    "solve_symmetric_mm",
    "TwoMarginalSolution",
    "product_plan",
    "sinkhorn_two_marginal",
    "star_center_potential",
]
