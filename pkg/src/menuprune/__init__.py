"""Optimal price-contract menus and greedy max-plus basis pruning."""

from .geometry import (
    ConvexPolygon,
    HalfPlane,
    cell_vrep,
    clip,
    integrate_affine,
    intersect,
    max_affine_gap,
    rectangle,
)
from .lpsolver import LinearProgram, LpSolution, solve_lp
from .model import (
    BasisFunction,
    Contract,
    Instance,
    Menu,
    check_ic,
    lift_participation,
    revenue,
    utility_at,
)
from .elasticity import (
    MarketParams,
    build_Q,
    build_instance,
    from_quality,
    load_instance,
    optimal_consumption,
    save_instance,
    to_quality,
    welfare,
)
from .solver import (
    DiscretizedProblem,
    MenuSolution,
    discretize,
    extract_basis,
    solve_infinite_menu,
    solution_menu,
)
from .pruning import (
    CellComplex,
    PruneTrace,
    build_complex,
    evaluate_losses,
    importance_l1,
    importance_linf,
    importance_revenue,
    prune_linf,
    prune_local,
    prune_onestep,
)

__version__ = "0.1.0"
