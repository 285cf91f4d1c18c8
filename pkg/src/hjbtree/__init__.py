"""Tree-structure dynamic programming for PDE-constrained feedback control,
with POD/DEIM model reduction."""

from .cost import CostFunctional, QuadraticTrackingCost, accumulate_cost, quadratic_tracking_cost
from .model import (
    ControlSystem,
    GridSpec,
    assemble_burgers,
    assemble_reaction_diffusion,
    initial_condition,
)
from .reduction import (
    PodBasis,
    build_deim,
    build_reduced_tree,
    collect_snapshots,
    compute_pod,
    reduce_system,
    reduced_cost,
)
from .stepper import NewtonParams, Stepper, TimeGrid
from .tree import ControlGrid, PruneParams, Tree, build_tree, cardinality, equidistributed_controls
from .value import ValueFunction, backward_sweep, closed_loop_rollout, synthesize_control

__version__ = "0.1.0"
