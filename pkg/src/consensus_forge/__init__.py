"""Leader-following consensus over asymmetric matrix-weighted digraphs.

Decentralized gain design for heterogeneous linear agents, exact and
sufficient consensus criteria, and simulation to confirm them.
"""

from .kernels import BACKEND as KERNEL_BACKEND
from .model import (
    AgentDynamics,
    MatrixWeightedDigraph,
    ModelError,
    SpanningTree,
    ValidatedSystem,
    dst_laplacian,
    find_spanning_tree,
    full_laplacian,
    incidence_matrix,
    validate_system,
)
from .reduction import closed_loop_matrix, is_hurwitz, reduce_system
from .simulate import SimulationConfig, consensus_verdict, simulate, stacked_equivalence
from .synthesis import (
    GainSet,
    check_theorem1,
    check_theorem2,
    design_gains,
    design_K_dst,
    place_poles,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "AgentDynamics",
    "MatrixWeightedDigraph",
    "ModelError",
    "SpanningTree",
    "ValidatedSystem",
    "validate_system",
    "find_spanning_tree",
    "incidence_matrix",
    "dst_laplacian",
    "full_laplacian",
    "closed_loop_matrix",
    "reduce_system",
    "is_hurwitz",
    "GainSet",
    "place_poles",
    "design_K_dst",
    "design_gains",
    "check_theorem1",
    "check_theorem2",
    "SimulationConfig",
    "simulate",
    "stacked_equivalence",
    "consensus_verdict",
]
