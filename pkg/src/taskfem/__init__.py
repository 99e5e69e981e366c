"""Parallel finite element assembly on hybrid meshes.

Element loops are run with several race-free strategies (atomics, coloring,
separators, commutative tasks) on a pool of worker lanes, and virtual ranks
lend idle lanes to busy neighbors.
"""

from .assembly import AssemblyConfig, CsrMatrix, Strategy, assemble, prepare_rank
from .dlb import NodeConfig, run_hybrid_step
from .elements import ElementKind
from .mesh import Mesh, generate_box_mesh
from .metrics import lb_measured, lb_theoretical, scalability, speedup
from .partition import partition_weighted_greedy
from .scheduler import LanePool, Task, run_commutative
from .verify import apply_dirichlet, cg_solve

__all__ = [
    "AssemblyConfig", "CsrMatrix", "Strategy", "assemble", "prepare_rank", "NodeConfig",
    "run_hybrid_step", "ElementKind", "Mesh", "generate_box_mesh", "lb_measured",
    "lb_theoretical", "scalability", "speedup", "partition_weighted_greedy", "LanePool", "Task",
    "run_commutative", "apply_dirichlet", "cg_solve",
]

__version__ = "0.1.0"
