"""Correctness checks of assembled systems: Dirichlet conditions and conjugate gradients.

The reference problem is the Laplace equation with the linear exact
solution ``u = x + y + z`` imposed on the box boundary. Every element kind
reproduces linear fields exactly, so the discrete solution must match the
nodal values to solver precision.
"""

from dataclasses import dataclass, field

import numpy as np

from .assembly import AssemblyConfig, CsrMatrix, assemble, prepare_rank
from .mesh import boundary_nodes

__all__ = [
    "BcSet", "CgResult", "ConvergenceError", "apply_dirichlet", "cg_solve",
    "linear_field", "ManufacturedResult", "solve_manufactured",
]


class ConvergenceError(RuntimeError):
    """CG hit ``max_iter``; ``residuals`` holds the residual norm history."""

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class BcSet:
    """Dirichlet values keyed by global node id."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if nodes.shape != values.shape:
            raise ValueError("nodes and values differ in length")
        if len(np.unique(nodes)) != len(nodes):
            raise ValueError("duplicate Dirichlet node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dict(cls, mapping):
        items = sorted(mapping.items())
        return cls([k for k, _ in items], [v for _, v in items])

    def __len__(self):
        return len(self.nodes)


def apply_dirichlet(A, b, bc):
    """Impose ``bc`` by row and column elimination; returns new ``(A, b)``.

    Constrained rows and columns become those of the identity and the known
    values are moved to the right-hand side, so symmetry is kept.
    """
    b = np.array(b, dtype=float)
    if len(bc) == 0:
        return A.copy(), b
    local = np.searchsorted(A.nodes, bc.nodes)
    local = np.minimum(local, A.n - 1)
    missing = A.nodes[local] != bc.nodes
    if np.any(missing):
        raise ValueError(f"Dirichlet node {int(bc.nodes[missing][0])} is not in the system")
    fixed = np.zeros(A.n, dtype=bool)
    fixed[local] = True
    g = np.zeros(A.n)
    g[local] = bc.values
    rows = A.rows()
    cols = A.col_idx
    values = A.values.copy()
    moved = ~fixed[rows] & fixed[cols]
    np.subtract.at(b, rows[moved], values[moved] * g[cols[moved]])
    values[fixed[rows] | fixed[cols]] = 0.0
    values[fixed[rows] & (rows == cols)] = 1.0
    b[fixed] = g[fixed]
    return CsrMatrix(A.row_ptr, A.col_idx, values, A.nodes), b


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    # quadratic energy 0.5 x.A.x - b.x after each iteration; never increases
    energies: list = field(default_factory=list)


def cg_solve(A, b, tol=1e-12, max_iter=None, *, jacobi=False, x0=None):
    """Conjugate gradients until ``||r|| <= tol * ||b||``.

    Parameters
    ----------
    A : CsrMatrix or scipy sparse matrix
        Symmetric positive definite.
    b : ndarray
    tol : float
    max_iter : int, optional
        Defaults to ``10 * n``.
    jacobi : bool
        Precondition with the diagonal.

    Returns
    -------
    CgResult
    """
    M = A.to_scipy() if isinstance(A, CsrMatrix) else A.tocsr()
    b = np.asarray(b, dtype=float)
    n = M.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    inv_diag = 1.0 / M.diagonal() if jacobi else None
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - M @ x
    bnorm = np.linalg.norm(b)
    residuals = [float(np.linalg.norm(r))]
    energies = [float(0.5 * x @ (M @ x) - b @ x)]
    if residuals[0] <= tol * bnorm:
        return CgResult(x, 0, residuals, energies)
    z = r * inv_diag if jacobi else r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        q = M @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        residuals.append(float(np.linalg.norm(r)))
        # energy from the recursively updated residual: 0.5 x.(A x) - b.x = -0.5 x.(b + r)
        energies.append(float(-0.5 * x @ (b + r)))
        if residuals[-1] <= tol * bnorm:
            return CgResult(x, it, residuals, energies)
        z = r * inv_diag if jacobi else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach {tol:g} in {max_iter} iterations "
        f"(last relative residual {residuals[-1] / bnorm:.3e})", residuals)


def linear_field(coords):
    return np.asarray(coords).sum(axis=1)


@dataclass
class ManufacturedResult:
    max_error: float
    iterations: int
    solution: np.ndarray


def solve_manufactured(mesh, config=None, *, rank=None, tol=1e-13, jacobi=True):
    """Assemble with ``config`` and solve for ``u = x + y + z`` on the whole mesh."""
    config = config or AssemblyConfig()
    config = AssemblyConfig(config.strategy, config.chunk_size, config.lanes, source=0.0,
                            repeat_factor=config.repeat_factor, debug=config.debug,
                            seed=config.seed)
    rank = rank or prepare_rank(mesh, np.arange(mesh.nelem))
    A, b = assemble(rank, config)
    exact = linear_field(mesh.coords[A.nodes])
    fixed = boundary_nodes(mesh)
    bc = BcSet(fixed, linear_field(mesh.coords[fixed]))
    Ad, bd = apply_dirichlet(A, b, bc)
    res = cg_solve(Ad, bd, tol=tol, jacobi=jacobi)
    return ManufacturedResult(float(np.abs(res.x - exact).max()), res.iterations, res.x)
