"""Per-rank sparse assembly and its five parallelization strategies.

``Sequential``
    one ordered pass over the rank's elements.
``Atomic``
    dynamic loop over chunks; every scalar accumulation is indivisible.
``Coloring``
    one dynamic loop per color with a barrier in between; same-colored
    elements share no node, so scatters are unprotected.
``LocalPartition``
    interior parts of the chunks in parallel (pairwise node-disjoint), then
    the separator elements sequentially on lane 0.
``Multidep``
    one task per chunk with a commutative exclusion set equal to the chunk's
    neighbors, prioritized by neighbor count.

All strategies produce the same matrix up to floating-point reordering of
the sums.
"""

import enum
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .elements import MAX_NODES
from .kernels import SCATTER_ATOMIC, SCATTER_PLAIN, assemble_block, subgrid_block
from .partition import (
    build_chunk_graph, chunk_elements, color_elements, coloring_conflicts, interior_conflicts,
    split_with_separators,
)
from .scheduler import LanePool, LoopPhase, Task

__all__ = [
    "Strategy", "AssemblyConfig", "CsrMatrix", "RankAssembly", "AssemblyError", "SafetyError",
    "build_sparsity", "prepare_rank", "assemble", "assemble_sequential", "assemble_atomic",
    "assemble_coloring", "assemble_local_partition", "assemble_multidep", "subgrid_loop",
    "write_coo", "read_coo",
]


class AssemblyError(RuntimeError):
    """Internal inconsistency, e.g. a scatter target missing from the pattern."""


class SafetyError(RuntimeError):
    """A race-freedom precondition of a strategy does not hold."""


class Strategy(str, enum.Enum):
    SEQUENTIAL = "Sequential"
    ATOMIC = "Atomic"
    COLORING = "Coloring"
    LOCAL_PARTITION = "LocalPartition"
    MULTIDEP = "Multidep"


@dataclass(frozen=True)
class AssemblyConfig:
    strategy: Strategy = Strategy.SEQUENTIAL
    chunk_size: int = 200
    lanes: int = 1
    source: float = 1.0
    repeat_factor: int = 1
    # checks race-freedom preconditions and counts exclusion violations
    debug: bool = False
    # test only: Atomic without indivisible updates
    unsafe_scatter: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.repeat_factor < 1:
            raise ValueError("repeat_factor must be >= 1")


@dataclass
class CsrMatrix:
    """Square CSR matrix over a rank's nodes; ``nodes[i]`` is the global id of row i."""

    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    nodes: np.ndarray

    @property
    def n(self):
        return len(self.row_ptr) - 1

    @property
    def nnz(self):
        return len(self.col_idx)

    def zeros_like(self):
        return CsrMatrix(self.row_ptr, self.col_idx, np.zeros(self.nnz), self.nodes)

    def copy(self):
        return CsrMatrix(self.row_ptr, self.col_idx, self.values.copy(), self.nodes)

    def to_scipy(self):
        return sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=(self.n, self.n))

    def rows(self):
        return np.repeat(np.arange(self.n), np.diff(self.row_ptr))

    def matvec(self, x):
        return self.to_scipy() @ x


def _local_connectivity(mesh, elements):
    conn_g = mesh.conn[elements]
    mask = conn_g >= 0
    nodes = np.unique(conn_g[mask])
    conn = np.full(conn_g.shape, -1, dtype=np.int64)
    conn[mask] = np.searchsorted(nodes, conn_g[mask])
    return nodes, conn


def _pair_keys(conn, n):
    rows = np.repeat(conn, MAX_NODES, axis=1)
    cols = np.tile(conn, (1, MAX_NODES))
    valid = (rows >= 0) & (cols >= 0)
    return rows * n + cols, valid


def build_sparsity(mesh, elements):
    """Zeroed CSR pattern: ``(i, j)`` present iff nodes i, j share an element."""
    elements = np.asarray(elements, dtype=np.int64)
    nodes, conn = _local_connectivity(mesh, elements)
    n = len(nodes)
    keys, valid = _pair_keys(conn, n)
    uniq = np.unique(keys[valid])
    rows, cols = np.divmod(uniq, n)
    row_ptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int64)
    return CsrMatrix(row_ptr, cols.astype(np.int64), np.zeros(len(uniq)), nodes)


class RankAssembly:
    """Everything a rank needs to assemble: local numbering, pattern, scatter map.

    ``pos[e, a * 8 + b]`` is the slot in the CSR ``values`` receiving entry
    ``(a, b)`` of local element ``e``. Chunkings, colorings, separator splits
    and chunk graphs are built on first use and cached.
    """

    def __init__(self, mesh, elements):
        self.mesh = mesh
        self.elements = np.asarray(elements, dtype=np.int64)
        self.pattern = build_sparsity(mesh, self.elements)
        self.nodes = self.pattern.nodes
        _, self.conn = _local_connectivity(mesh, self.elements)
        self.kinds = np.ascontiguousarray(mesh.kinds[self.elements])
        self.coords = np.ascontiguousarray(mesh.coords[self.nodes])
        n = len(self.nodes)
        keys, valid = _pair_keys(self.conn, n)
        row_keys = self.pattern.rows() * n + self.pattern.col_idx
        pos = np.searchsorted(row_keys, keys)
        pos = np.minimum(pos, len(row_keys) - 1)
        found = row_keys[pos] == keys
        if np.any(valid & ~found):
            e = int(np.flatnonzero((valid & ~found).any(axis=1))[0])
            raise AssemblyError(f"scatter target of element {self.elements[e]} not in pattern")
        self.pos = np.where(valid, pos, -1).astype(np.int64)
        self.positions = np.arange(len(self.elements), dtype=np.int64)
        self._cache = {}

    @property
    def nelem(self):
        return len(self.elements)

    def new_system(self):
        return self.pattern.zeros_like(), np.zeros(len(self.nodes))

    def run_block(self, positions, A, b, config, mode=SCATTER_PLAIN):
        assemble_block(positions, self.conn, self.kinds, self.coords, self.pos, A.values, b,
                       config.source, config.repeat_factor, mode)

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def chunking(self, chunk_size):
        return self._cached(("chunks", chunk_size),
                            lambda: chunk_elements(self.elements, chunk_size))

    def coloring(self):
        return self._cached("coloring", lambda: color_elements(self.mesh, self.elements))

    def chunk_graph(self, chunk_size):
        return self._cached(("graph", chunk_size),
                            lambda: build_chunk_graph(self.mesh, self.chunking(chunk_size)))

    def separator_split(self, chunk_size):
        return self._cached(("split", chunk_size),
                            lambda: split_with_separators(self.mesh, self.chunking(chunk_size)))


def prepare_rank(mesh, elements):
    return RankAssembly(mesh, elements)


def _pool(config, pool):
    if pool is None:
        return LanePool(config.lanes, debug=config.debug)
    return pool


def _slices(positions, chunk_size):
    return [positions[i:i + chunk_size] for i in range(0, len(positions), chunk_size)]


def assemble_sequential(rank, config=AssemblyConfig()):
    A, b = rank.new_system()
    rank.run_block(rank.positions, A, b, config)
    return A, b


def assemble_atomic(rank, config, pool=None):
    pool = _pool(config, pool)
    A, b = rank.new_system()
    mode = SCATTER_PLAIN if config.unsafe_scatter else SCATTER_ATOMIC
    chunks = _slices(rank.positions, config.chunk_size)
    pool.run_loop([chunks], partial(rank.run_block, A=A, b=b, config=config, mode=mode))
    return A, b


def assemble_coloring(rank, coloring, config, pool=None):
    if not np.array_equal(coloring.elements, rank.elements):
        raise ValueError("coloring does not cover this rank's element list")
    if config.debug and len(coloring_conflicts(rank.mesh, coloring)):
        raise SafetyError("coloring has same-colored elements sharing a node")
    pool = _pool(config, pool)
    A, b = rank.new_system()
    phases = [_slices(cls, config.chunk_size) for cls in coloring.color_classes()]
    pool.run_loop(phases, partial(rank.run_block, A=A, b=b, config=config))
    return A, b


def assemble_local_partition(rank, split, config, pool=None, chunking=None):
    if config.debug:
        chunking = chunking or rank.chunking(config.chunk_size)
        if interior_conflicts(rank.mesh, chunking, split):
            raise SafetyError("interior chunks share nodes")
    pool = _pool(config, pool)
    A, b = rank.new_system()
    phases = [LoopPhase([p for p in split.interior if len(p)])]
    if len(split.separator):
        phases.append(LoopPhase([split.separator], lane=0))
    pool.run_loop(phases, partial(rank.run_block, A=A, b=b, config=config))
    return A, b


def assemble_multidep(rank, chunk_graph, config, pool=None, chunking=None):
    chunking = chunking or rank.chunking(config.chunk_size)
    if len(chunk_graph) != chunking.nsubd:
        raise ValueError("chunk graph does not match the chunking")
    pool = _pool(config, pool)
    A, b = rank.new_system()
    nneig = chunk_graph.nneig
    tasks = []
    for c in range(chunking.nsubd):
        lo, hi = chunking.local_range(c)
        neighbors = chunk_graph[c]
        if c not in neighbors:
            raise ValueError(f"chunk {c} is missing from its own neighbor list")
        work = partial(rank.run_block, rank.positions[lo:hi], A, b, config)
        tasks.append(Task(c, neighbors.tolist(), int(nneig[c]), work))
    pool.run_tasks(tasks, seed=config.seed)
    return A, b


def assemble(rank, config, pool=None):
    """Assemble with ``config.strategy``, building the structures it needs."""
    s = config.strategy
    cs = config.chunk_size
    if s is Strategy.SEQUENTIAL:
        return assemble_sequential(rank, config)
    if s is Strategy.ATOMIC:
        return assemble_atomic(rank, config, pool)
    if s is Strategy.COLORING:
        return assemble_coloring(rank, rank.coloring(), config, pool)
    if s is Strategy.LOCAL_PARTITION:
        return assemble_local_partition(rank, rank.separator_split(cs), config, pool,
                                        rank.chunking(cs))
    return assemble_multidep(rank, rank.chunk_graph(cs), config, pool, rank.chunking(cs))


def subgrid_loop(rank, field, config, pool=None):
    """Elementwise subgrid analog over the rank; ``field`` is indexed by local node."""
    out = np.zeros(rank.nelem)
    field = np.ascontiguousarray(field, dtype=float)

    def body(positions):
        subgrid_block(positions, rank.conn, rank.kinds, rank.coords, field, out)

    chunks = _slices(rank.positions, config.chunk_size)
    if config.strategy is Strategy.SEQUENTIAL:
        body(rank.positions)
    else:
        _pool(config, pool).run_loop([chunks], body)
    return out


def write_coo(path, A):
    """``row col value`` per line with global node ids, sorted by (row, col)."""
    rows = A.nodes[A.rows()]
    cols = A.nodes[A.col_idx]
    order = np.lexsort((cols, rows))
    with open(path, "w") as fh:
        for r, c, v in zip(rows[order].tolist(), cols[order].tolist(), A.values[order].tolist()):
            fh.write(f"{r} {c} {v!r}\n")


def read_coo(path):
    data = np.loadtxt(path, dtype=float, ndmin=2)
    if data.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    return data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2]
