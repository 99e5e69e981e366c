"""Rank partitions, chunks, colorings and separators.

Ranks stand in for MPI processes: each owns a disjoint set of elements
(interface nodes are duplicated). Within a rank, the element list is cut into
contiguous chunks, the unit of both dynamic loop scheduling and commutative
tasks.
"""

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .elements import DEFAULT_GAUSS_COUNT, ElementKind
from .mesh import build_element_adjacency, incidence_matrix

__all__ = [
    "RankPartition", "Chunking", "ChunkGraph", "Coloring", "SeparatorSplit",
    "element_weights", "partition_weighted_greedy", "chunk_elements", "build_chunk_graph",
    "color_elements", "split_with_separators", "write_partition_csv", "read_partition_csv",
    "coloring_conflicts", "interior_conflicts",
]


def element_weights(mesh, gauss_count=None):
    """Per-element work estimate: the number of Gauss points of its kind."""
    counts = dict(DEFAULT_GAUSS_COUNT)
    if gauss_count:
        counts.update({ElementKind(k): v for k, v in gauss_count.items()})
    table = np.array([counts[ElementKind(k)] for k in range(4)], dtype=float)
    return table[mesh.kinds]


@dataclass(frozen=True)
class RankPartition:
    rank_of: np.ndarray
    n_ranks: int
    elements: tuple = field(repr=False)

    @classmethod
    def from_ranks(cls, rank_of, n_ranks):
        rank_of = np.asarray(rank_of, dtype=np.int64)
        elements = tuple(np.flatnonzero(rank_of == r) for r in range(n_ranks))
        return cls(rank_of, n_ranks, elements)

    def counts(self):
        return np.array([len(e) for e in self.elements])

    def weight_sums(self, weights):
        return np.array([np.asarray(weights)[e].sum() for e in self.elements])


def partition_weighted_greedy(mesh, n_ranks, weights=None, adjacency=None):
    """Grow ranks one at a time by breadth-first search over node sharing.

    Each rank is seeded at the unassigned element with the smallest centroid
    ``x`` (lowest index on ties) and grows until its weight reaches
    ``remaining weight / remaining ranks``. Growth is FIFO while the deficit
    is at least twice the heaviest element; after that the frontier element
    (or, once the frontier is empty, any unassigned element) that best fills
    the deficit is taken, and the rank stops once no candidate would bring
    it closer to the target. The last rank takes everything left.
    """
    n_ranks = int(n_ranks)
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    if n_ranks > mesh.nelem:
        raise ValueError(f"n_ranks={n_ranks} exceeds the number of elements ({mesh.nelem})")
    w = np.ones(mesh.nelem) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (mesh.nelem,) or np.any(w <= 0):
        raise ValueError("weights must be positive, one per element")
    if n_ranks == 1:
        return RankPartition.from_ranks(np.zeros(mesh.nelem, dtype=np.int64), 1)

    adj = build_element_adjacency(mesh) if adjacency is None else adjacency
    seed_order = np.lexsort((np.arange(mesh.nelem), mesh.centroids()[:, 0]))
    rank_of = np.full(mesh.nelem, -1, dtype=np.int64)
    seed_ptr = 0
    remaining_w = w.sum()
    remaining_n = mesh.nelem
    w_max = w.max()

    for r in range(n_ranks - 1):
        target = remaining_w / (n_ranks - r)
        # keep at least one element for each later rank
        cap = remaining_n - (n_ranks - r - 1)
        total, count = 0.0, 0
        queue = deque()
        queued = np.zeros(mesh.nelem, dtype=bool)

        def take(e):
            nonlocal total, count
            rank_of[e] = r
            total += w[e]
            count += 1
            for f in adj[e]:
                if rank_of[f] < 0 and not queued[f]:
                    queued[f] = True
                    queue.append(f)

        while count < cap:
            deficit = target - total
            if deficit <= 0:
                break
            while queue and rank_of[queue[0]] >= 0:
                queue.popleft()
            if not queue and (deficit >= 2 * w_max or not count):
                # region exhausted far from the target: restart at the next seed
                while rank_of[seed_order[seed_ptr]] >= 0:
                    seed_ptr += 1
                take(seed_order[seed_ptr])
                continue
            if deficit >= 2 * w_max:
                take(queue.popleft())
                continue
            if queue:
                candidates = np.array([f for f in queue if rank_of[f] < 0])
            else:
                candidates = np.flatnonzero(rank_of < 0)
            best = _best_fit(candidates, w, deficit)
            if best < 0:
                break
            take(best)
        remaining_w -= total
        remaining_n -= count
    rank_of[rank_of < 0] = n_ranks - 1
    return RankPartition.from_ranks(rank_of, n_ranks)


def _best_fit(candidates, w, deficit):
    """Heaviest candidate fitting in ``deficit``, else the lightest one if it
    still brings the total closer to the target; -1 when none qualifies.
    Lowest index wins ties."""
    cw = w[candidates]
    fits = cw <= deficit
    if fits.any():
        top = cw[fits].max()
        return int(candidates[fits][cw[fits] == top].min())
    low = cw.min()
    if low - deficit >= deficit:
        return -1
    return int(candidates[cw == low].min())


@dataclass(frozen=True)
class Chunking:
    """Contiguous chunks of one rank's element list.

    ``elements`` is the rank's element list (global ids, order preserved);
    chunk ``c`` covers ``elements[starts[c]:starts[c + 1]]``.
    """

    chunk_size: int
    elements: np.ndarray
    starts: np.ndarray

    @property
    def nsubd(self):
        return len(self.starts) - 1

    def __len__(self):
        return self.nsubd

    def chunk(self, c):
        return self.elements[self.starts[c]:self.starts[c + 1]]

    def local_range(self, c):
        return int(self.starts[c]), int(self.starts[c + 1])

    def chunk_of(self):
        """Chunk index of every position in the rank's element list."""
        return np.repeat(np.arange(self.nsubd), np.diff(self.starts))


def chunk_elements(elements, chunk_size):
    """Cut a rank's element list into ``ceil(n / chunk_size)`` contiguous chunks."""
    if int(chunk_size) != chunk_size or chunk_size < 1:
        raise ValueError(f"chunk_size must be a positive integer, got {chunk_size!r}")
    elements = np.asarray(elements, dtype=np.int64)
    n = len(elements)
    starts = np.append(np.arange(0, n, chunk_size), n) if n else np.array([0])
    return Chunking(int(chunk_size), elements, starts.astype(np.int64))


def _chunk_node_incidence(mesh, chunking):
    inc = incidence_matrix(mesh, chunking.elements)
    group = sp.csr_matrix(
        (np.ones(len(chunking.elements), dtype=np.int32),
         (chunking.chunk_of(), np.arange(len(chunking.elements)))),
        shape=(chunking.nsubd, len(chunking.elements)))
    return (group @ inc).tocsr()


@dataclass(frozen=True)
class ChunkGraph:
    """Chunk neighbor lists, each including the chunk itself."""

    offsets: np.ndarray
    neighbors: np.ndarray

    def __getitem__(self, c):
        return self.neighbors[self.offsets[c]:self.offsets[c + 1]]

    def __len__(self):
        return len(self.offsets) - 1

    @property
    def nneig(self):
        return np.diff(self.offsets)


def build_chunk_graph(mesh, chunking):
    cn = _chunk_node_incidence(mesh, chunking)
    cc = (cn @ cn.T).tocsr()
    cc = cc + sp.identity(chunking.nsubd, dtype=cc.dtype, format="csr")
    cc.sort_indices()
    return ChunkGraph(cc.indptr.astype(np.int64), cc.indices.astype(np.int64))


@dataclass(frozen=True)
class Coloring:
    """``color_of[i]`` is the color of the i-th element of ``elements``."""

    elements: np.ndarray
    color_of: np.ndarray
    n_colors: int

    def color_classes(self):
        """Per color, the rank-local positions of its elements (in order)."""
        order = np.argsort(self.color_of, kind="stable")
        bounds = np.searchsorted(self.color_of[order], np.arange(self.n_colors + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.n_colors)]


@njit(cache=True)
def _greedy_color(offsets, neighbors, n):
    color = np.full(n, -1, dtype=np.int64)
    mark = np.full(n + 1, -1, dtype=np.int64)
    for e in range(n):
        for k in range(offsets[e], offsets[e + 1]):
            c = color[neighbors[k]]
            if c >= 0:
                mark[c] = e
        c = 0
        while mark[c] == e:
            c += 1
        color[e] = c
    return color


def color_elements(mesh, elements=None):
    """Greedy first-fit coloring of the node-sharing graph, in element order."""
    elements = np.arange(mesh.nelem) if elements is None else np.asarray(elements, dtype=np.int64)
    inc = incidence_matrix(mesh, elements)
    adj = (inc @ inc.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    color = _greedy_color(adj.indptr.astype(np.int64), adj.indices.astype(np.int64),
                          len(elements))
    n_colors = int(color.max()) + 1 if len(color) else 0
    return Coloring(elements, color, n_colors)


def coloring_conflicts(mesh, coloring):
    """Pairs of rank-local positions with equal color sharing a node."""
    inc = incidence_matrix(mesh, coloring.elements)
    adj = sp.triu((inc @ inc.T).tocsr(), k=1).tocoo()
    same = coloring.color_of[adj.row] == coloring.color_of[adj.col]
    return np.column_stack([adj.row[same], adj.col[same]])


@dataclass(frozen=True)
class SeparatorSplit:
    """Interior chunks (rank-local positions) plus separator positions.

    Positions index the rank's element list, as in :class:`Chunking`.
    """

    interior: tuple
    separator: np.ndarray


def split_with_separators(mesh, chunking):
    """Move every element touching a node shared by two or more chunks to the separator."""
    cn = _chunk_node_incidence(mesh, chunking)
    cn.data[:] = 1
    touched = np.asarray(cn.sum(axis=0)).ravel()
    shared = touched >= 2
    conn = mesh.conn[chunking.elements]
    is_sep = (shared[np.where(conn >= 0, conn, 0)] & (conn >= 0)).any(axis=1)
    positions = np.arange(len(chunking.elements))
    interior = tuple(
        positions[lo:hi][~is_sep[lo:hi]]
        for lo, hi in (chunking.local_range(c) for c in range(chunking.nsubd)))
    return SeparatorSplit(interior, positions[is_sep])


def interior_conflicts(mesh, chunking, split):
    """Pairs of distinct interior chunks that still share a node."""
    groups = [np.asarray(chunking.elements)[p] for p in split.interior]
    owner = np.full(mesh.nnode, -1, dtype=np.int64)
    bad = set()
    for c, elems in enumerate(groups):
        nodes = np.unique(mesh.conn[elems][mesh.conn[elems] >= 0])
        prev = owner[nodes]
        for d in np.unique(prev[(prev >= 0) & (prev != c)]):
            bad.add((int(d), c))
        owner[nodes] = c
    return sorted(bad)


def write_partition_csv(path, partition, chunkings=None, colorings=None):
    """Dump ``element_id,rank,chunk,color``; missing data is written as -1."""
    chunk = np.full(len(partition.rank_of), -1, dtype=np.int64)
    color = np.full(len(partition.rank_of), -1, dtype=np.int64)
    for r in range(partition.n_ranks):
        if chunkings is not None:
            ck = chunkings[r]
            chunk[ck.elements] = ck.chunk_of()
        if colorings is not None:
            col = colorings[r]
            color[col.elements] = col.color_of
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["element_id", "rank", "chunk", "color"])
        for e in range(len(partition.rank_of)):
            out.writerow([e, int(partition.rank_of[e]), int(chunk[e]), int(color[e])])


def read_partition_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return data[:, 1], data[:, 2], data[:, 3]
