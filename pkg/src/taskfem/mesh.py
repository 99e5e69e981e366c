"""Hybrid unstructured meshes and their connectivity graphs.

A mesh stores connectivity in a padded ``(nelem, 8)`` integer array (unused
slots are ``-1``) next to a per-element kind code, which is the layout the
compiled kernels consume directly.

:func:`generate_box_mesh` builds a conforming hybrid mesh of the unit box:

* ``layers`` graded sheets of prisms on the ``z = 0`` face,
* a transition sheet of cells split around a centre node into tetrahedra,
  with a pyramid on every face shared with a hexahedron,
* a Freudenthal tetrahedral core,
* a wall of hexahedra along ``x = 0`` above the transition sheet.

Every quadrilateral face is shared only by quad-faced elements and every
triangulated face uses the diagonal through its lowest and highest corner,
so neighbouring cells always match.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np
import scipy.sparse as sp

from .elements import NODE_COUNT, ElementKind
from .kernels import GeometryError, jacobian_dets

__all__ = [
    "Mesh", "NodeToElem", "ElementAdjacency", "generate_box_mesh", "build_node_to_elem",
    "build_element_adjacency", "boundary_nodes", "write_mesh", "read_mesh",
]

_FACES = {
    ElementKind.TET4: [(0, 1, 2), (0, 1, 3), (1, 2, 3), (0, 2, 3)],
    ElementKind.PYR5: [(0, 1, 2, 3), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)],
    ElementKind.PRI6: [(0, 1, 2), (3, 4, 5), (0, 1, 4, 3), (1, 2, 5, 4), (2, 0, 3, 5)],
    ElementKind.HEX8: [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5),
                       (2, 3, 7, 6), (3, 0, 4, 7)],
}

# node permutation mirroring an element of each kind
_FLIP = {
    ElementKind.TET4: [0, 2, 1, 3],
    ElementKind.PYR5: [0, 3, 2, 1, 4],
    ElementKind.PRI6: [0, 2, 1, 3, 5, 4],
    ElementKind.HEX8: [0, 3, 2, 1, 4, 7, 6, 5],
}


class Mesh:
    """Immutable hybrid mesh.

    Parameters
    ----------
    coords : array_like, shape (nnode, 3)
    kinds : array_like of ElementKind codes, shape (nelem,)
    conn : array_like, shape (nelem, 8)
        Node indices per element, padded with ``-1``.
    """

    def __init__(self, coords, kinds, conn, validate=True):
        coords = np.array(coords, dtype=float).reshape(-1, 3)
        kinds = np.array(kinds, dtype=np.int64).reshape(-1)
        conn = np.array(conn, dtype=np.int64).reshape(-1, 8)
        for arr in (coords, kinds, conn):
            arr.setflags(write=False)
        self.coords = coords
        self.kinds = kinds
        self.conn = conn
        if validate:
            self.validate()

    @classmethod
    def from_elements(cls, coords, elements, validate=True):
        """Build from a list of ``(kind, node_list)`` pairs."""
        conn = np.full((len(elements), 8), -1, dtype=np.int64)
        kinds = np.empty(len(elements), dtype=np.int64)
        for e, (kind, nodes) in enumerate(elements):
            kinds[e] = ElementKind(kind)
            conn[e, : len(nodes)] = nodes
        return cls(coords, kinds, conn, validate=validate)

    @property
    def nnode(self):
        return self.coords.shape[0]

    @property
    def nelem(self):
        return self.kinds.shape[0]

    def kind(self, e):
        return ElementKind(int(self.kinds[e]))

    def element_nodes(self, e):
        return self.conn[e, : NODE_COUNT[self.kind(e)]]

    @property
    def elements(self):
        return [(self.kind(e), self.element_nodes(e).tolist()) for e in range(self.nelem)]

    def node_counts(self):
        return np.array([NODE_COUNT[ElementKind(k)] for k in range(4)])[self.kinds]

    def centroids(self):
        n = self.node_counts()
        mask = self.conn >= 0
        pts = self.coords[np.where(mask, self.conn, 0)] * mask[..., None]
        return pts.sum(axis=1) / n[:, None]

    def jacobian_dets(self):
        return jacobian_dets(self.conn, self.kinds, self.coords)

    def validate(self):
        if np.any((self.kinds < 0) | (self.kinds > 3)):
            raise ValueError("unknown element kind code")
        ncount = self.node_counts()
        slots = np.arange(8)[None, :]
        used = slots < ncount[:, None]
        if np.any(self.conn[used] < 0) or np.any(self.conn[used] >= self.nnode):
            raise ValueError("node index out of range")
        if np.any(self.conn[~used] != -1):
            raise ValueError("padding slots must be -1")
        srt = np.sort(np.where(used, self.conn, -1 - slots), axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise ValueError("element with repeated node")
        if self.nelem:
            dets = self.jacobian_dets()
            bad = np.flatnonzero(dets.min(axis=1) <= 0.0)
            if bad.size:
                raise GeometryError(f"element {bad[0]} has a non-positive Jacobian",
                                    element=int(bad[0]))

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.coords, other.coords)
                and np.array_equal(self.kinds, other.kinds)
                and np.array_equal(self.conn, other.conn))

    __hash__ = None

    def __repr__(self):
        counts = np.bincount(self.kinds, minlength=4)
        kinds = ", ".join(f"{k.name}={counts[k]}" for k in ElementKind if counts[k])
        return f"Mesh(nnode={self.nnode}, nelem={self.nelem}, {kinds})"


def _z_levels(nz, layers):
    if layers == 0:
        return np.linspace(0.0, 1.0, nz + 1)
    growth = 1.3 ** np.arange(layers)
    thick = 0.5 * (layers / nz) * growth / growth.sum()
    z_prism = np.concatenate([[0.0], np.cumsum(thick)])
    z_core = np.linspace(z_prism[-1], 1.0, nz - layers + 1)
    return np.concatenate([z_prism, z_core[1:]])


def _morton_cells(nx, ny, nz):
    """Cell indices ``(k, j, i)`` in Z-order, so contiguous runs are compact."""
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    k, j, i = k.ravel(), j.ravel(), i.ravel()
    key = np.zeros(k.size, dtype=np.int64)
    for bit in range(21):
        key |= ((i >> bit) & 1) << (3 * bit)
        key |= ((j >> bit) & 1) << (3 * bit + 1)
        key |= ((k >> bit) & 1) << (3 * bit + 2)
    order = np.argsort(key, kind="stable")
    return zip(k[order].tolist(), j[order].tolist(), i[order].tolist())


def generate_box_mesh(nx, ny, nz, layers, *, jitter=0.0, seed=0):
    """Generate a conforming hybrid mesh of the unit box.

    Parameters
    ----------
    nx, ny, nz : int
        Number of cells per direction.
    layers : int
        Number of prism sheets at ``z = 0``; must be smaller than ``nz``.
    jitter : float
        Random displacement of interior grid nodes, as a fraction of the
        local spacing (keep below ~0.15 to preserve positive Jacobians).
    seed : int
        Seed of the jitter.

    Returns
    -------
    Mesh
        Elements ordered prisms, pyramids, tetrahedra, hexahedra; within a
        group cells follow a Z-order curve.
    """
    for name, val in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val!r}")
    if int(layers) != layers or layers < 0 or layers >= nz:
        raise ValueError(f"layers must satisfy 0 <= layers < nz, got {layers!r}")

    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    zs = _z_levels(nz, layers)
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    grid = np.stack([gx, gy, gz], axis=-1)
    if jitter:
        rng = np.random.default_rng(seed)
        dz = np.diff(zs)
        zgap = np.minimum(np.append(dz, np.inf), np.insert(dz, 0, np.inf))
        spacing = np.empty(grid.shape)
        spacing[..., 0] = 1.0 / nx
        spacing[..., 1] = 1.0 / ny
        spacing[..., 2] = zgap[:, None, None]
        shift = rng.uniform(-0.5, 0.5, grid.shape) * jitter * spacing
        interior = np.zeros(grid.shape[:3], dtype=bool)
        interior[1:-1, 1:-1, 1:-1] = True
        grid = grid + np.where(interior[..., None], shift, 0.0)
    coords = [grid.reshape(-1, 3)]
    nnode = (nx + 1) * (ny + 1) * (nz + 1)

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    PRISM, TRANS, FREUD, HEX = range(4)
    core_start = layers + 1 if layers else 0
    cell = np.full((nz, ny, nx), FREUD)
    cell[:layers] = PRISM
    cell[core_start:, :, 0] = HEX
    if layers:
        cell[layers] = np.where(cell[layers] == HEX, HEX, TRANS)
    hexes = cell == HEX
    near_hex = np.zeros_like(hexes)
    near_hex[1:] |= hexes[:-1]
    near_hex[:-1] |= hexes[1:]
    near_hex[:, 1:] |= hexes[:, :-1]
    near_hex[:, :-1] |= hexes[:, 1:]
    near_hex[:, :, 1:] |= hexes[:, :, :-1]
    near_hex[:, :, :-1] |= hexes[:, :, 1:]
    cell[(cell == FREUD) & near_hex] = TRANS

    groups = {kind: [] for kind in ElementKind}
    centres = []
    unit = np.eye(3, dtype=int)
    for k, j, i in _morton_cells(nx, ny, nz):
        def v(a, b, c):
            return vid(i + a, j + b, k + c)

        ctype = cell[k, j, i]
        if ctype == PRISM:
            groups[ElementKind.PRI6] += [
                [v(0, 0, 0), v(1, 0, 0), v(1, 1, 0), v(0, 0, 1), v(1, 0, 1), v(1, 1, 1)],
                [v(0, 0, 0), v(1, 1, 0), v(0, 1, 0), v(0, 0, 1), v(1, 1, 1), v(0, 1, 1)],
            ]
        elif ctype == HEX:
            groups[ElementKind.HEX8].append([
                v(0, 0, 0), v(1, 0, 0), v(1, 1, 0), v(0, 1, 0),
                v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)])
        elif ctype == FREUD:
            for perm in permutations(range(3)):
                p1 = unit[perm[0]]
                p2 = p1 + unit[perm[1]]
                groups[ElementKind.TET4].append(
                    [v(0, 0, 0), v(*p1), v(*p2), v(1, 1, 1)])
        else:
            c = nnode + len(centres)
            centres.append([vid(i + a, j + b, k + cc)
                            for cc in (0, 1) for b in (0, 1) for a in (0, 1)])
            idx = (i, j, k)
            dims = (nx, ny, nz)
            for axis in range(3):
                ax1, ax2 = [a for a in range(3) if a != axis]
                for side in (0, 1):
                    nb = list(idx)[::-1]
                    nb_axis = 2 - axis
                    nb[nb_axis] += 1 if side else -1
                    quad = (0 <= nb[nb_axis] < dims[axis]
                            and cell[tuple(nb)] == HEX)
                    ring = []
                    for u, w in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        off = [0, 0, 0]
                        off[axis], off[ax1], off[ax2] = side, u, w
                        ring.append(v(*off))
                    if quad:
                        groups[ElementKind.PYR5].append(ring + [c])
                    else:
                        groups[ElementKind.TET4] += [
                            [ring[0], ring[1], ring[2], c],
                            [ring[0], ring[2], ring[3], c]]

    if centres:
        corners = coords[0][np.array(centres)]
        coords.append(corners.mean(axis=1))
    coords = np.vstack(coords)

    order = [ElementKind.PRI6, ElementKind.PYR5, ElementKind.TET4, ElementKind.HEX8]
    conn_parts, kind_parts = [], []
    for kind in order:
        if not groups[kind]:
            continue
        block = np.full((len(groups[kind]), 8), -1, dtype=np.int64)
        block[:, : kind.node_count] = groups[kind]
        conn_parts.append(block)
        kind_parts.append(np.full(len(block), int(kind)))
    conn = np.vstack(conn_parts)
    kinds = np.concatenate(kind_parts)
    _fix_orientation(conn, kinds, coords)
    return Mesh(coords, kinds, conn)


def _fix_orientation(conn, kinds, coords):
    dets = jacobian_dets(conn, kinds, coords)
    dets = np.where(np.isinf(dets), 0.0, dets).sum(axis=1)
    for kind, flip in _FLIP.items():
        rows = np.flatnonzero((kinds == kind) & (dets < 0))
        if rows.size:
            n = kind.node_count
            conn[rows, :n] = conn[rows][:, flip]


@dataclass(frozen=True)
class NodeToElem:
    """Node to element multimap in compressed form."""

    offsets: np.ndarray
    elements: np.ndarray

    def __getitem__(self, node):
        return self.elements[self.offsets[node]:self.offsets[node + 1]]

    def __len__(self):
        return len(self.offsets) - 1

    def sizes(self):
        return np.diff(self.offsets)


def build_node_to_elem(mesh):
    """Return the node to element map; each list is sorted by element index."""
    elem = np.repeat(np.arange(mesh.nelem), 8).reshape(mesh.nelem, 8)
    mask = mesh.conn >= 0
    nodes = mesh.conn[mask]
    elems = elem[mask]
    order = np.lexsort((elems, nodes))
    counts = np.bincount(nodes, minlength=mesh.nnode)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return NodeToElem(offsets, elems[order])


def incidence_matrix(mesh, elements=None):
    """Boolean element x node incidence as a CSR matrix (int8 data)."""
    conn = mesh.conn if elements is None else mesh.conn[elements]
    mask = conn >= 0
    rows = np.repeat(np.arange(conn.shape[0]), mask.sum(axis=1))
    cols = conn[mask]
    data = np.ones(cols.size, dtype=np.int32)
    return sp.csr_matrix((data, (rows, cols)), shape=(conn.shape[0], mesh.nnode))


@dataclass(frozen=True)
class ElementAdjacency:
    """Node-sharing element graph in compressed form (no self loops)."""

    offsets: np.ndarray
    neighbors: np.ndarray

    def __getitem__(self, e):
        return self.neighbors[self.offsets[e]:self.offsets[e + 1]]

    def __len__(self):
        return len(self.offsets) - 1

    def degrees(self):
        return np.diff(self.offsets)


def build_element_adjacency(mesh):
    """Elements are adjacent iff they share at least one node."""
    inc = incidence_matrix(mesh)
    adj = (inc @ inc.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.sort_indices()
    return ElementAdjacency(adj.indptr.astype(np.int64), adj.indices.astype(np.int64))


def boundary_nodes(mesh):
    """Sorted nodes lying on faces owned by a single element."""
    keys = []
    for kind, faces in _FACES.items():
        rows = np.flatnonzero(mesh.kinds == kind)
        if not rows.size:
            continue
        for face in faces:
            f = np.full((rows.size, 4), -1, dtype=np.int64)
            f[:, : len(face)] = mesh.conn[rows][:, face]
            keys.append(np.sort(f, axis=1))
    if not keys:
        return np.empty(0, dtype=np.int64)
    keys = np.vstack(keys)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    nodes = uniq[counts == 1].ravel()
    return np.unique(nodes[nodes >= 0])


def write_mesh(mesh, path):
    """Plain-text mesh: ``nnode nelem``, coordinates, then ``KIND n0 n1 ...``."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.nnode} {mesh.nelem}\n")
        for x, y, z in mesh.coords.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for kind, nodes in mesh.elements:
            fh.write(kind.name + " " + " ".join(map(str, nodes)) + "\n")


def read_mesh(path):
    with open(path) as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    try:
        nnode, nelem = map(int, lines[0].split())
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: bad header line") from exc
    if len(lines) != 1 + nnode + nelem:
        raise ValueError(f"{path}: expected {1 + nnode + nelem} lines, found {len(lines)}")
    coords = np.array([[float(t) for t in line.split()] for line in lines[1:1 + nnode]])
    elements = []
    for lineno, line in enumerate(lines[1 + nnode:], start=2 + nnode):
        name, *nodes = line.split()
        try:
            kind = ElementKind[name]
        except KeyError as exc:
            raise ValueError(f"{path}:{lineno}: unknown element kind {name!r}") from exc
        elements.append((kind, [int(n) for n in nodes]))
    return Mesh.from_elements(coords.reshape(-1, 3), elements)
