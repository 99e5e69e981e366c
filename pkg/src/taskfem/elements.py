"""Reference elements: kinds, shape functions and Gauss rules.

All four kinds are isoparametric linear elements. The pyramid is a genuine
five-node element whose shape functions come from a hexahedron with its top
face collapsed onto the apex, so it reuses the 2x2x2 hexahedral rule.

The tables at the bottom of the module (``DN_TABLE``, ``N_TABLE``,
``W_TABLE`` ...) are padded to 8 nodes and 8 points so the compiled kernels
can index them by kind code.
"""

import enum
from itertools import product

import numpy as np

MAX_NODES = 8
MAX_GAUSS = 8


class ElementKind(enum.IntEnum):
    TET4 = 0
    PYR5 = 1
    PRI6 = 2
    HEX8 = 3

    @property
    def node_count(self) -> int:
        return NODE_COUNT[self]

    @property
    def gauss_count(self) -> int:
        return DEFAULT_GAUSS_COUNT[self]


NODE_COUNT = {
    ElementKind.TET4: 4,
    ElementKind.PYR5: 5,
    ElementKind.PRI6: 6,
    ElementKind.HEX8: 8,
}

# Weight heuristic for partitioning: one unit of work per Gauss point.
DEFAULT_GAUSS_COUNT = {
    ElementKind.TET4: 4,
    ElementKind.PYR5: 8,
    ElementKind.PRI6: 6,
    ElementKind.HEX8: 8,
}

_HEX_NODES = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=float)

_TRI_NODES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _hex_shape(p):
    xi, eta, zeta = p
    s = _HEX_NODES
    n = 0.125 * (1 + xi * s[:, 0]) * (1 + eta * s[:, 1]) * (1 + zeta * s[:, 2])
    dn = np.empty((8, 3))
    dn[:, 0] = 0.125 * s[:, 0] * (1 + eta * s[:, 1]) * (1 + zeta * s[:, 2])
    dn[:, 1] = 0.125 * s[:, 1] * (1 + xi * s[:, 0]) * (1 + zeta * s[:, 2])
    dn[:, 2] = 0.125 * s[:, 2] * (1 + xi * s[:, 0]) * (1 + eta * s[:, 1])
    return n, dn


def _tet_shape(p):
    xi, eta, zeta = p
    n = np.array([1 - xi - eta - zeta, xi, eta, zeta])
    dn = np.array([[-1.0, -1.0, -1.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return n, dn


def _prism_shape(p):
    xi, eta, zeta = p
    tri = np.array([1 - xi - eta, xi, eta])
    dtri = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    lo, hi = 0.5 * (1 - zeta), 0.5 * (1 + zeta)
    n = np.concatenate([tri * lo, tri * hi])
    dn = np.empty((6, 3))
    dn[:3, :2] = dtri * lo
    dn[3:, :2] = dtri * hi
    dn[:3, 2] = -0.5 * tri
    dn[3:, 2] = 0.5 * tri
    return n, dn


def _pyramid_shape(p):
    n8, dn8 = _hex_shape(p)
    n = np.concatenate([n8[:4], [n8[4:].sum()]])
    dn = np.vstack([dn8[:4], dn8[4:].sum(axis=0)])
    return n, dn


_SHAPE = {
    ElementKind.TET4: _tet_shape,
    ElementKind.PYR5: _pyramid_shape,
    ElementKind.PRI6: _prism_shape,
    ElementKind.HEX8: _hex_shape,
}


def shape_functions(kind, point):
    """Values ``(n,)`` and reference gradients ``(n, 3)`` at ``point``."""
    return _SHAPE[ElementKind(kind)](np.asarray(point, dtype=float))


def gauss_rule(kind):
    """Return the default Gauss rule of ``kind`` as ``(points, weights)``.

    Reference domains are the unit tetrahedron, the triangle x [-1, 1]
    prism and the [-1, 1]^3 cube (also used for the collapsed pyramid), so
    the weights sum to 1/6, 1 and 8 respectively.

    >>> pts, w = gauss_rule(ElementKind.HEX8)
    >>> pts.shape, float(w.sum())
    ((8, 3), 8.0)
    """
    kind = ElementKind(kind)
    g = 1.0 / np.sqrt(3.0)
    if kind in (ElementKind.HEX8, ElementKind.PYR5):
        pts = np.array(list(product((-g, g), repeat=3)))[:, ::-1]
        return pts, np.ones(8)
    if kind == ElementKind.TET4:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        pts = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
        return pts, np.full(4, 1.0 / 24.0)
    tri = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
    pts = np.array([[x, y, z] for z in (-g, g) for x, y in tri])
    return pts, np.full(6, 1.0 / 6.0)


def reference_centroid(kind):
    kind = ElementKind(kind)
    if kind == ElementKind.TET4:
        return np.full(3, 0.25)
    if kind == ElementKind.PRI6:
        return np.array([1 / 3, 1 / 3, 0.0])
    return np.zeros(3)


def _build_tables():
    dn = np.zeros((4, MAX_GAUSS, MAX_NODES, 3))
    nv = np.zeros((4, MAX_GAUSS, MAX_NODES))
    w = np.zeros((4, MAX_GAUSS))
    ng = np.zeros(4, dtype=np.int64)
    nn = np.zeros(4, dtype=np.int64)
    for kind in ElementKind:
        pts, wts = gauss_rule(kind)
        ng[kind] = len(wts)
        nn[kind] = kind.node_count
        w[kind, : len(wts)] = wts
        for g, p in enumerate(pts):
            n, d = shape_functions(kind, p)
            nv[kind, g, : len(n)] = n
            dn[kind, g, : len(n)] = d
    return dn, nv, w, ng, nn


DN_TABLE, N_TABLE, W_TABLE, NG_TABLE, NN_TABLE = _build_tables()
