"""Element kernels: scalar diffusion stiffness and an elementwise subgrid loop.

The physics is reduced to ``-div(grad u) = f``. Everything that runs inside
the parallel element loops is compiled with ``nogil=True`` so lanes really
execute concurrently.

Scatter modes used by :func:`assemble_block`:

``SCATTER_PLAIN``
    unprotected ``values[k] += a`` (race-free only when the caller guarantees
    disjoint rows)
``SCATTER_ATOMIC``
    every scalar accumulation is an indivisible ``atomicrmw fadd``
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._atomic import atomic_add
from .elements import (
    DN_TABLE, MAX_NODES, N_TABLE, NG_TABLE, NN_TABLE, W_TABLE, ElementKind, gauss_rule,
)

SCATTER_PLAIN = 0
SCATTER_ATOMIC = 1

__all__ = [
    "ElementSystem", "GeometryError", "gauss_rule", "compute_element_diffusion",
    "subgrid_update", "assemble_block", "subgrid_block", "jacobian_dets",
    "SCATTER_PLAIN", "SCATTER_ATOMIC",
]


class GeometryError(ValueError):
    """Raised for an element with a non-positive Jacobian determinant."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


@dataclass(frozen=True)
class ElementSystem:
    Ae: np.ndarray
    be: np.ndarray


@njit(cache=True, nogil=True)
def _element_system(kind, xe, source, ae, be, dn, nv, w, ng, nnt):
    """Fill ``ae``/``be`` for one element; returns the smallest det(J)."""
    nn = nnt[kind]
    for a in range(nn):
        be[a] = 0.0
        for b in range(nn):
            ae[a, b] = 0.0
    grad = np.empty((MAX_NODES, 3))
    detmin = np.inf
    for g in range(ng[kind]):
        # J[i, j] = d x_j / d xi_i
        j00 = j01 = j02 = j10 = j11 = j12 = j20 = j21 = j22 = 0.0
        for a in range(nn):
            d0 = dn[kind, g, a, 0]
            d1 = dn[kind, g, a, 1]
            d2 = dn[kind, g, a, 2]
            x0 = xe[a, 0]
            x1 = xe[a, 1]
            x2 = xe[a, 2]
            j00 += d0 * x0
            j01 += d0 * x1
            j02 += d0 * x2
            j10 += d1 * x0
            j11 += d1 * x1
            j12 += d1 * x2
            j20 += d2 * x0
            j21 += d2 * x1
            j22 += d2 * x2
        c00 = j11 * j22 - j12 * j21
        c01 = j02 * j21 - j01 * j22
        c02 = j01 * j12 - j02 * j11
        c10 = j12 * j20 - j10 * j22
        c11 = j00 * j22 - j02 * j20
        c12 = j02 * j10 - j00 * j12
        c20 = j10 * j21 - j11 * j20
        c21 = j01 * j20 - j00 * j21
        c22 = j00 * j11 - j01 * j10
        det = j00 * c00 + j01 * c10 + j02 * c20
        if det < detmin:
            detmin = det
        if det <= 0.0:
            continue
        inv = 1.0 / det
        for a in range(nn):
            d0 = dn[kind, g, a, 0]
            d1 = dn[kind, g, a, 1]
            d2 = dn[kind, g, a, 2]
            grad[a, 0] = (c00 * d0 + c01 * d1 + c02 * d2) * inv
            grad[a, 1] = (c10 * d0 + c11 * d1 + c12 * d2) * inv
            grad[a, 2] = (c20 * d0 + c21 * d1 + c22 * d2) * inv
        dv = w[kind, g] * det
        for a in range(nn):
            be[a] += dv * source * nv[kind, g, a]
            for b in range(a, nn):
                ae[a, b] += dv * (grad[a, 0] * grad[b, 0] + grad[a, 1] * grad[b, 1]
                                  + grad[a, 2] * grad[b, 2])
    for a in range(nn):
        for b in range(a + 1, nn):
            ae[b, a] = ae[a, b]
    return detmin


def compute_element_diffusion(coords, kind, source=0.0, repeat_factor=1):
    """Element stiffness and load vector of the diffusion operator.

    Parameters
    ----------
    coords : array_like, shape (node_count, 3)
        Physical coordinates of the element nodes, in reference order.
    kind : ElementKind
    source : float
        Constant volumetric source ``f``.
    repeat_factor : int
        Number of times the kernel is recomputed. Only changes the cost.

    Returns
    -------
    ElementSystem
    """
    kind = ElementKind(kind)
    xe = np.ascontiguousarray(coords, dtype=float)
    if xe.shape != (kind.node_count, 3):
        raise ValueError(f"{kind.name} expects {kind.node_count} nodes, got {xe.shape}")
    if repeat_factor < 1:
        raise ValueError("repeat_factor must be >= 1")
    ae = np.empty((kind.node_count, kind.node_count))
    be = np.empty(kind.node_count)
    for _ in range(repeat_factor):
        det = _element_system(int(kind), xe, float(source), ae, be,
                              DN_TABLE, N_TABLE, W_TABLE, NG_TABLE, NN_TABLE)
    if det <= 0.0:
        raise GeometryError(f"non-positive Jacobian ({det:.3e}) in {kind.name} element")
    return ElementSystem(ae, be)


@njit(cache=True, nogil=True)
def _assemble_block(elems, conn, kinds, coords, pos, values, rhs, source, repeat, mode,
                    dn, nv, w, ng, nnt):
    ae = np.empty((MAX_NODES, MAX_NODES))
    be = np.empty(MAX_NODES)
    xe = np.empty((MAX_NODES, 3))
    for i in range(elems.shape[0]):
        e = elems[i]
        kind = kinds[e]
        nn = nnt[kind]
        for a in range(nn):
            node = conn[e, a]
            xe[a, 0] = coords[node, 0]
            xe[a, 1] = coords[node, 1]
            xe[a, 2] = coords[node, 2]
        det = 0.0
        for _ in range(repeat):
            det = _element_system(kind, xe, source, ae, be, dn, nv, w, ng, nnt)
        if det <= 0.0:
            return e
        for a in range(nn):
            row = conn[e, a]
            if mode == 1:
                atomic_add(rhs, row, be[a])
                for b in range(nn):
                    atomic_add(values, pos[e, a * MAX_NODES + b], ae[a, b])
            else:
                rhs[row] += be[a]
                for b in range(nn):
                    values[pos[e, a * MAX_NODES + b]] += ae[a, b]
    return -1


def assemble_block(elems, conn, kinds, coords, pos, values, rhs, source=0.0, repeat=1,
                   mode=SCATTER_PLAIN):
    """Compute and scatter the element systems of ``elems``.

    ``pos[e, a * 8 + b]`` is the slot of ``values`` receiving entry ``(a, b)``
    of element ``e``. Raises :class:`GeometryError` naming the first element
    with a non-positive Jacobian.
    """
    bad = _assemble_block(elems, conn, kinds, coords, pos, values, rhs, float(source),
                          int(repeat), int(mode),
                          DN_TABLE, N_TABLE, W_TABLE, NG_TABLE, NN_TABLE)
    if bad >= 0:
        raise GeometryError(f"non-positive Jacobian in element {bad}", element=int(bad))


@njit(cache=True, nogil=True)
def _subgrid_element(kind, xe, ue, dn, nv, w, ng, nnt):
    nn = nnt[kind]
    vol = 0.0
    integral = 0.0
    for g in range(ng[kind]):
        j00 = j01 = j02 = j10 = j11 = j12 = j20 = j21 = j22 = 0.0
        uh = 0.0
        for a in range(nn):
            d0 = dn[kind, g, a, 0]
            d1 = dn[kind, g, a, 1]
            d2 = dn[kind, g, a, 2]
            j00 += d0 * xe[a, 0]
            j01 += d0 * xe[a, 1]
            j02 += d0 * xe[a, 2]
            j10 += d1 * xe[a, 0]
            j11 += d1 * xe[a, 1]
            j12 += d1 * xe[a, 2]
            j20 += d2 * xe[a, 0]
            j21 += d2 * xe[a, 1]
            j22 += d2 * xe[a, 2]
            uh += nv[kind, g, a] * ue[a]
        det = (j00 * (j11 * j22 - j12 * j21) - j01 * (j10 * j22 - j12 * j20)
               + j02 * (j10 * j21 - j11 * j20))
        dv = w[kind, g] * det
        vol += dv
        integral += dv * uh
    # tau_e = h_e^2 with h_e = vol^(1/3); the value is -tau_e * mean(u_h)
    return -(vol ** (2.0 / 3.0)) * integral / vol


@njit(cache=True, nogil=True)
def _subgrid_block(elems, conn, kinds, coords, field, out, dn, nv, w, ng, nnt):
    xe = np.empty((MAX_NODES, 3))
    ue = np.empty(MAX_NODES)
    for i in range(elems.shape[0]):
        e = elems[i]
        kind = kinds[e]
        for a in range(nnt[kind]):
            node = conn[e, a]
            xe[a, 0] = coords[node, 0]
            xe[a, 1] = coords[node, 1]
            xe[a, 2] = coords[node, 2]
            ue[a] = field[node]
        out[e] = _subgrid_element(kind, xe, ue, dn, nv, w, ng, nnt)


def subgrid_update(coords, kind, nodal_values):
    """Elementwise subgrid-scale analog for a single element.

    Gathers the nodal field, returns ``-h_e^2 * mean_e(u_h)`` with
    ``h_e = |e|^(1/3)``. Linear in the field; nothing is scattered.
    """
    kind = ElementKind(kind)
    xe = np.ascontiguousarray(coords, dtype=float)
    ue = np.ascontiguousarray(nodal_values, dtype=float)
    return float(_subgrid_element(int(kind), xe, ue,
                                  DN_TABLE, N_TABLE, W_TABLE, NG_TABLE, NN_TABLE))


def subgrid_block(elems, conn, kinds, coords, field, out):
    """Write the subgrid value of each element of ``elems`` into ``out[e]``."""
    _subgrid_block(elems, conn, kinds, coords, field, out,
                   DN_TABLE, N_TABLE, W_TABLE, NG_TABLE, NN_TABLE)


@njit(cache=True)
def _jacobian_dets(conn, kinds, coords, dn, ng, nnt, out):
    for e in range(conn.shape[0]):
        kind = kinds[e]
        for g in range(ng[kind]):
            jac = np.zeros((3, 3))
            for a in range(nnt[kind]):
                node = conn[e, a]
                for i in range(3):
                    for j in range(3):
                        jac[i, j] += dn[kind, g, a, i] * coords[node, j]
            out[e, g] = np.linalg.det(jac)


def jacobian_dets(conn, kinds, coords):
    """det(J) at every Gauss point, shape ``(nelem, 8)``; unused slots are +inf."""
    out = np.full((conn.shape[0], 8), np.inf)
    _jacobian_dets(conn, kinds, coords, DN_TABLE, NG_TABLE, NN_TABLE, out)
    return out


def element_volumes(conn, kinds, coords):
    dets = jacobian_dets(conn, kinds, coords)
    dets = np.where(np.isinf(dets), 0.0, dets)
    return np.einsum("eg,eg->e", dets, W_TABLE[kinds])
