import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskfem.elements import DEFAULT_GAUSS_COUNT, ElementKind, gauss_rule, shape_functions

REF_NODES = {
    ElementKind.TET4: np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float),
    ElementKind.PYR5: np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [0, 0, 1]],
                               float),
    ElementKind.PRI6: np.array([[0, 0, -1], [1, 0, -1], [0, 1, -1],
                                [0, 0, 1], [1, 0, 1], [0, 1, 1]], float),
    ElementKind.HEX8: np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                                [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], float),
}


def random_reference_point(kind, u):
    a, b, c = u
    if kind is ElementKind.TET4:
        p = np.array([a, b, c])
        return p / max(1.0, p.sum() * 1.01)
    if kind is ElementKind.PRI6:
        return np.array([a * 0.5, b * 0.5, 2 * c - 1])
    return 2 * np.array([a, b, c]) - 1


@pytest.mark.parametrize("kind,volume", [
    (ElementKind.TET4, 1 / 6), (ElementKind.PYR5, 8.0), (ElementKind.PRI6, 1.0),
    (ElementKind.HEX8, 8.0)])
def test_gauss_weights_sum_to_reference_volume(kind, volume):
    pts, w = gauss_rule(kind)
    assert len(w) == kind.gauss_count == DEFAULT_GAUSS_COUNT[kind]
    assert pts.shape == (len(w), 3)
    assert w.sum() == pytest.approx(volume, abs=1e-15)


def test_node_and_gauss_counts():
    assert [k.node_count for k in ElementKind] == [4, 5, 6, 8]
    assert [k.gauss_count for k in ElementKind] == [4, 8, 6, 8]


@pytest.mark.parametrize("kind", list(ElementKind))
def test_shape_functions_are_nodal(kind):
    for a, node in enumerate(REF_NODES[kind]):
        n, _ = shape_functions(kind, node)
        expected = np.zeros(kind.node_count)
        expected[a] = 1.0
        np.testing.assert_allclose(n, expected, atol=1e-14)


@pytest.mark.parametrize("kind", list(ElementKind))
@settings(max_examples=30, deadline=None)
@given(u=st.tuples(*[st.floats(0.01, 0.99)] * 3))
def test_partition_of_unity_and_linear_completeness(kind, u):
    p = random_reference_point(kind, u)
    n, dn = shape_functions(kind, p)
    assert n.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(dn.sum(axis=0), 0.0, atol=1e-14)
    mapped = n @ REF_NODES[kind]
    if kind is ElementKind.PYR5:
        # cube collapsed onto the apex: the base shrinks linearly with zeta
        xi, eta, zeta = p
        expected = [xi * (1 - zeta) / 2, eta * (1 - zeta) / 2, zeta]
        np.testing.assert_allclose(mapped, expected, atol=1e-14)
    else:
        # x(p) = sum_a N_a x_a reproduces the reference coordinates
        np.testing.assert_allclose(mapped, p, atol=1e-14)
        np.testing.assert_allclose(dn.T @ REF_NODES[kind], np.eye(3), atol=1e-14)


@pytest.mark.parametrize("kind", list(ElementKind))
def test_gradients_match_finite_differences(kind):
    p = random_reference_point(kind, (0.3, 0.2, 0.4))
    _, dn = shape_functions(kind, p)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (shape_functions(kind, p + e)[0] - shape_functions(kind, p - e)[0]) / (2 * h)
        np.testing.assert_allclose(dn[:, i], fd, atol=1e-8)


def integrate(kind, f):
    pts, w = gauss_rule(kind)
    return sum(wi * f(*p) for p, wi in zip(pts, w))


def test_quadrature_exactness_against_closed_forms():
    # unit tetrahedron: int x^2 = 1/60, int x*y = 1/120
    assert integrate(ElementKind.TET4, lambda x, y, z: x * x) == pytest.approx(1 / 60, abs=1e-15)
    assert integrate(ElementKind.TET4, lambda x, y, z: x * y) == pytest.approx(1 / 120, abs=1e-15)
    # cube: 2-point Gauss is exact up to cubic per direction
    assert integrate(ElementKind.HEX8, lambda x, y, z: x**2 * y**2 * z**3 + 1) == \
        pytest.approx(8.0, abs=1e-14)
    assert integrate(ElementKind.HEX8, lambda x, y, z: x**2 * y**2) == \
        pytest.approx(8 / 9, abs=1e-14)
    # prism: triangle x [-1, 1]; int x = 1/6 over the triangle, int z^2 = 2/3
    assert integrate(ElementKind.PRI6, lambda x, y, z: x * z * z) == pytest.approx(1 / 9, abs=1e-15)
