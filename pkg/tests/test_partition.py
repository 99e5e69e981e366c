import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskfem.elements import ElementKind
from taskfem.mesh import Mesh, build_element_adjacency, generate_box_mesh
from taskfem.metrics import lb_theoretical
from taskfem.partition import (
    build_chunk_graph, chunk_elements, color_elements, coloring_conflicts, element_weights,
    interior_conflicts, partition_weighted_greedy, read_partition_csv, split_with_separators,
    write_partition_csv,
)


def node_sets(mesh, elements=None):
    elements = range(mesh.nelem) if elements is None else elements
    return [set(mesh.element_nodes(e).tolist()) for e in elements]


def fan_of_tets(n):
    """``n`` tetrahedra sharing node 0, spaced along x."""
    coords = [[0, 0, 0]]
    elems = []
    for k in range(n):
        base = len(coords)
        coords += [[k + 1, 0, 0], [k + 1, 1, 0], [k + 1, 0, 1]]
        elems.append((ElementKind.TET4, [0, base, base + 1, base + 2]))
    return Mesh.from_elements(coords, elems, validate=False)


def disjoint_tets(n):
    coords, elems = [], []
    for k in range(n):
        base = len(coords)
        coords += [[2 * k, 0, 0], [2 * k + 1, 0, 0], [2 * k, 1, 0], [2 * k, 0, 1]]
        elems.append((ElementKind.TET4, list(range(base, base + 4))))
    return Mesh.from_elements(coords, elems)


def brute_best_two_way(weights):
    best = np.inf
    for mask in itertools.product([0, 1], repeat=len(weights)):
        m = np.array(mask, dtype=bool)
        if m.all() or not m.any():
            continue
        best = min(best, max(weights[m].sum(), weights[~m].sum()))
    return best


@pytest.mark.parametrize("mesh", [fan_of_tets(4), disjoint_tets(4)], ids=["fan", "disjoint"])
def test_weighted_example_is_optimal(mesh):
    w = np.array([1.0, 1.0, 2.0, 2.0])
    part = partition_weighted_greedy(mesh, 2, w)
    sums = sorted(part.weight_sums(w))
    assert sums == [3.0, 3.0]
    assert max(sums) == brute_best_two_way(w)
    assert lb_theoretical(part, w) == 1.0


def test_single_rank_takes_everything(small_mesh):
    part = partition_weighted_greedy(small_mesh, 1)
    assert np.all(part.rank_of == 0)
    np.testing.assert_array_equal(part.elements[0], np.arange(small_mesh.nelem))


def test_uniform_weights_two_ranks_balanced():
    m = generate_box_mesh(10, 10, 6, 1)
    part = partition_weighted_greedy(m, 2)
    assert lb_theoretical(part) >= 0.9


def test_weighted_balance_on_hybrid_mesh(medium_mesh):
    w = element_weights(medium_mesh)
    for n in (2, 3, 4, 8):
        part = partition_weighted_greedy(medium_mesh, n, w)
        assert lb_theoretical(part, w) >= 0.95


def test_partition_errors(small_mesh):
    with pytest.raises(ValueError):
        partition_weighted_greedy(small_mesh, small_mesh.nelem + 1)
    with pytest.raises(ValueError):
        partition_weighted_greedy(small_mesh, 0)
    with pytest.raises(ValueError):
        partition_weighted_greedy(small_mesh, 2, np.zeros(small_mesh.nelem))


def test_partition_is_deterministic(medium_mesh):
    a = partition_weighted_greedy(medium_mesh, 4, element_weights(medium_mesh))
    b = partition_weighted_greedy(medium_mesh, 4, element_weights(medium_mesh))
    np.testing.assert_array_equal(a.rank_of, b.rank_of)


def test_weights_follow_gauss_counts(small_mesh):
    w = element_weights(small_mesh)
    np.testing.assert_array_equal(w, np.array([4, 8, 6, 8])[small_mesh.kinds])
    w2 = element_weights(small_mesh, {ElementKind.TET4: 1})
    assert np.all(w2[small_mesh.kinds == ElementKind.TET4] == 1)


@settings(max_examples=20, deadline=None)
@given(dims=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(2, 4)),
       n_ranks=st.integers(1, 12), weighted=st.booleans())
def test_partition_is_exhaustive_disjoint_nonempty(dims, n_ranks, weighted):
    m = generate_box_mesh(*dims, 1)
    n_ranks = min(n_ranks, m.nelem)
    w = element_weights(m) if weighted else None
    part = partition_weighted_greedy(m, n_ranks, w)
    assert part.counts().sum() == m.nelem
    assert np.all(part.counts() > 0)
    allel = np.sort(np.concatenate(part.elements))
    np.testing.assert_array_equal(allel, np.arange(m.nelem))
    for r, el in enumerate(part.elements):
        assert np.all(part.rank_of[el] == r)
        assert np.all(np.diff(el) > 0)


@pytest.mark.parametrize("n,size,nchunks,last", [
    (1000, 100, 10, 100), (1005, 100, 11, 5), (200_400, 100, 2004, 100), (7, 10, 1, 7)])
def test_chunk_counts(n, size, nchunks, last):
    ck = chunk_elements(np.arange(n), size)
    assert ck.nsubd == nchunks
    assert len(ck.chunk(ck.nsubd - 1)) == last
    lengths = np.diff(ck.starts)
    assert np.all(lengths[:-1] == size)
    np.testing.assert_array_equal(np.concatenate([ck.chunk(c) for c in range(ck.nsubd)]),
                                  np.arange(n))


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_chunk_size_must_be_positive(bad):
    with pytest.raises(ValueError):
        chunk_elements(np.arange(10), bad)


def brute_chunk_graph(mesh, chunking):
    sets = []
    for c in range(chunking.nsubd):
        s = set()
        for e in chunking.chunk(c):
            s |= set(mesh.element_nodes(e).tolist())
        sets.append(s)
    return {(c, d) for c in range(len(sets)) for d in range(len(sets))
            if c == d or sets[c] & sets[d]}


def test_chunk_graph_examples():
    m = disjoint_tets(4)
    g = build_chunk_graph(m, chunk_elements(np.arange(4), 4))
    assert list(g[0]) == [0] and list(g.nneig) == [1]
    g = build_chunk_graph(m, chunk_elements(np.arange(4), 2))
    assert list(g[0]) == [0] and list(g[1]) == [1]


@pytest.mark.parametrize("seed", range(4))
def test_chunk_graph_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = generate_box_mesh(3, 3, 3, 1, jitter=0.1, seed=seed)
    elements = np.sort(rng.choice(m.nelem, size=m.nelem // 2, replace=False))
    ck = chunk_elements(elements, 10)
    g = build_chunk_graph(m, ck)
    got = {(c, int(d)) for c in range(len(g)) for d in g[c]}
    assert got == brute_chunk_graph(m, ck)
    assert all(c in g[c] for c in range(len(g)))


def test_coloring_examples():
    coords = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
    two = Mesh.from_elements(coords, [(ElementKind.TET4, [0, 1, 2, 3]),
                                      (ElementKind.TET4, [1, 2, 3, 4])], validate=False)
    assert color_elements(two).n_colors == 2
    assert color_elements(disjoint_tets(5)).n_colors == 1


def test_coloring_valid_and_bounded():
    m = generate_box_mesh(2, 2, 3, 1)
    col = color_elements(m)
    assert len(coloring_conflicts(m, col)) == 0
    adj = build_element_adjacency(m)
    assert col.n_colors <= 1 + adj.degrees().max()
    classes = col.color_classes()
    np.testing.assert_array_equal(np.sort(np.concatenate(classes)), np.arange(m.nelem))


def test_coloring_is_first_fit():
    m = generate_box_mesh(2, 2, 2, 1)
    col = color_elements(m)
    adj = build_element_adjacency(m)
    for e in range(m.nelem):
        used = {col.color_of[f] for f in adj[e] if f < e}
        assert col.color_of[e] == min(set(range(len(used) + 1)) - used)


def test_separator_examples():
    m = generate_box_mesh(2, 2, 2, 0)
    one = chunk_elements(np.arange(m.nelem), m.nelem)
    assert len(split_with_separators(m, one).separator) == 0

    coords = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
              [-1, 0, 0], [0, -1, 0], [0, 0, -1], [5, 5, 5], [6, 5, 5], [5, 6, 5], [5, 5, 6]]
    m = Mesh.from_elements(coords, [(ElementKind.TET4, [0, 1, 2, 3]),
                                    (ElementKind.TET4, [7, 8, 9, 10]),
                                    (ElementKind.TET4, [0, 4, 6, 5])], validate=False)
    split = split_with_separators(m, chunk_elements(np.arange(3), 2))
    # node 0 is shared by chunk 0 (element 0) and chunk 1 (element 2)
    np.testing.assert_array_equal(split.separator, [0, 2])
    assert [list(p) for p in split.interior] == [[1], []]


@pytest.mark.parametrize("seed", range(4))
def test_separator_brute_force(seed):
    m = generate_box_mesh(3, 3, 3, 1, jitter=0.1, seed=seed)
    ck = chunk_elements(np.arange(m.nelem), 7 + seed)
    split = split_with_separators(m, ck)
    groups = [set().union(*node_sets(m, ck.elements[p])) if len(p) else set()
              for p in split.interior]
    for a, b in itertools.combinations(range(len(groups)), 2):
        assert not groups[a] & groups[b]
    assert interior_conflicts(m, ck, split) == []
    allpos = np.sort(np.concatenate([*split.interior, split.separator]))
    np.testing.assert_array_equal(allpos, np.arange(m.nelem))
    # every separator element touches a node seen by two chunks
    chunk_of = ck.chunk_of()
    touch = {}
    for pos, e in enumerate(ck.elements):
        for n in m.element_nodes(e):
            touch.setdefault(int(n), set()).add(chunk_of[pos])
    for pos in split.separator:
        assert any(len(touch[int(n)]) >= 2 for n in m.element_nodes(ck.elements[pos]))
    for p in split.interior:
        for pos in p:
            assert all(len(touch[int(n)]) == 1 for n in m.element_nodes(ck.elements[pos]))


def test_partition_csv_round_trip(tmp_path, medium_mesh):
    part = partition_weighted_greedy(medium_mesh, 3)
    chunkings = [chunk_elements(part.elements[r], 50) for r in range(3)]
    colorings = [color_elements(medium_mesh, part.elements[r]) for r in range(3)]
    path = tmp_path / "part.csv"
    write_partition_csv(path, part, chunkings, colorings)
    assert path.read_text().splitlines()[0] == "element_id,rank,chunk,color"
    rank, chunk, color = read_partition_csv(path)
    np.testing.assert_array_equal(rank, part.rank_of)
    for r in range(3):
        np.testing.assert_array_equal(chunk[part.elements[r]], chunkings[r].chunk_of())
        np.testing.assert_array_equal(color[part.elements[r]], colorings[r].color_of)
