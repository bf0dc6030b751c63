import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_edge_boundary, naive_neighbors, pairwise_diameter
from rfimlab.lattice import (
    Lattice,
    axis_extents,
    cluster_diameter,
    edge_boundary,
    inner_boundary,
    is_connected,
    label_components,
    outer_boundary,
)


def test_neighbors_torus_corner():
    lat = Lattice(2, 3, wrap=True)
    assert set(lat.neighbors((0, 0))) == {(1, 0), (2, 0), (0, 1), (0, 2)}


def test_neighbors_open_corner():
    lat = Lattice(2, 3, wrap=False)
    assert set(lat.neighbors((0, 0))) == {(1, 0), (0, 1)}


def test_degree_3d_torus():
    lat = Lattice(3, 5)
    for v in [(0, 0, 0), (2, 4, 1), (4, 4, 4)]:
        assert len(set(lat.neighbors(v))) == 6


def test_out_of_range_coordinate():
    with pytest.raises(ValueError):
        Lattice(2, 3).neighbors((3, 0))
    with pytest.raises(ValueError):
        Lattice(2, 3).neighbors((0, 0, 0))


def test_small_torus_rejected():
    with pytest.raises(ValueError):
        Lattice(2, 2, wrap=True)
    Lattice(2, 2, wrap=False)


@pytest.mark.parametrize("shape,wrap", [((4, 4), True), ((3, 5), False), ((3, 3, 3), True), ((2, 3), False)])
def test_neighbor_table_matches_naive(shape, wrap):
    lat = Lattice.rect(shape, wrap=wrap)
    for i in range(lat.n):
        got = {lat.coord(int(j)) for j in lat.neighbor_table[i] if j >= 0}
        assert got == set(naive_neighbors(shape, wrap, lat.coord(i)))


def test_index_roundtrip_and_symmetry():
    lat = Lattice(3, 4)
    for i in range(lat.n):
        assert lat.index(lat.coord(i)) == i
        for j in lat.neighbor_table[i]:
            assert i in lat.neighbor_table[j]
    assert lat.n == 64
    assert len(lat.edges) == 3 * 64


def test_edge_boundary_examples():
    lat = Lattice(2, 5)
    assert edge_boundary(lat, lat.mask([(2, 2)])) == 4
    assert edge_boundary(lat, lat.mask([(1, 1), (1, 2), (2, 1), (2, 2)])) == 8


def test_edge_boundary_errors():
    lat = Lattice(2, 4)
    with pytest.raises(ValueError):
        edge_boundary(lat, np.zeros(lat.n, bool))
    with pytest.raises(ValueError):
        edge_boundary(lat, np.ones(lat.n, bool))


def test_edge_boundary_random_vs_naive():
    lat = Lattice(3, 4)
    rng = np.random.default_rng(7)
    for _ in range(20):
        A = rng.random(lat.n) < 0.4
        if A.any() and not A.all():
            assert edge_boundary(lat, A) == naive_edge_boundary(lat, A)
            # the boundary of a set and of its complement coincide on a torus
            assert edge_boundary(lat, A) == edge_boundary(lat, ~A)


def test_boundaries():
    lat = Lattice(2, 5, wrap=False)
    A = lat.box((2, 2), 1)
    assert inner_boundary(lat, A).sum() == 8
    assert outer_boundary(lat, A).sum() == 12
    assert not (inner_boundary(lat, A) & ~A).any()


def test_cluster_diameter_examples():
    lat = Lattice(2, 6)
    assert cluster_diameter(lat, lat.mask([(1, 1)])) == 0
    assert cluster_diameter(lat, lat.mask([(0, 1), (1, 1), (2, 1), (3, 1)])) == 3
    assert cluster_diameter(lat, lat.mask([(1, 1), (2, 1), (2, 2)])) == 1


def test_cluster_diameter_rejects_bad_input():
    lat = Lattice(2, 6)
    with pytest.raises(ValueError):
        cluster_diameter(lat, lat.mask([(0, 0), (3, 3)]))
    with pytest.raises(ValueError):
        cluster_diameter(lat, np.zeros(lat.n, bool))


def test_diameter_wraps_on_torus():
    lat = Lattice(2, 8)
    seg = lat.mask([(6, 0), (7, 0), (0, 0), (1, 0)])
    assert cluster_diameter(lat, seg) == 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.booleans(), st.floats(0.2, 0.8))
def test_components_and_extents_vs_naive(seed, wrap, density):
    lat = Lattice(2, 6, wrap=wrap)
    A = np.random.default_rng(seed).random(lat.n) < density
    labels, count = label_components(lat, A)
    assert (labels > 0).sum() == A.sum()
    for lab in range(1, count + 1):
        comp = labels == lab
        assert is_connected(lat, comp)
        assert axis_extents(lat, comp).max() == pairwise_diameter(lat, comp)
    # no edge joins two different labels
    e = lat.edges
    both = A[e[:, 0]] & A[e[:, 1]]
    assert (labels[e[both, 0]] == labels[e[both, 1]]).all()


def test_isoperimetric_weak_form():
    lat = Lattice(2, 8)
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 50:
        A = lat.box(tuple(rng.integers(0, 8, 2)), int(rng.integers(0, 3))) & (rng.random(lat.n) < 0.8)
        labels, count = label_components(lat, A)
        if count == 0:
            continue
        comp = labels == 1
        if comp.sum() > lat.n // 2:
            continue
        assert edge_boundary(lat, comp) >= comp.sum() ** 0.5
        checked += 1
