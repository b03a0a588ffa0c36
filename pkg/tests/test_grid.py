import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from compact_maxwell.grid import (
    DIRICHLET,
    INTERIOR,
    NEUMANN,
    InvalidGridError,
    build_3d_grid,
    build_tm_grid,
    classify_node,
)


def test_tm_shapes_n5():
    g = build_tm_grid(5)
    assert g.shape("Ez") == (6, 6)
    assert g.shape("Hx") == (6, 5)
    assert g.shape("Hy") == (5, 6)


@pytest.mark.parametrize("N", [0, 1, -3])
def test_small_grid_rejected(N):
    with pytest.raises(InvalidGridError):
        build_tm_grid(N)
    with pytest.raises(InvalidGridError):
        build_3d_grid(N)


def test_n2_single_ez_unknown():
    g = build_tm_grid(2)
    assert g.interior_shape("Ez") == (1, 1)
    X, Y = g.mesh("Ez")
    assert (X[g.interior_slices("Ez")].item(), Y[g.interior_slices("Ez")].item()) == (0.5, 0.5)


def test_hx_interior_count_by_enumeration():
    g = build_tm_grid(4)
    X, Y = g.mesh("Hx")
    inside = (X > 0) & (X < 1) & (Y > 0) & (Y < 1)
    assert inside.sum() == 12
    assert np.array_equal(inside, g.interior_mask("Hx"))


@given(st.integers(2, 300))
def test_coordinates_hit_faces_exactly(N):
    g = build_tm_grid(N)
    x = g.coords("Ez", 0)
    assert x[0] == 0.0 and x[-1] == 1.0
    assert g.h * N == 1.0 or abs(g.h * N - 1.0) <= 2**-52
    xh = g.coords("Hy", 0)
    assert np.all((xh > 0) & (xh < 1))


def test_3d_shapes():
    g = build_3d_grid(5)
    assert g.shape("Ez") == (6, 6, 5)
    assert build_3d_grid(2).shape("Hz") == (2, 2, 3)
    for N in (2, 3, 7):
        g = build_3d_grid(N)
        assert g.size("Ex") == g.size("Ey") == g.size("Ez")
        assert g.size("Hx") == g.size("Hy") == g.size("Hz")


def test_classify_examples():
    g = build_tm_grid(5)
    c = classify_node(g, "Ez", (0, 3))
    assert c.kind == DIRICHLET and c.faces == ("x0",)
    assert classify_node(g, "Hy", (2, 0)).kind == DIRICHLET
    assert classify_node(g, "Hx", (2, 2)).kind == INTERIOR
    c = classify_node(g, "Hx", (2, 0))
    assert c.kind == NEUMANN and c.faces == ("y0",) and c.is_interior
    assert classify_node(g, "Hx", (5, 4)).kind == DIRICHLET
    with pytest.raises(IndexError):
        classify_node(g, "Ez", (6, 0))
    with pytest.raises(IndexError):
        classify_node(g, "Hx", (0, 5))


@pytest.mark.parametrize("N", range(2, 9))
def test_classification_partitions_nodes(N):
    g = build_tm_grid(N)
    for comp in g.components:
        mask = g.interior_mask(comp)
        for idx in itertools.product(*(range(n) for n in g.shape(comp))):
            cls = classify_node(g, comp, idx)
            assert cls.kind in (DIRICHLET, NEUMANN, INTERIOR)
            assert cls.is_interior == bool(mask[idx])


def test_tm_is_restriction_of_3d():
    # z-independent TM fields: Ez, Hx, Hy of 3D carry the same x/y staggering
    N = 4
    g2, g3 = build_tm_grid(N), build_3d_grid(N)
    for comp in ("Ez", "Hx", "Hy"):
        assert g2.axis_kinds(comp) == g3.axis_kinds(comp)[:2]
        for idx in itertools.product(*(range(n) for n in g2.shape(comp))):
            k2 = classify_node(g2, comp, idx).kind
            k3 = classify_node(g3, comp, idx + (1,)).kind
            assert k2 == k3


def test_linear_index_last_axis_fastest():
    g = build_tm_grid(3)
    assert g.linear_index("Hx", (0, 1)) == 1
    assert g.linear_index("Hx", (1, 0)) == 3


def test_unknown_component():
    with pytest.raises(KeyError):
        build_tm_grid(4).shape("Ex")
