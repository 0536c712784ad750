import numpy as np
import pytest

from stokes_biot.fem import ElementKind
from stokes_biot.mesh import Subdomain, build_mesh, generate_two_layer_rect
from stokes_biot.spaces import (BlockLayout, DofSet, SpaceError, build_space, cell_quadrature, dirichlet_dofs,
                                evaluate, interpolate, l2_project, l2_project_function, mass_matrix)
from stokes_biot.system import build_family_spaces

F, P = Subdomain.FLUID, Subdomain.POROUS


def unit_layers():
    return generate_two_layer_rect((0, 2), (0, 2), (-2, 0), 1, 1)


def square():
    return build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)], [0, 0],
                      [(0, 1), (1, 2), (2, 3), (3, 0)], ["b", "r", "t", "l"])


def test_dof_counts():
    m = unit_layers()
    s = build_space(m, F, ElementKind.P2, 1)
    fluid_cells = m.cells_of(F)
    n_vertices = len(np.unique(m.cells[fluid_cells]))
    n_edges = len(np.unique(m.cell_edges[fluid_cells]))
    assert s.n_dofs == n_vertices + n_edges == 9
    assert build_space(square(), F, ElementKind.P1, 2).n_dofs == 8
    assert build_space(square(), F, ElementKind.P1_BUBBLE, 2).n_dofs == 12


def test_spaces_do_not_cross_the_interface():
    m = unit_layers()
    u = build_space(m, F, ElementKind.P2, 2, "u")
    assert set(u.cells) == set(m.cells_of(F))
    assert (m.vertices[u.node_vertex[u.node_vertex >= 0], 1] >= 0).all()


def test_vector_dofs_interleave_components():
    s = build_space(square(), F, ElementKind.P1, 2)
    np.testing.assert_array_equal(s.cell_dofs[0], [2 * n + c for n in s.cell_nodes[0] for c in range(2)])


def test_empty_subdomain_rejected():
    with pytest.raises(SpaceError):
        build_space(square(), P, ElementKind.P1, 1)


def test_numbering_is_deterministic():
    a = build_family_spaces(unit_layers())
    b = build_family_spaces(unit_layers())
    for k in a:
        np.testing.assert_array_equal(a[k].cell_dofs, b[k].cell_dofs)


def test_block_layout_offsets():
    lay = BlockLayout(("u", "pF", "d", "pP", "phi"), (4, 2, 4, 3, 1))
    assert lay.offsets == {"u": 0, "pF": 4, "d": 6, "pP": 10, "phi": 13}
    assert lay.total == 14
    v = np.arange(14.0)
    np.testing.assert_array_equal(lay.join(lay.split(v)), v)
    with pytest.raises(ValueError):
        BlockLayout(("u", "u"), (1, 1))


def test_dofset_merges_and_rejects_conflicts():
    d = DofSet([3, 1, 3], [2.0, 1.0, 2.0])
    np.testing.assert_array_equal(d.indices, [1, 3])
    with pytest.raises(ValueError, match="conflicting"):
        DofSet([1, 1], [0.0, 1.0])


def test_dirichlet_zero_and_normal_mask():
    m = generate_two_layer_rect((0, 1), (0, 1), (-1, 0), 2, 2, markers={"fluid_left": "axis"})
    u = build_space(m, F, ElementKind.P2, 2, "u")
    zero = dirichlet_dofs(u, "fluid_u")
    assert len(zero) > 0 and np.all(zero.values == 0)
    normal = dirichlet_dofs(u, "axis", "normal")
    assert np.all(normal.indices % 2 == 0)
    assert len(normal) == len(dirichlet_dofs(u, "axis")) // 2
    with pytest.raises(KeyError):
        dirichlet_dofs(u, "missing")


def test_dirichlet_samples_values_at_nodes():
    m = generate_two_layer_rect((0, 1), (0, 1), (-1, 0), 2, 1)
    u = build_space(m, F, ElementKind.P2, 2, "u")
    d = dirichlet_dofs(u, "fluid_u", None, lambda x, y, t: np.array([np.sin(t) * x, y]), 0.0)
    xy = u.node_coords[d.indices // 2]
    expected = np.where(d.indices % 2 == 0, 0.0, xy[:, 1])
    np.testing.assert_allclose(d.values, expected)


def test_interpolation_reproduces_quadratics():
    m = generate_two_layer_rect((0, 1), (0, 1), (-1, 0), 3, 2)
    s = build_space(m, None, ElementKind.P2, 1)
    rng = np.random.default_rng(0)
    q = cell_quadrature(m, np.arange(m.n_cells), 4)
    for fn in (lambda x, y, t: x + 2 * y, lambda x, y, t: x**2, lambda x, y, t: 3.5 + 0 * x):
        c = interpolate(s, fn)
        vals, _ = evaluate(s, c, q)
        x, y = q.points[..., 0], q.points[..., 1]
        np.testing.assert_allclose(vals, fn(x, y, 0), atol=1e-13)
    c = interpolate(s, 2.0)
    assert np.all(c == 2.0)
    del rng


def test_bubble_coefficients_are_zero():
    s = build_space(square(), F, ElementKind.P1_BUBBLE, 2)
    c = interpolate(s, lambda x, y, t: np.array([x, y]))
    bubbles = s.cell_nodes[:, 3]
    assert np.all(c[2 * bubbles] == 0) and np.all(c[2 * bubbles + 1] == 0)


def test_projection_identities():
    m = generate_two_layer_rect((0, 1), (0, 1), (-1, 0), 2, 2)
    p2 = build_space(m, None, ElementKind.P2, 1)
    p1 = build_space(m, None, ElementKind.P1, 1)
    lin = interpolate(p2, lambda x, y, t: 1 + x - y)
    np.testing.assert_allclose(l2_project(lin, p2, p1), interpolate(p1, lambda x, y, t: 1 + x - y), atol=1e-12)
    c = np.sin(np.arange(p2.n_dofs))
    np.testing.assert_allclose(l2_project(c, p2, p2), c, atol=1e-11)


def test_projection_of_x_squared_matches_normal_equations():
    tri = build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [0])
    p2 = build_space(tri, None, ElementKind.P2, 1)
    p1 = build_space(tri, None, ElementKind.P1, 1)
    got = l2_project(interpolate(p2, lambda x, y, t: x**2), p2, p1)
    # normal equations in the barycentric basis: M c = (x^2, lambda_i)
    M = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24
    b = np.array([1 / 60, 1 / 20, 1 / 60])  # integrals of x^2 times (1-x-y), x, y
    expected = np.linalg.solve(M, b)
    order = p1.node_vertex
    np.testing.assert_allclose(got, expected[order], atol=1e-13)


def test_function_projection_and_mass():
    m = generate_two_layer_rect((0, 1), (0, 1), (-1, 0), 2, 2)
    s = build_space(m, P, ElementKind.P2, 2, "d")
    c = l2_project_function(lambda x, y, t: np.array([x * y, 1 - y**2]), s)
    np.testing.assert_allclose(c, interpolate(s, lambda x, y, t: np.array([x * y, 1 - y**2])), atol=1e-12)
    M = mass_matrix(build_space(m, P, ElementKind.P1, 1))
    assert M.sum() == pytest.approx(1.0)
