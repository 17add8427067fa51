import math

import numpy as np
import pytest

from vpinn2d.assembly import (
    assemble_element_tensors,
    assemble_forcing,
    assemble_regular_premultipliers,
    dump_element_tensors,
    mesh_point_sampler,
    read_array,
    rectangle_sampler,
    sample_boundary,
    sample_sensors,
    write_array,
)
from vpinn2d.basis import reference_basis, reference_values, square_rule
from vpinn2d.errors import AssemblyError, DegenerateElementError, InvalidArgumentError, InvalidModeError, MalformedFileError
from vpinn2d.geometry import Mesh, gear_mesh, generate_structured_mesh, skewed_fixture_mesh
from vpinn2d.problems import resolve_field


def tensors_for(mesh, n_test=5, n_quad=5):
    rule = square_rule(n_quad)
    basis = reference_basis(n_test, rule)
    return assemble_element_tensors(mesh, basis, rule), basis, rule


def test_single_element_shapes():
    t, _, _ = tensors_for(generate_structured_mesh(1, 1))
    assert t.grad_x_tensor.shape == t.grad_y_tensor.shape == t.test_tensor.shape == (1, 25, 25)
    assert t.quad_coords.shape == (25, 2)


def test_structured_slices_are_scaled_copies():
    one, basis, rule = tensors_for(generate_structured_mesh(1, 1))
    four, _, _ = tensors_for(generate_structured_mesh(2, 2))
    # unit square: det 1/4, dxi/dx 2. Half-size element: det 1/16, dxi/dx 4.
    np.testing.assert_allclose(one.grad_x_tensor[0], rule.weights * 0.25 * 2 * basis.grad_xi, rtol=1e-14)
    for k in range(4):
        np.testing.assert_allclose(four.grad_x_tensor[k], one.grad_x_tensor[0] * (1 / 16 * 4) / (1 / 4 * 2), rtol=1e-14)
        np.testing.assert_allclose(four.test_tensor[k], one.test_tensor[0] / 4, rtol=1e-14)


def test_skewed_slices_vary():
    t, _, _ = tensors_for(skewed_fixture_mesh())
    assert np.ptp(t.det[0]) > 1e-3


def test_quad_coords_element_major():
    m = generate_structured_mesh(2, 1)
    t, _, _ = tensors_for(m, 2, 3)
    assert np.all(t.quad_coords[:9, 0] < 0.5) and np.all(t.quad_coords[9:, 0] > 0.5)


def test_degenerate_element_id():
    nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [2, 0], [2, 1]], dtype=float)
    m = Mesh(nodes, np.array([[0, 1, 2, 3], [1, 2, 5, 4]]), np.arange(6))
    with pytest.raises(DegenerateElementError) as info:
        tensors_for(m)
    assert info.value.element_id == 1


def test_forcing_zero_and_parity():
    t, basis, rule = tensors_for(generate_structured_mesh(1, 1), 5, 8)
    assert not np.any(assemble_forcing(t, resolve_field("zero")))
    F = assemble_forcing(t, resolve_field("constant", value=1.0))
    # integral of v_j over the unit square by the same quadrature in reference coordinates
    np.testing.assert_allclose(F[:, 0], 0.25 * basis.values @ rule.weights, atol=1e-15)
    # test functions with an odd 1D factor (even index k) integrate to zero
    for j in range(25):
        jx, jy = j % 5, j // 5
        if (jx + 1) % 2 == 0 or (jy + 1) % 2 == 0:
            assert abs(F[j, 0]) <= 1e-12


def test_forcing_matches_brute_force_integration():
    omega = 2 * math.pi
    f = resolve_field("sin_forcing", omega=omega)
    mesh = generate_structured_mesh(2, 2)
    t, _, _ = tensors_for(mesh, 3, 20)
    F = assemble_forcing(t, f)

    def trapezoid(n):
        s = np.linspace(-1, 1, n + 1)
        w = np.full(n + 1, 2 / n)
        w[[0, -1]] /= 2
        XI, ETA = np.meshgrid(s, s)
        vals = reference_values(3, np.column_stack([XI.ravel(), ETA.ravel()]))[0]
        out = np.empty((9, 4))
        for k, verts in enumerate(mesh.element_vertices()):
            x0, y0 = verts[0]
            x = x0 + (XI.ravel() + 1) / 4
            y = y0 + (ETA.ravel() + 1) / 4
            out[:, k] = (vals * f(x, y) * np.outer(w, w).ravel()).sum(axis=1) / 16
        return out

    # Richardson on two trapezoid grids removes the O(h^2) term
    brute = (4 * trapezoid(400) - trapezoid(200)) / 3
    np.testing.assert_allclose(F, brute, atol=1e-6)


def test_forcing_non_finite_reports_location():
    t, _, _ = tensors_for(generate_structured_mesh(1, 1), 2, 3)
    with pytest.raises(AssemblyError, match="element 0"):
        assemble_forcing(t, lambda x, y: np.where(x > 0.5, np.nan, 0.0))


def test_regular_premultipliers():
    mesh = generate_structured_mesh(2, 2)
    rule = square_rule(4)
    pm = assemble_regular_premultipliers(mesh, reference_basis(3, rule), rule)
    np.testing.assert_allclose(pm.J, 1 / 16)
    np.testing.assert_allclose(pm.J_x, 1 / 4)
    np.testing.assert_allclose(pm.J_y, 1 / 4)
    with pytest.raises(InvalidModeError):
        assemble_regular_premultipliers(skewed_fixture_mesh(), reference_basis(3, rule), rule)


def on_unit_perimeter(p):
    d = np.minimum.reduce([p[:, 0], 1 - p[:, 0], p[:, 1], 1 - p[:, 1]])
    return np.abs(d) <= 1e-12


def test_boundary_sampling():
    mesh = generate_structured_mesh(3, 3)
    b = sample_boundary(mesh, 8, resolve_field("zero"))
    assert len(b) == 8 and not np.any(b.values) and on_unit_perimeter(b.points).all()
    b = sample_boundary(mesh, 1000, resolve_field("sin_exact"), seed=3)
    assert on_unit_perimeter(b.points).all()
    gaps = np.linalg.norm(b.points[:, None] - b.points[None], axis=-1) + np.eye(1000)
    assert gaps.min() > 0


def test_gear_boundary_points_on_edges():
    mesh = gear_mesh()
    b = sample_boundary(mesh, 6096, resolve_field("zero"))
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    c = mesh.nodes[mesh.boundary_edges[:, 1]]
    d = c - a
    t = np.clip(np.einsum("pek,ek->pe", b.points[:, None] - a[None], d) / np.einsum("ek,ek->e", d, d), 0, 1)
    dist = np.linalg.norm(b.points[:, None] - (a[None] + t[..., None] * d[None]), axis=-1).min(axis=1)
    assert dist.max() < 1e-12


def test_boundary_needs_edges():
    m = generate_structured_mesh(1, 1)
    bare = Mesh(m.nodes, m.elements, m.boundary_node_ids)
    with pytest.raises(InvalidArgumentError):
        sample_boundary(bare, 4, resolve_field("zero"))


def test_sensors():
    u = resolve_field("tanh_exact", eps=0.3)
    s = sample_sensors(rectangle_sampler((-1, 1), (-1, 1)), 50, u, seed=4)
    assert len(s) == 50 and np.all(np.abs(s.points) <= 1)
    np.testing.assert_array_equal(s.observations, u(s.points[:, 0], s.points[:, 1]))
    again = sample_sensors(rectangle_sampler((-1, 1), (-1, 1)), 50, u, seed=4)
    assert s.points.tobytes() == again.points.tobytes()
    one = sample_sensors(mesh_point_sampler(gear_mesh()), 1, resolve_field("zero"))
    assert one.observations.tolist() == [0.0]


def test_array_dump_round_trip(tmp_path):
    t, _, _ = tensors_for(skewed_fixture_mesh(), 2, 3)
    t = t.with_forcing(assemble_forcing(t, resolve_field("constant")))
    files = dump_element_tensors(t, tmp_path)
    assert len(files) == 5
    np.testing.assert_array_equal(read_array(tmp_path / "grad_x_tensor.bin"), t.grad_x_tensor)
    write_array(tmp_path / "x.bin", np.arange(6.0).reshape(2, 3))
    raw = (tmp_path / "x.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(MalformedFileError):
        read_array(tmp_path / "bad.bin")
