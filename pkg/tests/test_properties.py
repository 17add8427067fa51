"""Property-based checks of the quadrature, the bilinear map and the kernels."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from vpinn2d.assembly import assemble_element_tensors, assemble_forcing, assemble_regular_premultipliers
from vpinn2d.basis import gauss_rule_1d, reference_basis, square_rule
from vpinn2d.geometry import bilinear_jacobian, bilinear_map, generate_structured_mesh, perturbed_structured_mesh
from vpinn2d.losses import (
    PdeCoefficients,
    variational_loss_loop_oracle,
    variational_loss_matrix_regular,
    variational_loss_tensor,
)
from vpinn2d.network import init_network
from vpinn2d.problems import resolve_field

CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@st.composite
def convex_quads(draw):
    # jittered rectangle: stays convex and counterclockwise
    w = draw(st.floats(0.5, 3.0))
    h = draw(st.floats(0.5, 3.0))
    jitter = np.array(draw(st.lists(st.floats(-0.2, 0.2), min_size=8, max_size=8))).reshape(4, 2)
    origin = np.array(draw(st.lists(st.floats(-5, 5), min_size=2, max_size=2)))
    return origin + np.array([[0, 0], [w, 0], [w, h], [0, h]]) + jitter * min(w, h)


@settings(max_examples=60, deadline=None)
@given(convex_quads())
def test_corners_map_to_vertices(quad):
    np.testing.assert_allclose(bilinear_map(quad, CORNERS), quad, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(convex_quads())
def test_quadrature_of_det_is_area(quad):
    r = square_rule(3)
    det = bilinear_jacobian(quad, r.points).det
    x, y = quad[:, 0], quad[:, 1]
    shoelace = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    assert abs(np.dot(r.weights, det) - shoelace) <= 1e-12 * shoelace


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.data())
def test_gauss_rule_integrates_random_polynomials(n, data):
    coeffs = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=2 * n, max_size=2 * n)))
    r = gauss_rule_1d(n)
    poly = np.polynomial.Polynomial(coeffs)
    exact = poly.integ()(1.0) - poly.integ()(-1.0)
    assert abs(np.dot(r.weights, poly(r.points)) - exact) <= 1e-12 * max(1.0, np.abs(coeffs).sum())


@settings(max_examples=15, deadline=None)
@given(
    st.integers(1, 3),
    st.integers(1, 4),
    st.integers(2, 6),
    st.integers(0, 2**31 - 1),
    st.booleans(),
    st.booleans(),
)
def test_kernels_agree(n, n_test, n_quad, seed, skewed, cd2d):
    mesh = perturbed_structured_mesh(n, n, 0.3, seed=seed) if skewed else generate_structured_mesh(n, n)
    rule = square_rule(n_quad)
    basis = reference_basis(n_test, rule)
    f = resolve_field("gear_forcing")
    tensors = assemble_element_tensors(mesh, basis, rule)
    tensors = tensors.with_forcing(assemble_forcing(tensors, f))
    coeffs = PdeCoefficients(0.7, (0.3, -1.1), "cd2d") if cd2d else PdeCoefficients()
    ev = init_network([2, 8, 8, 1], seed=seed).evaluate(tensors.quad_coords, 1)
    oracle = variational_loss_loop_oracle(mesh, basis, rule, ev, coeffs, f)
    tensor, _ = variational_loss_tensor(tensors, ev, coeffs)
    assert abs(tensor - oracle) <= 1e-12 * abs(oracle)
    if not skewed:
        matrix, _ = variational_loss_matrix_regular(assemble_regular_premultipliers(mesh, basis, rule, f), ev, coeffs)
        assert abs(matrix - oracle) <= 1e-12 * abs(oracle)
