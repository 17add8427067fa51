import numpy as np
import pytest

from vpinn2d.assembly import (
    BoundarySet,
    SensorSet,
    assemble_element_tensors,
    assemble_forcing,
    assemble_regular_premultipliers,
)
from vpinn2d.basis import reference_basis, square_rule
from vpinn2d.errors import ContractViolationError, InvalidArgumentError, InvalidModeError
from vpinn2d.geometry import generate_structured_mesh, perturbed_structured_mesh, skewed_fixture_mesh
from vpinn2d.losses import (
    LossWeights,
    PdeCoefficients,
    dirichlet_loss,
    pinn_strong_residual_loss,
    sensor_loss,
    total_loss,
    variational_loss_loop_oracle,
    variational_loss_matrix_regular,
    variational_loss_tensor,
)
from vpinn2d.network import NetworkEvaluation, init_network
from vpinn2d.problems import resolve_field

GEAR_F = resolve_field("gear_forcing")


def setup(mesh, f, n_test=3, n_quad=4, channels=1, seed=0, scalars=None):
    rule = square_rule(n_quad)
    basis = reference_basis(n_test, rule)
    t = assemble_element_tensors(mesh, basis, rule)
    t = t.with_forcing(assemble_forcing(t, f))
    net = init_network([2, 6, 6, channels], seed=seed, trainable_scalar_inits=scalars)
    return t, basis, rule, net.evaluate(t.quad_coords, 1)


def zero_eval(n):
    z = np.zeros(n)
    return NetworkEvaluation(z, z.copy(), z.copy())


def test_zero_cases():
    t, *_ = setup(generate_structured_mesh(2, 2), resolve_field("zero"))
    assert variational_loss_tensor(t, zero_eval(len(t.quad_coords)), PdeCoefficients())[0] == 0.0
    const = zero_eval(len(t.quad_coords))
    const.u[:] = 3.0
    assert variational_loss_tensor(t, const, PdeCoefficients())[0] == 0.0


COEFFS = [
    PdeCoefficients(),
    PdeCoefficients(1.0, (0.1, 0.0), "cd2d"),
    PdeCoefficients(0.3, (0.4, -0.7), "cd2d"),
]


@pytest.mark.parametrize("coeffs", COEFFS)
@pytest.mark.parametrize("mesh", [skewed_fixture_mesh(), perturbed_structured_mesh(2, 3, 0.3, seed=1)])
def test_tensor_matches_loop_oracle(mesh, coeffs):
    t, basis, rule, ev = setup(mesh, GEAR_F)
    oracle = variational_loss_loop_oracle(mesh, basis, rule, ev, coeffs, GEAR_F)
    loss, R = variational_loss_tensor(t, ev, coeffs)
    assert loss == pytest.approx(oracle, rel=1e-12)
    assert R.shape == (9, mesh.n_elem)


def test_convection_contributes():
    mesh = skewed_fixture_mesh()
    t, _, _, ev = setup(mesh, GEAR_F)
    assert variational_loss_tensor(t, ev, COEFFS[1])[0] != pytest.approx(
        variational_loss_tensor(t, ev, PdeCoefficients(1.0, (0.0, 0.0), "cd2d"))[0], rel=1e-6)


def test_variable_eps_matches_oracle():
    mesh = skewed_fixture_mesh()
    t, basis, rule, ev = setup(mesh, GEAR_F, channels=2)
    coeffs = PdeCoefficients(b=(1.0, 0.5), mode="cd2d_variable_eps")
    oracle = variational_loss_loop_oracle(mesh, basis, rule, ev, coeffs, GEAR_F)
    assert variational_loss_tensor(t, ev, coeffs)[0] == pytest.approx(oracle, rel=1e-12)


def test_matrix_and_ratio_mode_on_axis_aligned():
    mesh = generate_structured_mesh(2, 2)
    coeffs = COEFFS[2]
    t, basis, rule, ev = setup(mesh, GEAR_F)
    pm = assemble_regular_premultipliers(mesh, basis, rule, GEAR_F)
    tensor = variational_loss_tensor(t, ev, coeffs)[0]
    assert variational_loss_matrix_regular(pm, ev, coeffs)[0] == pytest.approx(tensor, rel=1e-12)
    general = variational_loss_loop_oracle(mesh, basis, rule, ev, coeffs, GEAR_F)
    ratio = variational_loss_loop_oracle(mesh, basis, rule, ev, coeffs, GEAR_F, mode="jacobian_ratio")
    assert ratio == pytest.approx(general, rel=1e-12)


def test_matrix_single_element_equals_oracle():
    mesh = generate_structured_mesh(1, 1, (0, 2), (-1, 0.5))
    t, basis, rule, ev = setup(mesh, GEAR_F, 4, 6)
    pm = assemble_regular_premultipliers(mesh, basis, rule, GEAR_F)
    oracle = variational_loss_loop_oracle(mesh, basis, rule, ev, COEFFS[1], GEAR_F)
    assert variational_loss_matrix_regular(pm, ev, COEFFS[1])[0] == pytest.approx(oracle, rel=1e-12)


def test_ratio_mode_rejects_skewed():
    mesh = skewed_fixture_mesh()
    _, basis, rule, ev = setup(mesh, GEAR_F)
    with pytest.raises(InvalidModeError):
        variational_loss_loop_oracle(mesh, basis, rule, ev, PdeCoefficients(), GEAR_F, mode="jacobian_ratio")


def test_oracle_unit_forcing_hand_value():
    mesh = generate_structured_mesh(1, 1)
    rule = square_rule(10)
    basis = reference_basis(5, rule)
    one = resolve_field("constant", value=1.0)
    loss = variational_loss_loop_oracle(mesh, basis, rule, zero_eval(rule.n_quad), PdeCoefficients(), one)
    integrals = 0.25 * basis.values @ rule.weights
    assert loss == pytest.approx(np.mean(integrals**2), rel=1e-13)


def test_layout_mismatch():
    t, *_ = setup(generate_structured_mesh(2, 2), GEAR_F)
    with pytest.raises(ContractViolationError):
        variational_loss_tensor(t, zero_eval(5), PdeCoefficients())


def test_variable_mode_needs_two_channels():
    t, _, _, ev = setup(skewed_fixture_mesh(), GEAR_F)
    with pytest.raises(ContractViolationError):
        variational_loss_tensor(t, ev, PdeCoefficients(mode="cd2d_variable_eps"))


def test_poisson_rejects_coefficients():
    with pytest.raises(InvalidArgumentError):
        PdeCoefficients(eps=2.0)
    with pytest.raises(InvalidArgumentError):
        PdeCoefficients(mode="heat")


def _fd_field_check(loss_fn, ev, cot, fields, scalar=None):
    """Directional finite difference of the loss along a random perturbation
    of each evaluation field, compared with the cotangent."""
    rng = np.random.default_rng(0)
    h = 1e-6
    for name in fields:
        d = rng.normal(size=getattr(ev, name).shape)
        base = getattr(ev, name).copy()
        setattr(ev, name, base + h * d)
        up = loss_fn(ev)
        setattr(ev, name, base - h * d)
        down = loss_fn(ev)
        setattr(ev, name, base)
        assert np.dot(getattr(cot, name), d) == pytest.approx((up - down) / (2 * h), rel=1e-6)
    if scalar:
        e = ev.scalars[scalar]
        ev.scalars[scalar] = e + h
        up = loss_fn(ev)
        ev.scalars[scalar] = e - h
        down = loss_fn(ev)
        ev.scalars[scalar] = e
        assert cot.scalars[scalar] == pytest.approx((up - down) / (2 * h), rel=1e-6)


@pytest.mark.parametrize("kernel", ["tensor", "matrix"])
@pytest.mark.parametrize("variant", ["constant", "scalar", "variable"])
def test_kernel_cotangents(kernel, variant):
    mesh = generate_structured_mesh(2, 1)
    channels = 2 if variant == "variable" else 1
    scalars = {"eps": 0.8} if variant == "scalar" else None
    t, basis, rule, ev = setup(mesh, GEAR_F, channels=channels, scalars=scalars)
    coeffs = {
        "constant": PdeCoefficients(0.5, (0.3, 0.2), "cd2d"),
        "scalar": PdeCoefficients(1.0, (0.3, 0.2), "cd2d", eps_param="eps"),
        "variable": PdeCoefficients(b=(0.3, 0.2), mode="cd2d_variable_eps"),
    }[variant]
    if kernel == "tensor":
        fn = lambda e, g=False: variational_loss_tensor(t, e, coeffs, with_grad=g)
    else:
        pm = assemble_regular_premultipliers(mesh, basis, rule, GEAR_F)
        fn = lambda e, g=False: variational_loss_matrix_regular(pm, e, coeffs, with_grad=g)
    _, _, cot = fn(ev, True)
    fields = ["du_dx", "du_dy"] + (["eps"] if variant == "variable" else [])
    _fd_field_check(lambda e: fn(e)[0], ev, cot, fields, "eps" if variant == "scalar" else None)


def test_dirichlet_and_sensor():
    g = np.array([0.5, -1.0, 2.0])
    b = BoundarySet(np.zeros((3, 2)), g)
    assert dirichlet_loss(g, b) == 0.0
    assert dirichlet_loss(g + 1, b) == pytest.approx(1.0)
    pred = np.random.default_rng(2).normal(size=3)
    assert dirichlet_loss(pred, b) == pytest.approx(np.sum((pred - g) ** 2) / 3, rel=1e-15)
    loss, grad = dirichlet_loss(pred, b, with_grad=True)
    np.testing.assert_allclose(grad, 2 * (pred - g) / 3)
    with pytest.raises(ContractViolationError):
        dirichlet_loss(pred[:2], b)
    s = SensorSet(np.zeros((1, 2)), np.array([1.0]))
    assert sensor_loss(np.array([1.0]), s) == 0.0
    assert sensor_loss(np.array([1.5]), s) == 0.25


def test_pinn_strong_residual():
    z = np.zeros(4)
    ev = NetworkEvaluation(z, z, z, z, z)
    assert pinn_strong_residual_loss(ev, PdeCoefficients(), z) == 0.0
    net = init_network([2, 5, 1], seed=3, trainable_scalar_inits={"eps": 0.6})
    pts = np.random.default_rng(3).uniform(0, 1, (30, 2))
    ev = net.evaluate(pts, 2)
    f = GEAR_F(pts[:, 0], pts[:, 1])
    coeffs = PdeCoefficients(1.0, (0.2, 0.1), "cd2d", eps_param="eps")
    _, cot = pinn_strong_residual_loss(ev, coeffs, f, with_grad=True)
    fn = lambda e: pinn_strong_residual_loss(e, coeffs, f)
    _fd_field_check(fn, ev, cot, ["du_dx", "du_dy", "d2u_dx2", "d2u_dy2"], "eps")
    with pytest.raises(ContractViolationError):
        pinn_strong_residual_loss(net.evaluate(pts, 1), coeffs, f)


def test_total_loss():
    parts = {"variational": 1.0, "boundary": 1.0, "sensor": 1.0}
    assert total_loss(parts, LossWeights(0.0, 0.0)) == 1.0
    assert total_loss(parts, LossWeights(10.0, 2.0)) == 13.0
    assert LossWeights() == LossWeights(10.0, 10.0)
    with pytest.raises(InvalidArgumentError):
        LossWeights(-1.0)
