"""Self-checks run by the ``check`` command, plus the finite-difference
gradient oracle they share with the test-suite.

The FD oracle evaluates the loss in ``np.longdouble``: with losses of order
10^2 and steps of 1e-5, double-precision cancellation alone would cost about
three of the digits the comparison needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import (
    assemble_element_tensors,
    assemble_forcing,
    assemble_regular_premultipliers,
    mesh_point_sampler,
    sample_boundary,
    sample_sensors,
)
from .basis import gauss_rule_1d, reference_basis, reference_values, square_rule, test_function_1d
from .config import RunConfig
from .errors import CheckFailedError
from .geometry import (
    Mesh,
    bilinear_jacobian,
    bilinear_map,
    boundary_edges_from_topology,
    is_axis_aligned,
    physical_gradient,
)
from .losses import LossWeights, variational_loss_loop_oracle, variational_loss_matrix_regular, variational_loss_tensor
from .network import DenseNetwork, init_network
from .problems import resolve_field
from .runner import QUADRATURE_KIND, build_mesh, field_of, pde_coefficients, train_config
from .trainer import VariationalProblem

EQUIVALENCE_RTOL = 1e-12
MAPPING_FD_RTOL = 1e-6
IDENTITY_TOL = 1e-12
EXACTNESS_TOL = 1e-12
GRADIENT_RTOL = 1e-4
GRADIENT_FLOOR = 1e-8
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "skipped (...)"
    value: Optional[float]
    tolerance: Optional[float]
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    def line(self) -> str:
        v = "-" if self.value is None else f"{self.value:.3e}"
        t = "-" if self.tolerance is None else f"{self.tolerance:.0e}"
        tail = f"  ({self.detail})" if self.detail else ""
        return f"{self.status.upper() if self.status in ('pass', 'fail') else self.status:<24} {self.name:<34} value {v}  tol {t}{tail}"


def _verdict(name, value, tol, detail=""):
    return CheckResult(name, "pass" if value <= tol else "fail", float(value), tol, detail)


def rel_err(a, b, floor: float = 0.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor if floor else np.finfo(float).tiny)))


def sub_mesh(mesh: Mesh, max_elem: int = 16) -> Mesh:
    """The first ``max_elem`` elements with nodes renumbered densely."""
    if mesh.n_elem <= max_elem:
        return mesh
    elems = mesh.elements[:max_elem]
    used, inverse = np.unique(elems, return_inverse=True)
    elems = inverse.reshape(elems.shape)
    edges = boundary_edges_from_topology(elems)
    return Mesh(mesh.nodes[used], elems, np.unique(edges), edges)


# -- finite-difference gradient oracle -------------------------------------------------


def fd_gradient(net: DenseNetwork, loss_of_net, h: float = FD_STEP, dtype=np.longdouble) -> np.ndarray:
    """Central differences of ``loss_of_net(net)`` in every parameter, with the
    network (and whatever the callable builds) in extended precision."""
    probe = net.astype(dtype)
    base = probe.get_params()
    out = np.empty(len(base), dtype=dtype)
    for i in range(len(base)):
        p = base.copy()
        p[i] = base[i] + h
        probe.set_params(p)
        up = loss_of_net(probe)
        p[i] = base[i] - h
        probe.set_params(p)
        down = loss_of_net(probe)
        out[i] = (up - down) / (2 * h)
    probe.set_params(base)
    return out.astype(np.float64)


def problem_loss(problem: VariationalProblem, weights: LossWeights, order: int = 1):
    """loss(net) and (loss, grad)(net) for a problem bundle, dtype-following."""
    cache = {}

    def for_dtype(dt):
        key = np.dtype(dt)
        if key not in cache:
            prob = problem.astype(dt)
            cache[key] = (prob.points().astype(dt), prob.evaluator(weights))
        return cache[key]

    def loss(net):
        pts, ev_fn = for_dtype(net.dtype)
        return ev_fn(net.evaluate(pts, order))[0]

    def loss_and_grad(net):
        pts, ev_fn = for_dtype(net.dtype)
        ev, st = net.forward(pts, order)
        total, _, cot = ev_fn(ev)
        return float(total), net.backward(st, cot)

    return loss, loss_and_grad


def gradient_check(net: DenseNetwork, problem: VariationalProblem, weights: LossWeights) -> tuple[float, int]:
    """Worst relative deviation of the analytic gradient from the FD oracle."""
    loss, loss_and_grad = problem_loss(problem, weights)
    _, analytic = loss_and_grad(net)
    fd = fd_gradient(net, loss)
    err = np.abs(analytic - fd) / np.maximum(np.abs(analytic), GRADIENT_FLOOR)
    return float(err.max()), int(err.argmax())


# -- individual checks -----------------------------------------------------------


def check_kernel_equivalence(mesh, coeffs, forcing, n_test, n_quad, kind, net, corrupt=False) -> list:
    rule = square_rule(n_quad, kind)
    basis = reference_basis(n_test, rule)
    tensors = assemble_element_tensors(mesh, basis, rule)
    tensors = tensors.with_forcing(assemble_forcing(tensors, forcing))
    if corrupt:
        tensors.grad_x_tensor[0, 0, 0] += 1.0  # negative control for the test-suite
    ev = net.evaluate(tensors.quad_coords, 1)
    oracle = variational_loss_loop_oracle(mesh, basis, rule, ev, coeffs, forcing, mode="general")
    tensor, _ = variational_loss_tensor(tensors, ev, coeffs)
    out = [_verdict("equivalence: tensor vs loop", rel_err(tensor, oracle), EQUIVALENCE_RTOL)]
    if is_axis_aligned(mesh):
        pm = assemble_regular_premultipliers(mesh, basis, rule, forcing)
        matrix, _ = variational_loss_matrix_regular(pm, ev, coeffs)
        out.append(_verdict("equivalence: matrix vs loop", rel_err(matrix, oracle), EQUIVALENCE_RTOL))
    else:
        out.append(CheckResult("equivalence: matrix vs loop", "skipped (inadmissible)", None, None,
                               "mesh is not axis-aligned"))
    return out


def check_mapping(mesh: Mesh, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    verts = mesh.element_vertices()
    ref = rng.uniform(-0.9, 0.9, size=(8, 2))
    jac = bilinear_jacobian(verts, ref, check=False)
    h = 1e-6
    dxi = (bilinear_map(verts, ref + [h, 0]) - bilinear_map(verts, ref - [h, 0])) / (2 * h)
    deta = (bilinear_map(verts, ref + [0, h]) - bilinear_map(verts, ref - [0, h])) / (2 * h)
    fd = np.stack([dxi[..., 0], dxi[..., 1], deta[..., 0], deta[..., 1]])
    an = np.stack([jac.j11, jac.j12, jac.j21, jac.j22])
    scale = np.max(np.abs(an))
    fd_err = float(np.max(np.abs(fd - an)) / scale)
    # a linear field a x + b y must come back with gradient (a, b) exactly
    a, b = 0.7, -1.3
    gx, gy = physical_gradient(jac, a * jac.j11 + b * jac.j12, a * jac.j21 + b * jac.j22)
    ident = float(max(np.max(np.abs(gx - a)), np.max(np.abs(gy - b))))
    return [
        _verdict("mapping: jacobian vs finite diff", fd_err, MAPPING_FD_RTOL),
        _verdict("mapping: inverse gradient identity", ident, IDENTITY_TOL),
    ]


def check_quadrature(n_quad: int, kind: str, n_test: int) -> list:
    rule = gauss_rule_1d(n_quad, kind)
    top = 2 * n_quad - 1 if kind == "legendre" else 2 * n_quad - 3
    worst = 0.0
    for d in range(top + 1):
        exact = 0.0 if d % 2 else 2.0 / (d + 1)
        worst = max(worst, abs(float(np.dot(rule.weights, rule.points**d)) - exact))
    ends = np.array([-1.0, 1.0])
    vanish = max(float(np.max(np.abs(test_function_1d(k, ends)[0]))) for k in range(1, n_test + 1))
    edge = np.array([[-1.0, 0.3], [1.0, -0.2], [0.4, -1.0], [-0.6, 1.0]])
    vanish2d = float(np.max(np.abs(reference_values(n_test, edge)[0])))
    return [
        _verdict(f"quadrature: exact to degree {top}", worst, EXACTNESS_TOL),
        _verdict("test functions vanish on boundary", max(vanish, vanish2d), IDENTITY_TOL),
    ]


def check_gradient(cfg: RunConfig, mesh: Mesh, seed: int = 0) -> CheckResult:
    coeffs = pde_coefficients(cfg)
    forcing = field_of(cfg.problem.forcing)
    n_test = min(cfg.discretization.n_test, 3)
    rule = square_rule(min(cfg.discretization.n_quad, 6), QUADRATURE_KIND[cfg.discretization.quadrature])
    basis = reference_basis(n_test, rule)
    tensors = assemble_element_tensors(mesh, basis, rule)
    tensors = tensors.with_forcing(assemble_forcing(tensors, forcing))
    exact = field_of(cfg.problem.exact_solution) if cfg.problem.exact_solution is not None else None
    g = field_of(cfg.problem.boundary_g) if cfg.problem.boundary_g is not None else (exact or resolve_field("zero"))
    boundary = sample_boundary(mesh, 12, g)
    sensors = None
    if cfg.problem.sensors is not None:
        src = cfg.problem.sensors.source or cfg.problem.exact_solution
        sensors = sample_sensors(mesh_point_sampler(mesh), 6, field_of(src), seed)
    problem = VariationalProblem(tensors, coeffs, boundary, sensors)
    inv = cfg.inverse
    out = cfg.network.layers[-1]
    scalars = {"eps": inv.eps_init} if inv is not None and inv.mode == "constant" else None
    net = init_network([2, 6, 6, out], seed=seed, trainable_scalar_inits=scalars,
                       activation=cfg.network.activation)
    err, worst = gradient_check(net, problem, train_config(cfg).weights)
    return _verdict("parameter gradient vs finite diff", err, GRADIENT_RTOL,
                    f"{net.n_params} params, worst index {worst}")


def run_checks(cfg: RunConfig, seed: int = 0, corrupt_tensor: bool = False, log=print) -> list:
    """All checks on (a sub-mesh of) the configured problem. Prints one line
    per check and raises CheckFailedError if any fails."""
    mesh = sub_mesh(build_mesh(cfg))
    d = cfg.discretization
    kind = QUADRATURE_KIND[d.quadrature]
    coeffs = pde_coefficients(cfg)
    forcing = field_of(cfg.problem.forcing)
    inv = cfg.inverse
    scalars = {"eps": inv.eps_init} if inv is not None and inv.mode == "constant" else None
    net = init_network([2, 10, 10, cfg.network.layers[-1]], seed=seed, trainable_scalar_inits=scalars,
                       activation=cfg.network.activation)
    n_test = min(d.n_test, 5)
    n_quad = min(d.n_quad, 10)
    results = check_kernel_equivalence(mesh, coeffs, forcing, n_test, n_quad, kind, net, corrupt_tensor)
    results += check_mapping(mesh, seed)
    results += check_quadrature(d.n_quad, kind, d.n_test)
    results.append(check_gradient(cfg, sub_mesh(mesh, 4), seed))
    log(f"checks on {mesh.n_elem} element(s), {n_test} tests/dir, {n_quad}x{n_quad} quadrature")
    for r in results:
        log(r.line())
    failed = [r.name for r in results if r.failed]
    if failed:
        raise CheckFailedError(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    return results
