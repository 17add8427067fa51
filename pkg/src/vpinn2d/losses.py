"""Variational loss kernels, boundary/sensor losses and the collocation baseline.

Three implementations of the same variational loss are kept side by side:

* :func:`variational_loss_tensor` contracts the per-element premultiplier
  tensors with all network samples at once (works on any valid quad mesh);
* :func:`variational_loss_matrix_regular` uses one shared reference matrix
  scaled by per-element Jacobian factors (axis-aligned meshes only);
* :func:`variational_loss_loop_oracle` walks elements, quadrature points and
  test functions in plain Python and serves as the reference.

All use the same normalisation: mean of squared residuals over test
functions, summed over elements.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import BoundarySet, ElementTensors, RegularPremultipliers, SensorSet
from .basis import QuadratureRule2D, ReferenceBasis
from .errors import ContractViolationError, InvalidArgumentError, InvalidModeError
from .geometry import Mesh, is_axis_aligned
from .network import NetworkEvaluation

MODES = ("poisson", "cd2d", "cd2d_variable_eps")


@dataclass(frozen=True)
class PdeCoefficients:
    """-div(eps grad u) + b . grad u = f.

    ``eps_param`` names a trainable network scalar that replaces ``eps``
    (constant-coefficient inverse problems). In ``cd2d_variable_eps`` mode the
    diffusion coefficient comes from the network's second output channel.
    """

    eps: float = 1.0
    b: tuple = (0.0, 0.0)
    mode: str = "poisson"
    eps_param: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown PDE mode {self.mode!r}")
        object.__setattr__(self, "b", (float(self.b[0]), float(self.b[1])))
        if self.mode == "poisson" and (self.eps != 1.0 or self.b != (0.0, 0.0) or self.eps_param):
            raise InvalidArgumentError("poisson mode requires eps = 1 and b = (0, 0)")

    @property
    def has_convection(self) -> bool:
        return self.b != (0.0, 0.0)

    def diffusion(self, ev: NetworkEvaluation):
        """Scalar eps, or per-point array in variable mode."""
        if self.mode == "cd2d_variable_eps":
            if ev.eps is None:
                raise ContractViolationError("variable-eps mode needs a two-channel network")
            return ev.eps
        if self.eps_param is not None:
            return ev.scalars[self.eps_param]
        return self.eps


@dataclass(frozen=True)
class LossWeights:
    tau: float = 10.0
    gamma: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.tau) and np.isfinite(self.gamma)) or self.tau < 0 or self.gamma < 0:
            raise InvalidArgumentError("loss weights must be finite and non-negative")


def _cotangent_like(ev: NetworkEvaluation) -> NetworkEvaluation:
    return NetworkEvaluation(np.zeros_like(ev.u), scalars={})


def _check_layout(n_elem, n_quad, ev):
    if ev.du_dx is None or ev.du_dx.shape != (n_elem * n_quad,):
        got = None if ev.du_dx is None else ev.du_dx.shape
        raise ContractViolationError(
            f"evaluation must hold {n_elem * n_quad} element-major samples with gradients, got {got}"
        )


def _residual_loss(R):
    n_test = R.shape[0]
    return float(np.sum(R * R) / n_test), 2.0 * R / n_test


def variational_loss_tensor(tensors: ElementTensors, ev: NetworkEvaluation, coeffs: PdeCoefficients,
                            with_grad: bool = False):
    """Residual matrix (n_test, n_elem) and loss via batched tensor contraction.

    With ``with_grad`` a cotangent for ``ev`` is returned as third item.
    """
    E, T, Q = tensors.grad_x_tensor.shape
    _check_layout(E, Q, ev)
    if tensors.forcing is None:
        raise ContractViolationError("forcing matrix has not been assembled")
    ux = ev.du_dx.reshape(E, Q, 1)
    uy = ev.du_dy.reshape(E, Q, 1)
    eps = coeffs.diffusion(ev)
    variable = np.ndim(eps) > 0
    bx, by = coeffs.b
    Tx, Ty, Tv = tensors.grad_x_tensor, tensors.grad_y_tensor, tensors.test_tensor

    if variable:
        epsq = eps.reshape(E, Q, 1)
        Gx = np.matmul(Tx, epsq * ux)
        Gy = np.matmul(Ty, epsq * uy)
        diff = Gx + Gy
    else:
        Gx = np.matmul(Tx, ux)
        Gy = np.matmul(Ty, uy)
        diff = eps * (Gx + Gy)
    res = diff
    if coeffs.has_convection:
        res = res + np.matmul(Tv, bx * ux + by * uy)
    R = res[:, :, 0].T - tensors.forcing
    loss, dR = _residual_loss(R)
    if not with_grad:
        return loss, R

    g = dR.T[:, None, :]  # (E, 1, T)
    gx = np.matmul(g, Tx)[:, 0, :]
    gy = np.matmul(g, Ty)[:, 0, :]
    cot = _cotangent_like(ev)
    if variable:
        ex = eps.reshape(E, Q)
        cot.eps = (gx * ux[..., 0] + gy * uy[..., 0]).ravel()
        cx, cy = ex * gx, ex * gy
    else:
        cx, cy = eps * gx, eps * gy
        if coeffs.eps_param is not None:
            cot.scalars[coeffs.eps_param] = float(np.sum(dR.T[:, :, None] * (Gx + Gy)))
    if coeffs.has_convection:
        gv = np.matmul(g, Tv)[:, 0, :]
        cx = cx + bx * gv
        cy = cy + by * gv
    cot.du_dx = cx.ravel()
    cot.du_dy = cy.ravel()
    return loss, R, cot


def variational_loss_matrix_regular(pm: RegularPremultipliers, ev: NetworkEvaluation, coeffs: PdeCoefficients,
                                    with_grad: bool = False):
    """Shared reference premultipliers times Jacobian-scaled gradient samples.

    Solution samples arrive element-major and are laid out (n_quad, n_elem),
    one column per element.
    """
    Q, E = pm.J_x.shape
    _check_layout(E, Q, ev)
    if pm.forcing is None:
        raise ContractViolationError("forcing matrix has not been assembled")
    ux = ev.du_dx.reshape(E, Q).T
    uy = ev.du_dy.reshape(E, Q).T
    eps = coeffs.diffusion(ev)
    variable = np.ndim(eps) > 0
    epsq = eps.reshape(E, Q).T if variable else eps
    bx, by = coeffs.b
    if variable:
        Gx = pm.V_x @ (epsq * ux * pm.J_x)
        Gy = pm.V_y @ (epsq * uy * pm.J_y)
        res = Gx + Gy
    else:
        Gx = pm.V_x @ (ux * pm.J_x)
        Gy = pm.V_y @ (uy * pm.J_y)
        res = eps * (Gx + Gy)
    if coeffs.has_convection:
        res = res + pm.V @ ((bx * ux + by * uy) * pm.J)
    R = res - pm.forcing
    loss, dR = _residual_loss(R)
    if not with_grad:
        return loss, R
    gx = (pm.V_x.T @ dR) * pm.J_x
    gy = (pm.V_y.T @ dR) * pm.J_y
    cot = _cotangent_like(ev)
    if variable:
        cot.eps = (gx * ux + gy * uy).T.ravel()
        cx, cy = epsq * gx, epsq * gy
    else:
        cx, cy = eps * gx, eps * gy
        if coeffs.eps_param is not None:
            cot.scalars[coeffs.eps_param] = float(np.sum(dR * (Gx + Gy)))
    if coeffs.has_convection:
        gv = (pm.V.T @ dR) * pm.J
        cx = cx + bx * gv
        cy = cy + by * gv
    cot.du_dx = cx.T.ravel()
    cot.du_dy = cy.T.ravel()
    return loss, R, cot


def variational_loss_loop_oracle(mesh: Mesh, basis: ReferenceBasis, rule: QuadratureRule2D,
                                 ev: NetworkEvaluation, coeffs: PdeCoefficients, f,
                                 mode: str = "general") -> float:
    """Element / quadrature / test-function loops in plain Python.

    ``jacobian_ratio`` scales reference derivatives by det / (dx/dxi) and
    det / (dy/deta) and is only defined on axis-aligned meshes. ``general``
    inverts the full pointwise Jacobian. The forcing term is integrated inside
    the same loops from ``f(x, y)``.
    """
    if mode not in ("general", "jacobian_ratio"):
        raise InvalidModeError(f"unknown oracle mode {mode!r}")
    if mode == "jacobian_ratio" and not is_axis_aligned(mesh):
        raise InvalidModeError("jacobian_ratio mode needs an axis-aligned mesh")
    E, Q, T = mesh.n_elem, rule.n_quad, basis.n_test
    _check_layout(E, Q, ev)
    eps = coeffs.diffusion(ev)
    variable = np.ndim(eps) > 0
    bx, by = coeffs.b
    pts = rule.points.tolist()
    wts = rule.weights.tolist()
    vals = basis.values.tolist()
    vxi = basis.grad_xi.tolist()
    veta = basis.grad_eta.tolist()
    u_x = ev.du_dx.tolist()
    u_y = ev.du_dy.tolist()
    eps_list = eps.tolist() if variable else None

    total = 0.0
    for k in range(E):
        (x0, y0), (x1, y1), (x2, y2), (x3, y3) = mesh.nodes[mesh.elements[k]].tolist()
        xc0, xc1 = (x0 + x1 + x2 + x3) / 4, (-x0 + x1 + x2 - x3) / 4
        xc2, xc3 = (-x0 - x1 + x2 + x3) / 4, (x0 - x1 + x2 - x3) / 4
        yc0, yc1 = (y0 + y1 + y2 + y3) / 4, (-y0 + y1 + y2 - y3) / 4
        yc2, yc3 = (-y0 - y1 + y2 + y3) / 4, (y0 - y1 + y2 - y3) / 4
        r = [0.0] * T
        F = [0.0] * T
        for q in range(Q):
            xi, eta = pts[q]
            j11 = xc1 + xc3 * eta
            j12 = yc1 + yc3 * eta
            j21 = xc2 + xc3 * xi
            j22 = yc2 + yc3 * xi
            det = j11 * j22 - j12 * j21
            w = wts[q]
            i = k * Q + q
            ux, uy = u_x[i], u_y[i]
            e = eps_list[i] if variable else eps
            conv = bx * ux + by * uy
            x = xc0 + xc1 * xi + xc2 * eta + xc3 * xi * eta
            y = yc0 + yc1 * xi + yc2 * eta + yc3 * xi * eta
            fq = float(f(x, y))
            for j in range(T):
                if mode == "jacobian_ratio":
                    grad_x = (det / j11) * w * ux * vxi[j][q]
                    grad_y = (det / j22) * w * uy * veta[j][q]
                else:
                    vx = (j22 * vxi[j][q] - j12 * veta[j][q]) / det
                    vy = (-j21 * vxi[j][q] + j11 * veta[j][q]) / det
                    grad_x = det * w * ux * vx
                    grad_y = det * w * uy * vy
                r[j] += e * (grad_x + grad_y) + det * w * conv * vals[j][q]
                F[j] += det * w * fq * vals[j][q]
        total += sum((r[j] - F[j]) ** 2 for j in range(T)) / T
    return total


def _mean_square(pred, target, what):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ContractViolationError(f"{what}: {pred.shape} predictions vs {target.shape} targets")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def dirichlet_loss(pred, boundary: BoundarySet, with_grad: bool = False):
    """Mean squared mismatch with the boundary data."""
    loss, g = _mean_square(pred, boundary.values, "dirichlet loss")
    return (loss, g) if with_grad else loss


def sensor_loss(pred, sensors: SensorSet, with_grad: bool = False):
    loss, g = _mean_square(pred, sensors.observations, "sensor loss")
    return (loss, g) if with_grad else loss


def pinn_strong_residual_loss(ev: NetworkEvaluation, coeffs: PdeCoefficients, f_values,
                              with_grad: bool = False):
    """Mean squared strong residual -eps lap u + b . grad u - f at collocation points."""
    if ev.d2u_dx2 is None:
        raise ContractViolationError("strong-form loss needs second derivatives (order=2)")
    if coeffs.mode == "cd2d_variable_eps":
        raise InvalidModeError("the collocation baseline supports constant eps only")
    eps = coeffs.diffusion(ev)
    bx, by = coeffs.b
    lap = ev.d2u_dx2 + ev.d2u_dy2
    P = -eps * lap + bx * ev.du_dx + by * ev.du_dy - np.asarray(f_values)
    loss = float(np.mean(P * P))
    if not with_grad:
        return loss
    g = 2.0 * P / P.size
    cot = NetworkEvaluation(np.zeros_like(ev.u), bx * g, by * g, -eps * g, -eps * g)
    if coeffs.eps_param is not None:
        cot.scalars[coeffs.eps_param] = float(np.sum(-g * lap))
    return loss, cot


def total_loss(parts: dict, weights: LossWeights) -> float:
    """variational + tau * boundary (+ gamma * sensor)."""
    out = parts.get("variational", 0.0) + weights.tau * parts.get("boundary", 0.0)
    if "sensor" in parts:
        out += weights.gamma * parts["sensor"]
    return float(out)
