"""Jacobi polynomials, element test functions and Gauss quadrature rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 100


def _jacobi_value(n, alpha, beta, x):
    x = np.asarray(x, dtype=np.float64)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev
    p = (alpha + 1) + (alpha + beta + 2) * (x - 1) / 2
    for k in range(1, n):
        s = 2 * k + alpha + beta
        a1 = 2 * (k + 1) * (k + alpha + beta + 1) * s
        a2 = (s + 1) * (alpha * alpha - beta * beta)
        a3 = s * (s + 1) * (s + 2)
        a4 = 2 * (k + alpha) * (k + beta) * (s + 2)
        p_prev, p = p, ((a2 + a3 * x) * p - a4 * p_prev) / a1
    return p


def jacobi_polynomial(n: int, alpha: float, beta: float, x):
    """Value and first derivative of the Jacobi polynomial P_n^(alpha, beta) at x."""
    if n < 0 or int(n) != n:
        raise InvalidArgumentError(f"degree must be a non-negative integer, got {n}")
    if alpha <= -1 or beta <= -1:
        raise InvalidArgumentError(f"alpha and beta must exceed -1, got {alpha}, {beta}")
    n = int(n)
    value = _jacobi_value(n, alpha, beta, x)
    if n == 0:
        return value, np.zeros_like(value)
    deriv = 0.5 * (n + alpha + beta + 1) * _jacobi_value(n - 1, alpha + 1, beta + 1, x)
    return value, deriv


def test_function_1d(k: int, x, alpha: float = 0.0, beta: float = 0.0):
    """k-th element test function P_{k+1} - P_{k-1} (k >= 1) and its derivative.

    With alpha = beta = 0 every member vanishes at x = +-1.
    """
    if k < 1:
        raise InvalidArgumentError(f"test function index starts at 1, got {k}")
    hi, dhi = jacobi_polynomial(k + 1, alpha, beta, x)
    lo, dlo = jacobi_polynomial(k - 1, alpha, beta, x)
    return hi - lo, dhi - dlo


@dataclass(frozen=True)
class QuadratureRule1D:
    points: np.ndarray
    weights: np.ndarray
    kind: str = "legendre"

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class QuadratureRule2D:
    """Tensor-product rule on [-1, 1]^2.

    Point q = j * n_xi + i carries (xi_i, eta_j): eta is the outer index.
    """

    points: np.ndarray
    weights: np.ndarray
    n_xi: int
    n_eta: int

    @property
    def n_quad(self) -> int:
        return len(self.weights)


def _newton(f, x0):
    x = x0.copy()
    for _ in range(NEWTON_MAX_ITER):
        dx = f(x)
        x = x - dx
        if np.max(np.abs(dx)) <= NEWTON_TOL:
            break
    return x


def gauss_rule_1d(n: int, kind: str = "legendre") -> QuadratureRule1D:
    """Gauss-Legendre (exact to degree 2n-1) or Gauss-Lobatto-Legendre
    (exact to degree 2n-3, includes the endpoints) rule, points ascending."""
    if int(n) != n:
        raise InvalidArgumentError(f"point count must be an integer, got {n}")
    n = int(n)
    if kind == "legendre":
        if n < 1:
            raise InvalidArgumentError("Gauss-Legendre needs n >= 1")
        guess = np.cos(np.pi * (4 * np.arange(1, n + 1) - 1) / (4 * n + 2))

        def step(x):
            p, dp = jacobi_polynomial(n, 0.0, 0.0, x)
            return p / dp

        x = _newton(step, guess)
        _, dp = jacobi_polynomial(n, 0.0, 0.0, x)
        w = 2.0 / ((1 - x * x) * dp * dp)
    elif kind == "lobatto":
        if n < 2:
            raise InvalidArgumentError("Gauss-Lobatto needs n >= 2")
        x = np.cos(np.pi * np.arange(n) / (n - 1))
        if n > 2:
            interior = x[1:-1]

            # Roots of P'_{n-1}: Newton on q = P'_{n-1} using P''_{n-1}.
            def step(t):
                _, dq = jacobi_polynomial(n - 1, 0.0, 0.0, t)
                d2q = 0.25 * n * (n + 1) * _jacobi_value(n - 3, 2.0, 2.0, t) if n >= 3 else 0.0
                return dq / d2q

            x[1:-1] = _newton(step, interior)
        p, _ = jacobi_polynomial(n - 1, 0.0, 0.0, x)
        w = 2.0 / (n * (n - 1) * p * p)
    else:
        raise InvalidArgumentError(f"unknown quadrature kind {kind!r}")
    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce the symmetry of the rule about 0
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule1D(x, w, kind)


def tensor_product_rule(rule_x: QuadratureRule1D, rule_y: QuadratureRule1D) -> QuadratureRule2D:
    xi, eta = np.meshgrid(rule_x.points, rule_y.points)
    wx, wy = np.meshgrid(rule_x.weights, rule_y.weights)
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return QuadratureRule2D(pts, (wx * wy).ravel(), len(rule_x), len(rule_y))


def square_rule(n_per_dim: int, kind: str = "legendre") -> QuadratureRule2D:
    r = gauss_rule_1d(n_per_dim, kind)
    return tensor_product_rule(r, r)


@dataclass(frozen=True)
class ReferenceBasis:
    """Test functions and their reference gradients at quadrature points,
    each (n_test, n_quad). Test index j = j_eta * n_test_per_dim + j_xi."""

    values: np.ndarray
    grad_xi: np.ndarray
    grad_eta: np.ndarray
    n_test_per_dim: int

    @property
    def n_test(self) -> int:
        return self.values.shape[0]


def reference_values(n_test_per_dim: int, points, alpha: float = 0.0, beta: float = 0.0):
    """(values, d/dxi, d/deta) of all 2D test functions at arbitrary reference points."""
    if n_test_per_dim < 1:
        raise InvalidArgumentError("need at least one test function per direction")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    xi, eta = points[:, 0], points[:, 1]
    vx = np.empty((n_test_per_dim, len(xi)))
    dvx = np.empty_like(vx)
    vy = np.empty_like(vx)
    dvy = np.empty_like(vx)
    for m in range(n_test_per_dim):
        vx[m], dvx[m] = test_function_1d(m + 1, xi, alpha, beta)
        vy[m], dvy[m] = test_function_1d(m + 1, eta, alpha, beta)
    # row j = jy * n + jx
    values = (vy[:, None, :] * vx[None, :, :]).reshape(-1, len(xi))
    grad_xi = (vy[:, None, :] * dvx[None, :, :]).reshape(-1, len(xi))
    grad_eta = (dvy[:, None, :] * vx[None, :, :]).reshape(-1, len(xi))
    return values, grad_xi, grad_eta


def reference_basis(n_test_per_dim: int, rule: QuadratureRule2D, alpha: float = 0.0, beta: float = 0.0) -> ReferenceBasis:
    values, gxi, geta = reference_values(n_test_per_dim, rule.points, alpha, beta)
    return ReferenceBasis(values, gxi, geta, int(n_test_per_dim))
