"""Built-in analytic fields keyed by name.

Each entry builds a vectorised ``f(x, y)`` from keyword parameters. Fields
with known derivatives expose them as attributes where the tests need them.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError


def _zero(**_):
    return lambda x, y: np.zeros(np.broadcast(x, y).shape)


def _constant(value=1.0, **_):
    return lambda x, y: np.full(np.broadcast(x, y).shape, float(value))


def _sin_exact(omega=2 * math.pi, **_):
    return lambda x, y: -np.sin(omega * x) * np.sin(omega * y)


def _sin_forcing(omega=2 * math.pi, **_):
    # -lap(-sin(wx) sin(wy)) = -2 w^2 sin(wx) sin(wy)
    return lambda x, y: -2.0 * omega**2 * np.sin(omega * x) * np.sin(omega * y)


def _gear_forcing(**_):
    return lambda x, y: 50.0 * np.sin(x) + np.cos(x) + 0.0 * y


def _tanh_exact(eps=0.3, **_):
    return lambda x, y: 10.0 * np.sin(x) * np.tanh(x) * np.exp(-eps * x * x) + 0.0 * y


def tanh_exact_second_derivative(x, a=0.3):
    """d2/dx2 of 10 sin(x) tanh(x) exp(-a x^2)."""
    s, c, t = np.sin(x), np.cos(x), np.tanh(x)
    sech2 = 1.0 - t * t
    e = np.exp(-a * x * x)
    de = -2.0 * a * x * e
    d2e = (4.0 * a * a * x * x - 2.0 * a) * e
    dsech2 = -2.0 * sech2 * t
    return 10.0 * (
        -s * t * e + 2 * c * sech2 * e + 2 * c * t * de + 2 * s * sech2 * de + s * dsech2 * e + s * t * d2e
    )


def _tanh_forcing(eps=0.3, **_):
    # -eps * u'' for the exact solution above (u depends on x only)
    return lambda x, y: -eps * tanh_exact_second_derivative(x, eps) + 0.0 * y


def _eps_field(**_):
    return lambda x, y: 0.5 * (np.sin(x) + np.cos(y))


def _bump_exact(**_):
    return lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)


def _variable_eps_forcing(bx=1.0, by=0.0, **_):
    # -div(eps grad u) + b . grad u with eps = 0.5 (sin x + cos y), u = sin(pi x) sin(pi y)
    def f(x, y):
        pi = np.pi
        eps = 0.5 * (np.sin(x) + np.cos(y))
        ex, ey = 0.5 * np.cos(x), -0.5 * np.sin(y)
        ux = pi * np.cos(pi * x) * np.sin(pi * y)
        uy = pi * np.sin(pi * x) * np.cos(pi * y)
        lap = -2 * pi * pi * np.sin(pi * x) * np.sin(pi * y)
        return -(ex * ux + ey * uy + eps * lap) + bx * ux + by * uy

    return f


LIBRARY = {
    "zero": _zero,
    "constant": _constant,
    "sin_exact": _sin_exact,
    "sin_forcing": _sin_forcing,
    "gear_forcing": _gear_forcing,
    "tanh_exact": _tanh_exact,
    "tanh_forcing": _tanh_forcing,
    "eps_field": _eps_field,
    "bump_exact": _bump_exact,
    "variable_eps_forcing": _variable_eps_forcing,
}


def resolve_field(name: str, **params):
    try:
        factory = LIBRARY[name]
    except KeyError:
        raise ConfigError(f"unknown field {name!r}; known: {', '.join(sorted(LIBRARY))}") from None
    return factory(**params)
