"""Precomputation of premultiplier tensors, forcing, boundary and sensor sets.

Everything here runs once before training; the loss kernels only contract
these arrays with network outputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .basis import QuadratureRule2D, ReferenceBasis
from .errors import (
    AssemblyError,
    DegenerateElementError,
    InvalidArgumentError,
    InvalidModeError,
    MalformedFileError,
)
from .geometry import Mesh, bilinear_jacobian, bilinear_map, is_axis_aligned, physical_gradient

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ElementTensors:
    """Premultipliers with quadrature weight and Jacobian determinant folded in.

    grad_x_tensor[k, j, q] = w_q * det_k(q) * dv_j/dx at quad point q of element k;
    grad_y_tensor and test_tensor likewise for dv_j/dy and v_j. ``forcing`` is
    (n_test, n_elem). ``quad_coords`` is element-major, (n_elem * n_quad, 2).
    """

    grad_x_tensor: np.ndarray
    grad_y_tensor: np.ndarray
    test_tensor: np.ndarray
    quad_coords: np.ndarray
    det: np.ndarray
    forcing: Optional[np.ndarray] = None

    @property
    def n_elem(self) -> int:
        return self.grad_x_tensor.shape[0]

    @property
    def n_test(self) -> int:
        return self.grad_x_tensor.shape[1]

    @property
    def n_quad(self) -> int:
        return self.grad_x_tensor.shape[2]

    def with_forcing(self, forcing: np.ndarray) -> "ElementTensors":
        return replace(self, forcing=forcing)

    def astype(self, dtype) -> "ElementTensors":
        conv = lambda a: None if a is None else np.asarray(a, dtype=dtype)
        return ElementTensors(
            conv(self.grad_x_tensor), conv(self.grad_y_tensor), conv(self.test_tensor),
            self.quad_coords, self.det, conv(self.forcing),
        )


def _jacobians(mesh: Mesh, rule: QuadratureRule2D):
    jac = bilinear_jacobian(mesh.element_vertices(), rule.points, check=False)
    bad = np.flatnonzero(jac.det.min(axis=1) <= 0)
    if bad.size:
        k = int(bad[0])
        raise DegenerateElementError(k, float(jac.det[k].min()))
    return jac


def assemble_element_tensors(mesh: Mesh, basis: ReferenceBasis, rule: QuadratureRule2D) -> ElementTensors:
    """Per-element premultipliers using the pointwise Jacobian of every element."""
    if basis.values.shape[1] != rule.n_quad:
        raise InvalidArgumentError("basis and rule disagree on the number of quadrature points")
    jac = _jacobians(mesh, rule)
    dvdx, dvdy = physical_gradient(
        _expand(jac), basis.grad_xi[None, :, :], basis.grad_eta[None, :, :]
    )
    wdet = rule.weights[None, :] * jac.det
    grad_x = wdet[:, None, :] * dvdx
    grad_y = wdet[:, None, :] * dvdy
    test = wdet[:, None, :] * basis.values[None, :, :]
    coords = bilinear_map(mesh.element_vertices(), rule.points).reshape(-1, 2)
    return ElementTensors(grad_x, grad_y, test, coords, jac.det)


def _expand(jac):
    # (n_elem, n_quad) -> (n_elem, 1, n_quad) so it broadcasts over tests
    from .geometry import JacobianData

    return JacobianData(*(getattr(jac, f)[:, None, :] for f in ("j11", "j12", "j21", "j22", "det")))


def evaluate_field(f: Field, coords: np.ndarray) -> np.ndarray:
    vals = np.asarray(f(coords[:, 0], coords[:, 1]), dtype=np.float64)
    return np.broadcast_to(vals, (len(coords),)).copy()


def assemble_forcing(tensors: ElementTensors, f: Field) -> np.ndarray:
    """Forcing matrix (n_test, n_elem): sum_q w_q det_k(q) f(x_kq) v_j(q)."""
    fvals = evaluate_field(f, tensors.quad_coords)
    if not np.all(np.isfinite(fvals)):
        i = int(np.flatnonzero(~np.isfinite(fvals))[0])
        x, y = tensors.quad_coords[i]
        raise AssemblyError(f"forcing is not finite at ({x:.6g}, {y:.6g}), element {i // tensors.n_quad}")
    fq = fvals.reshape(tensors.n_elem, tensors.n_quad)
    return np.einsum("kjq,kq->jk", tensors.test_tensor, fq)


@dataclass(frozen=True)
class RegularPremultipliers:
    """Shared reference premultipliers plus per-element Jacobian scalings for
    axis-aligned meshes. V* are (n_test, n_quad); J* are (n_quad, n_elem)."""

    V: np.ndarray
    V_x: np.ndarray
    V_y: np.ndarray
    J: np.ndarray
    J_x: np.ndarray
    J_y: np.ndarray
    forcing: Optional[np.ndarray] = None


def assemble_regular_premultipliers(mesh: Mesh, basis: ReferenceBasis, rule: QuadratureRule2D,
                                    f: Optional[Field] = None) -> RegularPremultipliers:
    if not is_axis_aligned(mesh):
        raise InvalidModeError("regular premultipliers need an axis-aligned rectangle mesh")
    jac = _jacobians(mesh, rule)
    w = rule.weights
    V = w * basis.values
    V_x = w * basis.grad_xi
    V_y = w * basis.grad_eta
    J = jac.det.T
    J_x = (jac.det / jac.j11).T
    J_y = (jac.det / jac.j22).T
    forcing = None
    if f is not None:
        coords = bilinear_map(mesh.element_vertices(), rule.points).reshape(-1, 2)
        fq = evaluate_field(f, coords).reshape(mesh.n_elem, rule.n_quad)
        forcing = V @ (fq.T * J)
    return RegularPremultipliers(V, V_x, V_y, J, J_x, J_y, forcing)


# -- boundary and sensor sets ------------------------------------------------


@dataclass(frozen=True)
class BoundarySet:
    points: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class SensorSet:
    points: np.ndarray
    observations: np.ndarray

    def __len__(self):
        return len(self.points)


def sample_boundary(mesh: Mesh, n_points: int, g: Field, seed: Optional[int] = None) -> BoundarySet:
    """n_points spread uniformly by arc length over the boundary edges.

    Points sit at (i + s) * L / n along the concatenated edges, with s = 1/2
    or a seeded random phase.
    """
    if n_points < 1:
        raise InvalidArgumentError("n_points must be >= 1")
    edges = mesh.boundary_edges
    if len(edges) == 0:
        raise InvalidArgumentError("mesh has no boundary edges")
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]
    phase = 0.5 if seed is None else np.random.default_rng(seed).uniform()
    s = (np.arange(n_points) + phase) * total / n_points
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(edges) - 1)
    t = ((s - cum[idx]) / lengths[idx])[:, None]
    pts = a[idx] + t * (b[idx] - a[idx])
    return BoundarySet(pts, evaluate_field(g, pts))


def mesh_point_sampler(mesh: Mesh):
    """Returns sample(n, rng) drawing interior points area-weighted over elements."""
    from .geometry import signed_areas

    areas = np.abs(signed_areas(mesh))
    probs = areas / areas.sum()
    verts = mesh.element_vertices()

    def sample(n, rng):
        elems = rng.choice(mesh.n_elem, size=n, p=probs)
        xi, eta = rng.uniform(-1.0, 1.0, size=(2, n))
        # bilinear shape functions; not exactly area-uniform inside distorted quads
        shape = 0.25 * np.stack(
            [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)],
            axis=1,
        )
        return np.einsum("nv,nvd->nd", shape, verts[elems])

    return sample


def rectangle_sampler(x_range, y_range):
    def sample(n, rng):
        x = rng.uniform(x_range[0], x_range[1], size=n)
        y = rng.uniform(y_range[0], y_range[1], size=n)
        return np.column_stack([x, y])

    return sample


def sample_sensors(sampler, n: int, source: Field, seed: int = 0) -> SensorSet:
    if n < 1:
        raise InvalidArgumentError("need at least one sensor")
    rng = np.random.default_rng(seed)
    pts = np.asarray(sampler(n, rng), dtype=np.float64)
    return SensorSet(pts, evaluate_field(source, pts))


# -- binary dump -------------------------------------------------------------

ARRAY_MAGIC = b"VPNARR01"


def write_array(path, array: np.ndarray) -> None:
    """Write magic, ndim, dims (uint64 LE) then float64 LE payload in C order."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<Q", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != ARRAY_MAGIC:
        raise MalformedFileError(f"{path}: bad magic")
    (ndim,) = struct.unpack_from("<Q", data, 8)
    dims = struct.unpack_from(f"<{ndim}Q", data, 16)
    offset = 16 + 8 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(data) - offset != 8 * count:
        raise MalformedFileError(f"{path}: payload size does not match header")
    return np.frombuffer(data, dtype="<f8", offset=offset).reshape(dims).copy()


def dump_element_tensors(tensors: ElementTensors, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("grad_x_tensor", "grad_y_tensor", "test_tensor", "quad_coords", "forcing"):
        arr = getattr(tensors, name)
        if arr is None:
            continue
        path = directory / f"{name}.bin"
        write_array(path, arr)
        written.append(path)
    return written
