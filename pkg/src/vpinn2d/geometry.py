"""Quadrilateral meshes and the bilinear reference-to-physical map.

Reference element is [-1, 1]^2 with corners ordered counterclockwise from
(-1, -1). Element vertex ``v_i`` is the image of reference corner ``b_i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateElementError, InvalidArgumentError, MeshError

REFERENCE_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class Mesh:
    """Nodes (n_nodes x 2), counterclockwise quad connectivity (n_elem x 4)
    and boundary bookkeeping.

    ``boundary_edges`` holds node-id pairs of boundary segments; it drives
    boundary sampling. ``boundary_node_ids`` is the sorted set of their nodes.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_node_ids: np.ndarray
    boundary_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must be (n, 2), got {nodes.shape}")
        if elements.ndim != 2 or elements.shape[1] != 4 or len(elements) < 1:
            raise MeshError(f"elements must be (n_elem >= 1, 4), got {elements.shape}")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("node coordinates must be finite")
        if elements.min() < 0 or elements.max() >= len(nodes):
            raise MeshError("element references a node id outside the node array")
        for name, arr in (("nodes", nodes), ("elements", elements)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        bnd = np.asarray(self.boundary_node_ids, dtype=np.int64)
        edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "boundary_node_ids", bnd)
        object.__setattr__(self, "boundary_edges", edges)

    @property
    def n_elem(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def element_vertices(self) -> np.ndarray:
        """Vertex coordinates, shape (n_elem, 4, 2)."""
        return self.nodes[self.elements]

    def bounding_box(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


@dataclass(frozen=True)
class JacobianData:
    """Entries of d(x, y)/d(xi, eta) laid out as
    [[dx/dxi, dy/dxi], [dx/deta, dy/deta]] plus the determinant.

    Fields may be scalars or equally shaped arrays.
    """

    j11: np.ndarray
    j12: np.ndarray
    j21: np.ndarray
    j22: np.ndarray
    det: np.ndarray


def boundary_edges_from_topology(elements: np.ndarray) -> np.ndarray:
    """Edges used by exactly one element, as node-id pairs."""
    elements = np.asarray(elements, dtype=np.int64)
    edges = np.stack([elements, np.roll(elements, -1, axis=1)], axis=-1).reshape(-1, 2)
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return edges[counts[inverse.ravel()] == 1]


def generate_structured_mesh(nx: int, ny: int, x_range=(0.0, 1.0), y_range=(0.0, 1.0)) -> Mesh:
    """Axis-aligned nx-by-ny rectangle mesh. Nodes are numbered row by row
    (x fastest) and elements likewise."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"nx and ny must be positive integers, got {nx}, {ny}")
    (x0, x1), (y0, y1) = x_range, y_range
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise InvalidArgumentError(f"degenerate range x={x_range}, y={y_range}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    n0 = j * (nx + 1) + i
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    edges = boundary_edges_from_topology(elements)
    return Mesh(nodes, elements, np.unique(edges), edges)


def _coefficients(elem_nodes):
    """Bilinear coefficients (x_c0..x_c3, y_c0..y_c3); leading axes preserved."""
    v = np.asarray(elem_nodes, dtype=np.float64)
    x0, x1, x2, x3 = (v[..., i, 0] for i in range(4))
    y0, y1, y2, y3 = (v[..., i, 1] for i in range(4))
    xc = (
        (x0 + x1 + x2 + x3) / 4,
        (-x0 + x1 + x2 - x3) / 4,
        (-x0 - x1 + x2 + x3) / 4,
        (x0 - x1 + x2 - x3) / 4,
    )
    yc = (
        (y0 + y1 + y2 + y3) / 4,
        (-y0 + y1 + y2 - y3) / 4,
        (-y0 - y1 + y2 + y3) / 4,
        (y0 - y1 + y2 - y3) / 4,
    )
    return xc, yc


def _split_ref(ref_pt):
    ref = np.asarray(ref_pt, dtype=np.float64)
    return ref[..., 0], ref[..., 1]


def bilinear_map(elem_nodes, ref_pt) -> np.ndarray:
    """Map reference coordinates to physical coordinates.

    ``elem_nodes`` is (4, 2) or (n_elem, 4, 2); ``ref_pt`` is (2,) or (n_pts, 2).
    With a batch of elements and a batch of points the result is
    (n_elem, n_pts, 2). Extrapolation outside [-1, 1]^2 is allowed.
    """
    xc, yc = _coefficients(elem_nodes)
    xi, eta = _split_ref(ref_pt)
    if np.ndim(xc[0]) and np.ndim(xi):
        xc = tuple(c[:, None] for c in xc)
        yc = tuple(c[:, None] for c in yc)
    x = xc[0] + xc[1] * xi + xc[2] * eta + xc[3] * xi * eta
    y = yc[0] + yc[1] * xi + yc[2] * eta + yc[3] * xi * eta
    return np.stack([x, y], axis=-1)


def bilinear_jacobian(elem_nodes, ref_pt, element_id=None, check=True) -> JacobianData:
    """Jacobian of the bilinear map; broadcasting as in :func:`bilinear_map`.

    Raises DegenerateElementError when any determinant is non-positive and
    ``check`` is set.
    """
    xc, yc = _coefficients(elem_nodes)
    xi, eta = _split_ref(ref_pt)
    if np.ndim(xc[0]) and np.ndim(xi):
        xc = tuple(c[:, None] for c in xc)
        yc = tuple(c[:, None] for c in yc)
    zero = np.zeros(np.broadcast_shapes(np.shape(xc[0]), np.shape(xi)))
    j11 = xc[1] + xc[3] * eta + zero
    j12 = yc[1] + yc[3] * eta + zero
    j21 = xc[2] + xc[3] * xi + zero
    j22 = yc[2] + yc[3] * xi + zero
    det = j11 * j22 - j12 * j21
    if check and np.any(det <= 0):
        bad = np.argwhere(np.atleast_1d(det) <= 0)[0]
        if element_id is None and np.ndim(det) >= 1 and np.ndim(xc[0]):
            element_id = int(bad[0])
        raise DegenerateElementError(element_id, float(np.atleast_1d(det)[tuple(bad)]))
    return JacobianData(j11, j12, j21, j22, det)


def physical_gradient(jac: JacobianData, d_dxi, d_deta):
    """Convert reference-coordinate derivatives to physical (d/dx, d/dy)."""
    if np.any(np.asarray(jac.det) <= 0):
        raise DegenerateElementError(None, float(np.min(jac.det)))
    d_dx = (jac.j22 * d_dxi - jac.j12 * d_deta) / jac.det
    d_dy = (-jac.j21 * d_dxi + jac.j11 * d_deta) / jac.det
    return d_dx, d_dy


def signed_areas(mesh: Mesh) -> np.ndarray:
    """Shoelace signed area of each quad (positive for counterclockwise)."""
    v = mesh.element_vertices()
    x, y = v[..., 0], v[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)


def is_axis_aligned(mesh: Mesh, tol: float = 1e-12) -> bool:
    """True when every element is a rectangle with edges parallel to the axes
    (constant, diagonal Jacobian)."""
    xc, yc = _coefficients(mesh.element_vertices())
    scale = max(1.0, float(np.abs(mesh.nodes).max()))
    return bool(
        np.all(np.abs(xc[2]) <= tol * scale)
        and np.all(np.abs(xc[3]) <= tol * scale)
        and np.all(np.abs(yc[1]) <= tol * scale)
        and np.all(np.abs(yc[3]) <= tol * scale)
    )


@dataclass
class MeshReport:
    min_det: np.ndarray
    max_det: np.ndarray
    degenerate: list
    misoriented: list

    @property
    def ok(self) -> bool:
        return not self.degenerate and not self.misoriented

    def summary(self) -> dict:
        return {
            "n_elem": int(len(self.min_det)),
            "min_det": float(self.min_det.min()),
            "max_det": float(self.max_det.max()),
            "degenerate": list(self.degenerate),
            "misoriented": list(self.misoriented),
        }


def validate_mesh(mesh: Mesh, samples: int = 5) -> MeshReport:
    """Sample the Jacobian determinant on a samples x samples reference grid
    per element and flag non-positive values and clockwise vertex order."""
    s = np.linspace(-1.0, 1.0, samples)
    xi, eta = np.meshgrid(s, s)
    ref = np.column_stack([xi.ravel(), eta.ravel()])
    jac = bilinear_jacobian(mesh.element_vertices(), ref, check=False)
    min_det = jac.det.min(axis=1)
    max_det = jac.det.max(axis=1)
    degenerate = np.flatnonzero(min_det <= 0).tolist()
    misoriented = np.flatnonzero(signed_areas(mesh) <= 0).tolist()
    return MeshReport(min_det, max_det, degenerate, misoriented)


def export_mesh_csv(mesh: Mesh, nodes_path, elements_path) -> None:
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "x", "y"])
        for i, (x, y) in enumerate(mesh.nodes):
            w.writerow([i, repr(float(x)), repr(float(y))])
    with open(elements_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["elem_id", "v0", "v1", "v2", "v3"])
        for i, verts in enumerate(mesh.elements):
            w.writerow([i, *map(int, verts)])


def skewed_fixture_mesh() -> Mesh:
    """Three-element mesh with distorted (non-parallelogram) quads."""
    nodes = np.array(
        [
            [0.0, 0.0], [1.0, 0.0], [2.1, 0.0],
            [0.1, 1.0], [1.5, 1.0], [2.0, 1.2],
            [0.0, 2.0], [1.2, 2.3],
        ]
    )
    elements = np.array([[0, 1, 4, 3], [1, 2, 5, 4], [3, 4, 7, 6]])
    edges = boundary_edges_from_topology(elements)
    return Mesh(nodes, elements, np.unique(edges), edges)


def load_mesh_file(path) -> Mesh:
    from .gmsh_io import read_gmsh_ascii

    path = Path(path)
    return read_gmsh_ascii(path.read_bytes())


def gear_mesh(n_teeth: int = 12, n_theta: int = 96, n_radial: int = 5, r_inner: float = 0.35,
              r_root: float = 0.85, r_tip: float = 1.0) -> Mesh:
    """Annular spur-gear-like mesh of curved, non-parallelogram quads.

    The outer radius follows a smoothed trapezoidal tooth profile; radial
    node columns are spaced linearly from the bore to that radius, so every
    element has a position-dependent Jacobian.
    """
    if n_theta % n_teeth:
        raise InvalidArgumentError("n_theta must be a multiple of n_teeth")
    if not 0 < r_inner < r_root < r_tip:
        raise InvalidArgumentError("need 0 < r_inner < r_root < r_tip")
    theta = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    phase = (theta * n_teeth / (2 * np.pi)) % 1.0
    # plateau on [0.25, 0.75] of each pitch, linear flanks either side
    lift = np.clip(4.0 * np.minimum(phase, 1.0 - phase) - 0.5, 0.0, 1.0)
    r_out = r_root + (r_tip - r_root) * lift
    frac = np.linspace(0.0, 1.0, n_radial + 1)
    radius = r_inner + np.outer(frac, r_out - r_inner)  # (n_radial+1, n_theta)
    nodes = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=-1).reshape(-1, 2)
    elements = []
    for i in range(n_radial):
        for j in range(n_theta):
            jn = (j + 1) % n_theta
            a, b = i * n_theta + j, i * n_theta + jn
            elements.append([a, a + n_theta, b + n_theta, b])
    elements = np.array(elements, dtype=np.int64)
    edges = boundary_edges_from_topology(elements)
    return Mesh(nodes, elements, np.unique(edges), edges)


def bundled_mesh_path(name: str = "gear.msh") -> Path:
    """Path of a mesh file shipped inside the package data directory."""
    path = Path(__file__).with_name("data") / name
    if not path.exists():
        raise InvalidArgumentError(f"no bundled mesh {name!r}")
    return path


def perturbed_structured_mesh(nx: int, ny: int, amount: float = 0.25, seed: int = 0,
                              x_range=(0.0, 1.0), y_range=(0.0, 1.0)) -> Mesh:
    """Structured mesh with interior nodes shifted by up to ``amount`` of the
    local spacing in each direction (boundary nodes stay put, so the domain
    is unchanged). ``amount`` < 0.5 keeps every element convex."""
    if not 0 <= amount < 0.5:
        raise InvalidArgumentError("amount must lie in [0, 0.5)")
    mesh = generate_structured_mesh(nx, ny, x_range, y_range)
    hx = (x_range[1] - x_range[0]) / nx
    hy = (y_range[1] - y_range[0]) / ny
    rng = np.random.default_rng(seed)
    nodes = mesh.nodes.copy()
    interior = np.setdiff1d(np.arange(mesh.n_nodes), mesh.boundary_node_ids)
    shift = rng.uniform(-amount, amount, size=(len(interior), 2)) * [hx, hy]
    nodes[interior] += shift
    return Mesh(nodes, mesh.elements, mesh.boundary_node_ids, mesh.boundary_edges)
