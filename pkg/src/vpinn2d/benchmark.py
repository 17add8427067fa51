"""Training-step timing sweeps for the three loss kernels.

Each timed step is one full-batch gradient evaluation plus the Adam update:

* ``tensor``: one network pass over every quadrature point, batched
  contraction over all elements at once.
* ``matrix``: as ``tensor`` but with the shared-premultiplier contraction
  (axis-aligned meshes only; other meshes give an ``unsupported`` row).
* ``loop``: the element-by-element baseline. For each element the network
  is run on that element's points, the test-function gradients, Jacobian
  and weights are evaluated afresh, each test function's residual is
  integrated in its own loop iteration, and the element is reversed before
  moving on, so the cost grows with the element count.

``n_quad`` in the output is the number of quadrature points per element and
``n_test`` the number of test functions per direction.
"""

from __future__ import annotations

import math
import os
import platform
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import Field, model_validator
from threadpoolctl import threadpool_info, threadpool_limits

from .assembly import (
    assemble_element_tensors,
    assemble_forcing,
    assemble_regular_premultipliers,
    sample_boundary,
)
from .basis import reference_basis, reference_values, square_rule
from .config import StrictModel, parse_yaml_model, read_text
from .errors import ConfigError, InvalidArgumentError
from .geometry import (
    bilinear_jacobian,
    generate_structured_mesh,
    is_axis_aligned,
    perturbed_structured_mesh,
    physical_gradient,
)
from .losses import LossWeights, PdeCoefficients, dirichlet_loss, variational_loss_matrix_regular, variational_loss_tensor
from .network import NetworkEvaluation, init_network
from .problems import resolve_field
from .reporting import write_csv, write_json
from .trainer import OptimizerState, adam_step, time_interleaved

KERNELS = ("loop", "matrix", "tensor")
CSV_HEADER = ("kernel", "n_elem", "n_test", "n_quad", "median_s", "p10_s", "p90_s", "threads", "precision")


class FixedTotalSweep(StrictModel):
    """Constant total quadrature points spread over growing element counts."""

    kind: Literal["fixed_total"] = "fixed_total"
    total_quad: int = Field(6400, ge=1)
    n_elem: list[int]
    n_test: int = Field(5, ge=1)


class GridSweep(StrictModel):
    """Cartesian product of element counts, tests and quadrature per direction."""

    kind: Literal["grid"] = "grid"
    n_elem: list[int] = Field(default_factory=lambda: [1])
    n_test: list[int]
    n_quad: list[int] = Field(description="quadrature points per direction per element")


class SweepSpec(StrictModel):
    kernels: list[Literal["loop", "matrix", "tensor"]] = Field(default_factory=lambda: ["loop", "tensor"])
    sweeps: list[FixedTotalSweep | GridSweep] = Field(default_factory=list)
    mesh: Literal["structured", "skewed"] = "structured"
    layers: list[int] = Field(default_factory=lambda: [2, 30, 30, 30, 1])
    precision: Literal["double", "single"] = "double"
    threads: int = Field(1, ge=1)
    repetitions: int = Field(20, ge=10)
    warmup: int = Field(10, ge=0)
    n_boundary_points: int = Field(400, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.kernels:
            raise ValueError("kernels: empty list")
        return self


def load_sweep(path) -> SweepSpec:
    return parse_yaml_model(read_text(path), SweepSpec, str(path))


def _side(n: int, what: str) -> int:
    s = math.isqrt(n)
    if s * s != n:
        raise InvalidArgumentError(f"{what} = {n} is not a perfect square")
    return s


def expand_cases(spec: SweepSpec) -> list[tuple[int, int, int]]:
    """(n_elem, n_test per direction, n_quad per direction) triples."""
    cases = []
    for sw in spec.sweeps:
        if sw.kind == "fixed_total":
            for e in sw.n_elem:
                if sw.total_quad % e:
                    raise InvalidArgumentError(f"{sw.total_quad} quadrature points do not split over {e} elements")
                cases.append((e, sw.n_test, _side(sw.total_quad // e, "points per element")))
        else:
            for e in sw.n_elem:
                for t in sw.n_test:
                    for q in sw.n_quad:
                        cases.append((e, t, q))
    if not cases:
        raise ConfigError("benchmark sweep is empty")
    for e, _, q in cases:
        _side(e, "n_elem")
        if q < 2:
            raise InvalidArgumentError("need at least 2 quadrature points per direction")
    return cases


def make_step(kernel: str, mesh, n_test: int, n_quad: int, layers, dtype, n_boundary: int, seed: int = 0):
    """Build a zero-argument callable running one training step, or None when
    the kernel cannot handle the mesh."""
    omega = 2 * math.pi
    f = resolve_field("sin_forcing", omega=omega)
    g = resolve_field("sin_exact", omega=omega)
    coeffs = PdeCoefficients()
    weights = LossWeights()
    rule = square_rule(n_quad)
    basis = reference_basis(n_test, rule)
    if kernel == "matrix" and not is_axis_aligned(mesh):
        return None
    tensors = assemble_element_tensors(mesh, basis, rule)
    tensors = tensors.with_forcing(assemble_forcing(tensors, f)).astype(dtype)
    boundary = sample_boundary(mesh, n_boundary, g)
    bpts = boundary.points.astype(dtype)
    net = init_network(layers, seed=seed, dtype=dtype)
    state = [net.get_params(), OptimizerState.zeros(net.n_params, dtype)]
    nq = len(tensors.quad_coords)

    def finish(grad):
        state[0], state[1] = adam_step(state[0], grad, state[1], 1e-4)
        net.set_params(state[0])

    def boundary_grad():
        ev, st = net.forward(bpts, 0)
        _, gb = dirichlet_loss(ev.u, boundary, with_grad=True)
        return net.backward(st, NetworkEvaluation(weights.tau * gb))

    if kernel == "loop":
        E, T, Q = tensors.grad_x_tensor.shape
        eps = coeffs.eps
        bx, by = coeffs.b
        verts = mesh.element_vertices()

        def element_tensors(e):
            # nothing is cached between elements or steps
            values, dxi, deta = reference_values(n_test, rule.points)
            jac = bilinear_jacobian(verts[e], rule.points)
            dvdx, dvdy = physical_gradient(jac, dxi, deta)
            w = rule.weights * jac.det
            return tuple((w * a).astype(dtype) for a in (dvdx, dvdy, values))

        def gradient():
            grad = boundary_grad()
            for e in range(E):
                ev, st = net.forward(tensors.quad_coords[e * Q : (e + 1) * Q], 1)
                gxe, gye, ve = element_tensors(e)
                cx = np.zeros_like(ev.u)
                cy = np.zeros_like(ev.u)
                for k in range(T):
                    gx, gy, v = gxe[k], gye[k], ve[k]
                    r = eps * (gx @ ev.du_dx + gy @ ev.du_dy) - tensors.forcing[k, e]
                    if bx or by:
                        r += v @ (bx * ev.du_dx + by * ev.du_dy)
                    s = 2.0 * r / T
                    cx += s * (eps * gx + bx * v)
                    cy += s * (eps * gy + by * v)
                grad += net.backward(st, NetworkEvaluation(np.zeros_like(ev.u), cx, cy))
            return grad

        return _stepper(gradient, finish)

    pts = np.concatenate([tensors.quad_coords, bpts])
    if kernel == "matrix":
        pm = assemble_regular_premultipliers(mesh, basis, rule, f)
        pm = type(pm)(*(None if a is None else np.asarray(a, dtype=dtype) for a in
                        (pm.V, pm.V_x, pm.V_y, pm.J, pm.J_x, pm.J_y, pm.forcing)))
        loss_fn = lambda ev: variational_loss_matrix_regular(pm, ev, coeffs, with_grad=True)
    else:
        loss_fn = lambda ev: variational_loss_tensor(tensors, ev, coeffs, with_grad=True)

    def gradient():
        ev, st = net.forward(pts, 1)
        _, _, cq = loss_fn(ev.slice(0, nq))
        _, gb = dirichlet_loss(ev.u[nq:], boundary, with_grad=True)
        z = np.zeros_like(ev.u)
        cot = NetworkEvaluation(z.copy(), z.copy(), z.copy())
        cot.du_dx[:nq] = cq.du_dx
        cot.du_dy[:nq] = cq.du_dy
        cot.u[nq:] = weights.tau * gb
        return net.backward(st, cot)

    return _stepper(gradient, finish)


def _stepper(gradient, finish):
    def step():
        finish(gradient())

    step.gradient = gradient  # exposed for equivalence tests
    return step


def hardware_descriptor(threads: int) -> dict:
    blas = [{k: v for k, v in info.items() if k in ("internal_api", "version", "num_threads")}
            for info in threadpool_info()]
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or None,
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": threads,
        "blas": blas,
    }


def run_benchmark(spec: SweepSpec, out_dir=None, progress=None) -> list[dict]:
    """Time every (kernel, case) pair. Rows follow ``CSV_HEADER``.

    All steps are built first and then timed round-robin, so every row in one
    report sees the same machine conditions.
    """
    cases = expand_cases(spec)
    dtype = np.float64 if spec.precision == "double" else np.float32
    rows, steps = [], []
    with threadpool_limits(limits=spec.threads):
        for n_elem, n_test, n_quad in cases:
            side = _side(n_elem, "n_elem")
            if spec.mesh == "skewed":
                mesh = perturbed_structured_mesh(side, side, 0.2, seed=spec.seed)
            else:
                mesh = generate_structured_mesh(side, side)
            for kernel in spec.kernels:
                step = make_step(kernel, mesh, n_test, n_quad, spec.layers, dtype, spec.n_boundary_points, spec.seed)
                rows.append({"kernel": kernel, "n_elem": n_elem, "n_test": n_test, "n_quad": n_quad * n_quad,
                             "threads": spec.threads, "precision": spec.precision})
                steps.append(step)
        live = [i for i, st in enumerate(steps) if st is not None]
        results = time_interleaved([steps[i] for i in live], spec.repetitions, spec.warmup)
    timed = dict(zip(live, results))
    samples = {}
    for i, row in enumerate(rows):
        if i in timed:
            res = timed[i]
            row.update(median_s=res["median"], p10_s=res["p10"], p90_s=res["p90"])
            samples[f"{row['kernel']}/{row['n_elem']}/{row['n_test']}/{row['n_quad']}"] = res["samples"]
        else:
            row.update(median_s="unsupported", p10_s="unsupported", p90_s="unsupported")
        if progress is not None:
            progress(row)
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "benchmark.csv", CSV_HEADER, ([r[k] for k in CSV_HEADER] for r in rows))
        write_json(out / "benchmark.json", {
            "spec": spec.model_dump(mode="json"),
            "hardware": hardware_descriptor(spec.threads),
            "rows": rows,
            "samples": samples,
        })
    return rows


def ratio(rows, kernel: str, num_elem: int, den_elem: int) -> Optional[float]:
    """median(kernel @ num_elem) / median(kernel @ den_elem) from one report."""
    med = {r["n_elem"]: r["median_s"] for r in rows if r["kernel"] == kernel and r["median_s"] != "unsupported"}
    if num_elem not in med or den_elem not in med:
        return None
    return med[num_elem] / med[den_elem]
