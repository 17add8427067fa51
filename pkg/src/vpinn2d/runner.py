"""Config-driven solve and inverse runs, from assembly to written artifacts."""

from __future__ import annotations

import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import (
    assemble_element_tensors,
    assemble_forcing,
    evaluate_field,
    mesh_point_sampler,
    rectangle_sampler,
    sample_boundary,
    sample_sensors,
)
from .basis import reference_basis, square_rule
from .config import RunConfig, dump_config
from .errors import ConfigError, MeshError
from .geometry import Mesh, bundled_mesh_path, generate_structured_mesh, load_mesh_file, validate_mesh
from .losses import LossWeights, PdeCoefficients
from .network import DenseNetwork, checkpoint_bytes, init_network
from .problems import resolve_field
from .reporting import (
    atomic_write_bytes,
    atomic_write_text,
    write_heatmap,
    write_json,
    write_loss_csv,
    write_solution_grid,
)
from .trainer import (
    CollocationProblem,
    RunReport,
    TrainConfig,
    VariationalProblem,
    error_metrics,
    grid_points,
    train_forward,
    train_inverse,
)

log = logging.getLogger(__name__)

QUADRATURE_KIND = {"gauss_legendre": "legendre", "gauss_lobatto": "lobatto"}


def field_of(ref):
    return resolve_field(ref.name, **ref.params)


def build_mesh(cfg: RunConfig) -> Mesh:
    dom = cfg.problem.domain
    if dom.kind == "rectangle":
        return generate_structured_mesh(dom.nx, dom.ny, dom.x_range, dom.y_range)
    path = dom.path
    if path.startswith("bundled:"):
        path = bundled_mesh_path(path.split(":", 1)[1])
    elif not Path(path).exists():
        raise ConfigError(f"problem.domain.path: mesh file not found: {path}")
    mesh = load_mesh_file(path)
    report = validate_mesh(mesh)
    if not report.ok:
        raise MeshError(f"mesh {path} has degenerate or clockwise elements: {report.degenerate[:10]}")
    return mesh


def pde_coefficients(cfg: RunConfig) -> PdeCoefficients:
    pde = cfg.problem.pde
    inv = cfg.inverse
    if inv is not None and inv.mode == "constant":
        # the unknown constant eps is a trainable scalar of the network
        return PdeCoefficients(eps=1.0, b=tuple(pde.b), mode="cd2d", eps_param="eps")
    return PdeCoefficients(eps=pde.eps, b=tuple(pde.b), mode=pde.mode)


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.training
    inv = cfg.inverse
    return TrainConfig(
        iterations=t.iterations,
        learning_rate=t.learning_rate,
        lr_schedule=t.lr_schedule,
        decay=t.decay,
        decay_every=t.decay_every,
        weights=LossWeights(t.tau, t.gamma),
        seed=t.seed,
        precision=t.precision,
        log_every=t.log_every,
        timing_window=t.timing_window,
        eps_abs_tol=inv.eps_tol if inv is not None else None,
        eps_actual=inv.eps_actual if inv is not None else None,
        loss_tol=t.loss_tol,
        plateau_window=t.plateau_window,
    )


def build_network(cfg: RunConfig) -> DenseNetwork:
    inv = cfg.inverse
    scalars = {"eps": inv.eps_init} if inv is not None and inv.mode == "constant" else None
    net = init_network(cfg.network.layers, seed=cfg.training.seed, trainable_scalar_inits=scalars,
                       activation=cfg.network.activation)
    if inv is not None and inv.mode == "spatial":
        # start the softplus channel at eps_init everywhere
        net.biases[-1][1] = np.log(np.expm1(inv.eps_init))
    return net


@dataclass
class Assembled:
    mesh: Mesh
    problem: object
    coeffs: PdeCoefficients
    exact: Optional[object]


def assemble(cfg: RunConfig) -> Assembled:
    p = cfg.problem
    d = cfg.discretization
    mesh = build_mesh(cfg)
    coeffs = pde_coefficients(cfg)
    exact = field_of(p.exact_solution) if p.exact_solution is not None else None
    if p.boundary_g is not None:
        g = field_of(p.boundary_g)
    elif exact is not None:
        g = exact
    else:
        g = resolve_field("zero")
    forcing = field_of(p.forcing)
    boundary = sample_boundary(mesh, p.n_boundary_points, g, seed=p.boundary_seed)

    if cfg.training.method == "pinn":
        sampler = _sampler(cfg, mesh)
        pts = sampler(cfg.training.n_collocation, np.random.default_rng(cfg.training.seed))
        problem = CollocationProblem(pts, evaluate_field(forcing, pts), coeffs, boundary)
        return Assembled(mesh, problem, coeffs, exact)

    rule = square_rule(d.n_quad, QUADRATURE_KIND[d.quadrature])
    basis = reference_basis(d.n_test, rule)
    tensors = assemble_element_tensors(mesh, basis, rule)
    tensors = tensors.with_forcing(assemble_forcing(tensors, forcing))
    sensors = None
    if p.sensors is not None:
        source = p.sensors.source or p.exact_solution
        if source is None:
            raise ConfigError("problem.sensors: no source field and no exact_solution to observe")
        sensors = sample_sensors(_sampler(cfg, mesh), p.sensors.count, field_of(source), p.sensors.seed)
    return Assembled(mesh, VariationalProblem(tensors, coeffs, boundary, sensors), coeffs, exact)


def _sampler(cfg: RunConfig, mesh: Mesh):
    dom = cfg.problem.domain
    if dom.kind == "rectangle":
        return rectangle_sampler(dom.x_range, dom.y_range)
    return mesh_point_sampler(mesh)


def _hardware() -> dict:
    return {"machine": platform.machine(), "processor": platform.processor() or None,
            "python": platform.python_version(), "numpy": np.__version__}


def _evaluation_points(cfg: RunConfig, mesh: Mesh):
    dom = cfg.problem.domain
    if dom.kind == "rectangle":
        return grid_points(dom.x_range, dom.y_range, cfg.metrics.grid), True
    return mesh.nodes.copy(), False


def run(cfg: RunConfig, out_dir, inverse: bool = False, monitor=None) -> RunReport:
    """Assemble, train, evaluate and write every artifact into ``out_dir``."""
    if inverse:
        if cfg.inverse is None:
            raise ConfigError("inverse run needs an 'inverse' section")
        if cfg.problem.sensors is None:
            raise ConfigError("problem.sensors: inverse runs require sensors")
    elif cfg.inverse is not None:
        raise ConfigError("config has an 'inverse' section; use the inverse command")
    out = Path(out_dir)
    asm = assemble(cfg)
    net = build_network(cfg)
    tcfg = train_config(cfg)
    log.info("training %d parameters for up to %d steps", net.n_params, tcfg.iterations)
    trainer = train_inverse if inverse else train_forward
    report = trainer(asm.problem, net, tcfg, monitor)

    pts, rectangular = _evaluation_points(cfg, asm.mesh)
    ev = net.evaluate(pts, order=0)
    u_pred = ev.u.astype(np.float64)
    u_exact = evaluate_field(asm.exact, pts) if asm.exact is not None else None
    if u_exact is not None:
        report.metrics = error_metrics(u_pred, u_exact)
    eps_pred = ev.eps.astype(np.float64) if ev.eps is not None else None
    if eps_pred is not None and cfg.inverse.eps_field is not None:
        eps_ref = evaluate_field(field_of(cfg.inverse.eps_field), pts)
        report.metrics["eps"] = error_metrics(eps_pred, eps_ref)
    if "eps" in net.scalars:
        report.metrics["eps_final"] = net.scalars["eps"]

    files = {
        "report": "report.json",
        "loss_history": "loss_history.csv",
        "solution": "solution_grid.csv" if rectangular else "solution_nodes.csv",
        "config": "effective_config.yaml",
    }
    write_loss_csv(out / files["loss_history"], report.history)
    write_solution_grid(out / files["solution"], pts, u_pred, u_exact, eps_pred)
    atomic_write_text(out / files["config"], dump_config(cfg))
    if cfg.output.heatmap != "none" and rectangular:
        n = cfg.metrics.grid
        dom = cfg.problem.domain
        bounds = (dom.x_range, dom.y_range)
        ext = cfg.output.heatmap
        write_heatmap(u_pred.reshape(n, n), bounds, out / f"u_pred.{ext}")
        files["heatmap_u_pred"] = f"u_pred.{ext}"
        if u_exact is not None:
            write_heatmap(np.abs(u_pred - u_exact).reshape(n, n), bounds, out / f"abs_err.{ext}")
            files["heatmap_abs_err"] = f"abs_err.{ext}"
        if eps_pred is not None:
            write_heatmap(eps_pred.reshape(n, n), bounds, out / f"eps_pred.{ext}")
            files["heatmap_eps_pred"] = f"eps_pred.{ext}"
    if cfg.output.save_checkpoint:
        atomic_write_bytes(out / "network.ckpt", checkpoint_bytes(net))
        files["checkpoint"] = "network.ckpt"

    run_doc = report.to_dict()
    run_doc["train_config"] = run_doc.pop("config")
    doc = {
        "command": "inverse" if inverse else "solve",
        "config": cfg.model_dump(mode="json"),
        "mesh": {"n_elem": asm.mesh.n_elem, "n_nodes": asm.mesh.n_nodes},
        "network": {"layer_sizes": net.layer_sizes, "n_params": net.n_params, "scalars": dict(net.scalars)},
        "hardware": _hardware(),
        "files": files,
        **run_doc,
    }
    write_json(out / files["report"], doc)
    return report
