"""Adam training loops, learning-rate schedules, timing and error metrics."""

from __future__ import annotations

import gc
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import BoundarySet, ElementTensors, SensorSet
from .errors import InvalidArgumentError, NumericOverflowError, TrainingAbortError
from .losses import (
    LossWeights,
    PdeCoefficients,
    dirichlet_loss,
    pinn_strong_residual_loss,
    sensor_loss,
    variational_loss_tensor,
)
from .network import DenseNetwork, NetworkEvaluation, chunked_loss_and_gradient

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
TIMING_WARMUP = 10
# chunked evaluation only pays off once the working set spills out of cache
AUTO_CHUNK = 2048
AUTO_CHUNK_MIN_POINTS = 65536


@dataclass
class TrainConfig:
    iterations: int = 1000
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"
    decay: float = 1.0
    decay_every: int = 1000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    precision: str = "double"
    log_every: int = 1
    timing_window: int = 1000
    eps_abs_tol: Optional[float] = None
    eps_actual: Optional[float] = None
    loss_tol: Optional[float] = None
    plateau_window: int = 2000
    chunk_size: Optional[int] = None  # None: automatic, 0: never chunk

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")
        if not 0 < self.decay <= 1:
            raise InvalidArgumentError("decay must lie in (0, 1]")
        if self.lr_schedule not in ("constant", "exponential"):
            raise InvalidArgumentError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.precision not in ("double", "single"):
            raise InvalidArgumentError("precision must be 'double' or 'single'")
        if self.chunk_size is not None and self.chunk_size < 0:
            raise InvalidArgumentError("chunk_size must be >= 0 (0 disables chunking)")
        if self.decay_every < 1 or self.log_every < 1:
            raise InvalidArgumentError("decay_every and log_every must be >= 1")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), 0)


def adam_step(params, grads, state: OptimizerState, lr: float):
    """One bias-corrected Adam update. Returns (new_params, state)."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise InvalidArgumentError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        raise TrainingAbortError(state.step, "non-finite gradient")
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads * grads
    m_hat = m / (1 - ADAM_BETA1**t)
    v_hat = v / (1 - ADAM_BETA2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new.astype(params.dtype), OptimizerState(m, v, t)


def lr_at(step: int, config: TrainConfig) -> float:
    if config.lr_schedule == "constant":
        return config.learning_rate
    return config.learning_rate * config.decay ** (step // config.decay_every)


@dataclass
class RunReport:
    config: dict
    history: dict
    metrics: dict = field(default_factory=dict)
    epoch_times: list = field(default_factory=list)
    median_epoch_time: Optional[float] = None
    converged: bool = False
    stop_reason: str = "iterations"
    steps_run: int = 0
    eps_trajectory: list = field(default_factory=list)
    final_eps_error: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


HISTORY_KEYS = ("step", "total", "variational", "boundary", "sensor", "lr", "epsilon")


# -- problem bundles -----------------------------------------------------------


@dataclass
class VariationalProblem:
    """Everything one training step needs; points are stacked
    quadrature | boundary | sensors so one network pass covers all."""

    tensors: ElementTensors
    coeffs: PdeCoefficients
    boundary: BoundarySet
    sensors: Optional[SensorSet] = None

    def points(self):
        parts = [self.tensors.quad_coords, self.boundary.points]
        if self.sensors is not None:
            parts.append(self.sensors.points)
        return np.concatenate(parts)

    def astype(self, dtype) -> "VariationalProblem":
        return VariationalProblem(self.tensors.astype(dtype), self.coeffs, self.boundary, self.sensors)

    def evaluator(self, weights: LossWeights):
        nq = len(self.tensors.quad_coords)
        nb = len(self.boundary)

        def evaluate(ev: NetworkEvaluation):
            quad = ev.slice(0, nq)
            lv, _, cq = variational_loss_tensor(self.tensors, quad, self.coeffs, with_grad=True)
            lb, gb = dirichlet_loss(ev.u[nq : nq + nb], self.boundary, with_grad=True)
            parts = {"variational": lv, "boundary": lb}
            cot = NetworkEvaluation(np.zeros_like(ev.u), np.zeros_like(ev.u), np.zeros_like(ev.u))
            cot.du_dx[:nq] = cq.du_dx
            cot.du_dy[:nq] = cq.du_dy
            cot.u[nq : nq + nb] = weights.tau * gb
            if cq.eps is not None:
                cot.eps = np.zeros_like(ev.u)
                cot.eps[:nq] = cq.eps
            cot.scalars = dict(cq.scalars)
            if self.sensors is not None:
                ls, gs = sensor_loss(ev.u[nq + nb :], self.sensors, with_grad=True)
                parts["sensor"] = ls
                cot.u[nq + nb :] = weights.gamma * gs
            total = lv + weights.tau * lb + (weights.gamma * parts["sensor"] if "sensor" in parts else 0.0)
            return total, parts, cot

        return evaluate


@dataclass
class CollocationProblem:
    """Strong-form baseline: residual at collocation points plus boundary."""

    points_interior: np.ndarray
    f_values: np.ndarray
    coeffs: PdeCoefficients
    boundary: BoundarySet

    def points(self):
        return np.concatenate([self.points_interior, self.boundary.points])

    def astype(self, dtype):
        return self

    def evaluator(self, weights: LossWeights):
        n = len(self.points_interior)

        def evaluate(ev: NetworkEvaluation):
            lp, cp = pinn_strong_residual_loss(ev.slice(0, n), self.coeffs, self.f_values, with_grad=True)
            lb, gb = dirichlet_loss(ev.u[n:], self.boundary, with_grad=True)
            z = np.zeros_like(ev.u)
            cot = NetworkEvaluation(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), scalars=cp.scalars)
            for name in ("du_dx", "du_dy", "d2u_dx2", "d2u_dy2"):
                getattr(cot, name)[:n] = getattr(cp, name)
            cot.u[n:] = weights.tau * gb
            return lp + weights.tau * lb, {"variational": lp, "boundary": lb}, cot

        return evaluate


# -- training loop -------------------------------------------------------------


def _median_window(samples, window):
    usable = samples[TIMING_WARMUP:] if len(samples) > TIMING_WARMUP else samples
    usable = usable[-window:]
    return float(np.median(usable)) if usable else None


def _epsilon_of(net: DenseNetwork, ev: NetworkEvaluation, nq: int):
    if "eps" in net.scalars:
        return net.scalars["eps"]
    if ev.eps is not None:
        return float(np.mean(ev.eps[:nq]))
    return None


def _train(problem, net: DenseNetwork, config: TrainConfig, order: int,
           monitor: Optional[Callable] = None, stop_on_eps: bool = False) -> RunReport:
    dtype = config.dtype
    if net.dtype != np.dtype(dtype):
        net.__dict__.update(net.astype(dtype).__dict__)
    problem = problem.astype(dtype)
    points = problem.points().astype(dtype)
    nq = len(problem.tensors.quad_coords) if isinstance(problem, VariationalProblem) else len(points)
    evaluate = problem.evaluator(config.weights)

    chunk = config.chunk_size
    if chunk is None:
        chunk = AUTO_CHUNK if len(points) > AUTO_CHUNK_MIN_POINTS else 0

    def reorder(ev):
        total, parts, cot = evaluate(ev)
        return total, cot, parts

    history = {k: [] for k in HISTORY_KEYS}
    report = RunReport(config=config.to_dict(), history=history)
    state = OptimizerState.zeros(net.n_params, dtype)
    params = net.get_params()
    times = []
    best, since_best = np.inf, 0

    for step in range(config.iterations):
        t0 = time.perf_counter()
        try:
            # non-finite values are caught below and in adam_step; no warnings needed
            with np.errstate(over="ignore", invalid="ignore"):
                total, grads, ev, (parts,) = chunked_loss_and_gradient(net, points, reorder, order, chunk)
        except NumericOverflowError as exc:
            raise TrainingAbortError(step, str(exc)) from exc
        if not np.isfinite(total):
            raise TrainingAbortError(step, "non-finite loss")
        lr = lr_at(step, config)
        params, state = adam_step(params, grads, state, lr)
        net.set_params(params)
        times.append(time.perf_counter() - t0)

        eps_now = _epsilon_of(net, ev, nq)
        if eps_now is not None:
            report.eps_trajectory.append(float(eps_now))
        last = step == config.iterations - 1
        if step % config.log_every == 0 or last:
            history["step"].append(step)
            history["total"].append(float(total))
            history["variational"].append(float(parts.get("variational", 0.0)))
            history["boundary"].append(float(parts.get("boundary", 0.0)))
            history["sensor"].append(float(parts["sensor"]) if "sensor" in parts else None)
            history["lr"].append(float(lr))
            history["epsilon"].append(None if eps_now is None else float(eps_now))
        report.steps_run = step + 1

        if stop_on_eps and config.eps_actual is not None and config.eps_abs_tol is not None and "eps" in net.scalars:
            if abs(net.scalars["eps"] - config.eps_actual) < config.eps_abs_tol:
                report.converged, report.stop_reason = True, "eps_tolerance"
                break
        if config.loss_tol is not None and total < config.loss_tol:
            report.converged, report.stop_reason = True, "loss_tolerance"
            break
        if stop_on_eps and config.eps_actual is None:
            if total < best * (1 - 1e-8):
                best, since_best = total, 0
            else:
                since_best += 1
                if since_best >= config.plateau_window:
                    report.converged, report.stop_reason = True, "plateau"
                    break
        if monitor is not None and monitor(step, net, float(total)):
            report.converged, report.stop_reason = True, "monitor"
            break

    if history["step"] and history["step"][-1] != report.steps_run - 1:
        # stopped early between log points: record the final sample
        history["step"].append(report.steps_run - 1)
        for k in HISTORY_KEYS[1:]:
            history[k].append(history[k][-1])
    report.epoch_times = times
    report.median_epoch_time = _median_window(times, config.timing_window)
    if "eps" in net.scalars and config.eps_actual is not None:
        report.final_eps_error = abs(net.scalars["eps"] - config.eps_actual)
    return report


def train_forward(problem, net: DenseNetwork, config: TrainConfig, monitor=None) -> RunReport:
    """Full-batch Adam on variational (or collocation) loss plus boundary loss."""
    order = 2 if isinstance(problem, CollocationProblem) else 1
    return _train(problem, net, config, order, monitor)


def train_inverse(problem: VariationalProblem, net: DenseNetwork, config: TrainConfig, monitor=None) -> RunReport:
    """As :func:`train_forward` with the sensor term. A constant eps stops early
    once within ``eps_abs_tol`` of ``eps_actual`` (validation mode); without
    ``eps_actual`` it stops on a loss plateau."""
    if problem.sensors is None or len(problem.sensors) == 0:
        raise InvalidArgumentError("inverse training needs sensors")
    if config.weights.gamma <= 0:
        log.warning("gamma = 0: sensors do not enter the loss, eps is not identifiable")
    return _train(problem, net, config, 1, monitor, stop_on_eps=True)


# -- metrics and timing ----------------------------------------------------------


def grid_points(x_range=(0.0, 1.0), y_range=(0.0, 1.0), n: int = 100):
    xs = np.linspace(x_range[0], x_range[1], n)
    ys = np.linspace(y_range[0], y_range[1], n)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def error_metrics(pred, exact) -> dict:
    pred = np.asarray(pred, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    diff = pred - exact
    norm = np.linalg.norm(exact)
    return {
        "mae": float(np.mean(np.abs(diff))),
        "rel_l2": float(np.linalg.norm(diff) / norm) if norm > 0 else float(np.linalg.norm(diff)),
        "max_err": float(np.max(np.abs(diff))),
    }


def evaluate_metrics(net: DenseNetwork, exact, x_range=(0.0, 1.0), y_range=(0.0, 1.0), n: int = 100,
                     points=None) -> dict:
    """MAE, relative L2 and max error of channel u on an n x n grid (or given points)."""
    pts = grid_points(x_range, y_range, n) if points is None else np.asarray(points)
    pred = net.evaluate(pts, order=0).u
    return error_metrics(pred, exact(pts[:, 0], pts[:, 1]))


def _summary(samples) -> dict:
    arr = np.asarray(samples)
    return {
        "median": float(np.median(arr)),
        "p10": float(np.percentile(arr, 10)),
        "p90": float(np.percentile(arr, 90)),
        "samples": list(samples),
    }


def time_interleaved(step_fns, repetitions: int = 100, warmup: int = TIMING_WARMUP) -> list:
    """Wall-clock samples of several steps taken round-robin, one call of each
    per repetition, so slow drift in machine speed hits every step alike.

    The cyclic garbage collector is paused while timing, as timeit does.
    """
    if repetitions < 10:
        raise InvalidArgumentError("need at least 10 repetitions")
    for fn in step_fns:
        for _ in range(warmup):
            fn()
    samples = [[] for _ in step_fns]
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions):
            for fn, out in zip(step_fns, samples):
                t0 = time.perf_counter()
                fn()
                out.append(time.perf_counter() - t0)
    finally:
        if was_enabled:
            gc.enable()
    return [_summary(x) for x in samples]


def time_epochs(step_fn: Callable[[], object], repetitions: int = 100, warmup: int = TIMING_WARMUP) -> dict:
    """Wall-clock samples of ``step_fn`` after ``warmup`` untimed calls."""
    return time_interleaved([step_fn], repetitions, warmup)[0]
