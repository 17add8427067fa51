"""Command-line entry point: ``vpinn2d {solve,inverse,benchmark,check,mesh-info}``.

Exit codes: 0 success, 2 config, 3 mesh, 4 numeric, 5 io, 6 failed check.
On failure one JSON object ``{"error": <category>, "message": ...}`` is
written to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext

from threadpoolctl import threadpool_limits

from .errors import EXIT_CODES, ArtifactIOError, ConfigError, VpinnError

log = logging.getLogger("vpinn2d")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _threads(n):
    return threadpool_limits(limits=n) if n else nullcontext()


def _load(args):
    from .config import load_config

    cfg = load_config(args.config)
    precision = getattr(args, "precision", None)
    return cfg.with_overrides(seed=getattr(args, "seed", None), precision=precision)


def _progress(every):
    def monitor(step, net, loss):
        if step % every == 0:
            log.info("step %6d  loss %.6e", step, loss)
        return False

    return monitor


def cmd_solve(args, inverse=False) -> int:
    from .runner import run

    cfg = _load(args)
    with _threads(args.threads):
        report = run(cfg, args.out, inverse=inverse, monitor=_progress(max(cfg.training.log_every, 100)))
    summary = {"steps_run": report.steps_run, "stop_reason": report.stop_reason, **report.metrics,
               "median_epoch_time": report.median_epoch_time, "out": str(args.out)}
    if report.final_eps_error is not None:
        summary["final_eps_error"] = report.final_eps_error
    print(json.dumps(summary, indent=2))
    return 0


def cmd_benchmark(args) -> int:
    from .benchmark import CSV_HEADER, load_sweep, run_benchmark

    spec = load_sweep(args.config)
    over = {}
    if args.threads:
        over["threads"] = args.threads
    if args.precision:
        over["precision"] = args.precision
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        spec = spec.model_validate({**spec.model_dump(), **over})
    print(",".join(CSV_HEADER))

    def show(row):
        print(",".join(str(row[k]) for k in CSV_HEADER), flush=True)

    run_benchmark(spec, args.out, progress=show)
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    cfg = _load(args)
    with _threads(args.threads):
        run_checks(cfg, seed=args.seed or 0)
    print("all checks passed")
    return 0


def cmd_mesh_info(args) -> int:
    from .geometry import bundled_mesh_path, export_mesh_csv, is_axis_aligned, load_mesh_file, validate_mesh

    if args.mesh:
        path = bundled_mesh_path(args.mesh.split(":", 1)[1]) if args.mesh.startswith("bundled:") else args.mesh
        mesh = load_mesh_file(path)
    elif args.config:
        from .runner import build_mesh

        mesh = build_mesh(_load(args))
    else:
        raise ConfigError("mesh-info needs --mesh PATH or --config PATH")
    rep = validate_mesh(mesh)
    (x0, x1), (y0, y1) = mesh.bounding_box()
    info = {
        "n_elem": mesh.n_elem,
        "n_nodes": mesh.n_nodes,
        "n_boundary_edges": len(mesh.boundary_edges),
        "bounding_box": [[x0, x1], [y0, y1]],
        "axis_aligned": is_axis_aligned(mesh),
        "min_det": float(rep.min_det.min()),
        "max_det": float(rep.max_det.max()),
        "degenerate": rep.degenerate[:20],
        "misoriented": rep.misoriented[:20],
        "ok": rep.ok,
    }
    if args.out:
        from pathlib import Path

        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            export_mesh_csv(mesh, out / "nodes.csv", out / "elements.csv")
        except OSError as exc:
            raise ArtifactIOError(f"cannot write mesh CSV to {out}: {exc}") from exc
    print(json.dumps(info, indent=2))
    return 0 if rep.ok else EXIT_CODES["mesh"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpinn2d", description="Tensor-assembled variational PINN solver for 2D PDEs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, help="YAML file")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=_positive_int, default=None, help="BLAS thread count")
        sp.add_argument("--precision", choices=("double", "single"), default=None)
        sp.add_argument("--seed", type=int, default=None, help="overrides training.seed")

    common(sub.add_parser("solve", help="train a forward problem and write artifacts"))
    common(sub.add_parser("inverse", help="train with sensors to recover eps"))
    common(sub.add_parser("benchmark", help="time loss kernels over a sweep (YAML sweep spec)"))
    common(sub.add_parser("check", help="equivalence, mapping, quadrature and gradient self-checks"), out=False)
    mi = sub.add_parser("mesh-info", help="summarise and validate a mesh")
    mi.add_argument("--mesh", help="MSH file, or bundled:<name>")
    mi.add_argument("--config", help="take the domain from a run config")
    mi.add_argument("--out", help="also export nodes.csv / elements.csv here")
    return p


HANDLERS = {
    "solve": cmd_solve,
    "inverse": lambda a: cmd_solve(a, inverse=True),
    "benchmark": cmd_benchmark,
    "check": cmd_check,
    "mesh-info": cmd_mesh_info,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except VpinnError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
