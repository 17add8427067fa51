"""Run artifacts: report JSON, CSV tables and heatmap images.

Every file is written to a temporary sibling and renamed into place, so a
crashed run never leaves a half-written artifact behind.

Heatmap colour map: values are scaled linearly from [min, max] to t in [0, 1];
t = 0 is blue (0, 0, 255), t = 0.5 white, t = 1 red (255, 0, 0), linear in
between. A constant field maps to t = 0.5 (all white). The sidecar
``<image>.txt`` records min, max and this description.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError, InvalidArgumentError

COLORMAP_DOC = "diverging blue(0,0,255) -> white(255,255,255) -> red(255,0,0), linear in (v-min)/(max-min)"


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, payload: dict) -> Path:
    return atomic_write_text(path, json.dumps(_jsonable(payload), indent=2) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, _csv_text(header, rows))


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


LOSS_HEADER = ("step", "total", "variational", "boundary", "sensor", "lr", "epsilon")


def write_loss_csv(path, history: dict) -> Path:
    rows = zip(*(history[k] for k in LOSS_HEADER))
    return write_csv(path, LOSS_HEADER, rows)


def write_solution_grid(path, points, u_pred, u_exact=None, eps_pred=None) -> Path:
    """Columns ``x,y,u_pred[,u_exact,abs_err][,eps_pred]``."""
    header = ["x", "y", "u_pred"]
    cols = [points[:, 0], points[:, 1], u_pred]
    if u_exact is not None:
        header += ["u_exact", "abs_err"]
        cols += [u_exact, np.abs(u_pred - u_exact)]
    if eps_pred is not None:
        header.append("eps_pred")
        cols.append(eps_pred)
    return write_csv(path, header, zip(*(np.asarray(c, dtype=np.float64) for c in cols)))


# -- heatmaps --------------------------------------------------------------------


def colorize(values: np.ndarray) -> np.ndarray:
    """(ny, nx) floats -> (ny, nx, 3) uint8 with the documented colour map."""
    lo, hi = float(values.min()), float(values.max())
    t = np.full(values.shape, 0.5) if hi == lo else (values - lo) / (hi - lo)
    rgb = np.empty(values.shape + (3,))
    low = t < 0.5
    s = np.where(low, 2 * t, 2 * (1 - t))  # distance towards white
    rgb[..., 0] = np.where(low, 255 * s, 255)
    rgb[..., 1] = 255 * s
    rgb[..., 2] = np.where(low, 255, 255 * s)
    return np.rint(rgb).astype(np.uint8)


def write_heatmap(values, bounds, path, scale: int = 1) -> Path:
    """Render a rectangular grid (row 0 = lowest y) as PPM (P6) or SVG,
    chosen by the file suffix, plus a ``.txt`` sidecar with min/max."""
    try:
        arr = np.array(values, dtype=np.float64)
    except ValueError as exc:
        raise InvalidArgumentError("heatmap input must be a rectangular grid") from exc
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError("heatmap input must be a rectangular 2D grid")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("heatmap values must be finite")
    path = Path(path)
    rgb = colorize(arr)[::-1]  # image rows run top (max y) to bottom
    if scale > 1:
        rgb = rgb.repeat(scale, axis=0).repeat(scale, axis=1)
    h, w = rgb.shape[:2]
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())
    elif suffix == ".svg":
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" shape-rendering="crispEdges">']
        for r in range(h):
            for c in range(w):
                red, g, b = rgb[r, c]
                parts.append(f'<rect x="{c}" y="{r}" width="1" height="1" fill="#{red:02x}{g:02x}{b:02x}"/>')
        parts.append("</svg>\n")
        atomic_write_text(path, "\n".join(parts))
    else:
        raise InvalidArgumentError(f"heatmap format from suffix {suffix!r} not supported (.ppm or .svg)")
    (x0, x1), (y0, y1) = bounds
    atomic_write_text(
        path.with_name(path.name + ".txt"),
        f"min {float(arr.min())!r}\nmax {float(arr.max())!r}\nbounds x [{x0}, {x1}] y [{y0}, {y1}]\n"
        f"grid {arr.shape[1]} x {arr.shape[0]}\ncolormap {COLORMAP_DOC}\n",
    )
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise InvalidArgumentError(f"{path}: not an 8-bit P6 image")
    w, h = map(int, dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)
