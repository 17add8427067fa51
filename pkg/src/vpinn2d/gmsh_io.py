"""Reader/writer for the ASCII Gmsh MSH subset we need (versions 2.2 and 4.1).

Only 4-node quadrangles (type 3) become elements. Lines (type 1) and points
(type 15) mark boundary nodes; anything else is rejected.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import MalformedFileError, UnsupportedElementError, UnsupportedFormatError
from .geometry import Mesh, boundary_edges_from_topology

QUAD, LINE, POINT = 3, 1, 15
_NODES_PER_TYPE = {QUAD: 4, LINE: 2, POINT: 1}
_TYPE_NAMES = {2: "triangle", 4: "tetrahedron", 5: "hexahedron", 6: "prism", 7: "pyramid",
               8: "quadratic line", 9: "quadratic triangle", 10: "9-node quadrangle",
               16: "8-node quadrangle"}


def _sections(text: str) -> dict:
    out = {}
    lines = iter(text.splitlines())
    for line in lines:
        line = line.strip()
        if not line.startswith("$") or line.startswith("$End"):
            continue
        name = line[1:]
        body = []
        for inner in lines:
            if inner.strip() == f"$End{name}":
                break
            body.append(inner)
        else:
            raise MalformedFileError(f"section ${name} is not terminated")
        out[name] = body
    return out


def _ints(line: str):
    try:
        return [int(t) for t in line.split()]
    except ValueError as exc:
        raise MalformedFileError(f"expected integers, got {line!r}") from exc


def _check_type(etype: int):
    if etype not in _NODES_PER_TYPE:
        name = _TYPE_NAMES.get(etype, f"type {etype}")
        raise UnsupportedElementError(f"unsupported element ({name}); only 4-node quads are allowed")


def _parse_v2(sec):
    body = sec.get("Nodes")
    if body is None:
        raise MalformedFileError("missing $Nodes section")
    n = int(body[0])
    tags, coords = [], []
    for line in body[1 : 1 + n]:
        parts = line.split()
        tags.append(int(parts[0]))
        coords.append([float(parts[1]), float(parts[2])])
    if len(tags) != n:
        raise MalformedFileError("fewer node lines than declared")
    elements = {QUAD: [], LINE: [], POINT: []}
    body = sec.get("Elements")
    if body is None:
        raise MalformedFileError("missing $Elements section")
    n = int(body[0])
    for line in body[1 : 1 + n]:
        vals = _ints(line)
        etype, ntags = vals[1], vals[2]
        _check_type(etype)
        conn = vals[3 + ntags :]
        if len(conn) != _NODES_PER_TYPE[etype]:
            raise MalformedFileError(f"element {vals[0]} has {len(conn)} nodes")
        elements[etype].append(conn)
    return tags, coords, elements


def _parse_v4(sec):
    body = sec.get("Nodes")
    if body is None:
        raise MalformedFileError("missing $Nodes section")
    n_blocks = _ints(body[0])[0]
    pos = 1
    tags, coords = [], []
    for _ in range(n_blocks):
        _, _, parametric, count = _ints(body[pos])
        pos += 1
        block_tags = [int(body[pos + i]) for i in range(count)]
        pos += count
        for i in range(count):
            parts = body[pos + i].split()
            coords.append([float(parts[0]), float(parts[1])])
        pos += count
        tags.extend(block_tags)
    elements = {QUAD: [], LINE: [], POINT: []}
    body = sec.get("Elements")
    if body is None:
        raise MalformedFileError("missing $Elements section")
    n_blocks = _ints(body[0])[0]
    pos = 1
    for _ in range(n_blocks):
        _, _, etype, count = _ints(body[pos])
        pos += 1
        _check_type(etype)
        for line in body[pos : pos + count]:
            conn = _ints(line)[1:]
            if len(conn) != _NODES_PER_TYPE[etype]:
                raise MalformedFileError(f"element line {line!r} has wrong node count")
            elements[etype].append(conn)
        pos += count
    return tags, coords, elements


def read_gmsh_ascii(data) -> Mesh:
    """Parse MSH 2.2 / 4.1 ASCII bytes or text into a :class:`Mesh`."""
    text = data.decode("utf-8", errors="replace") if isinstance(data, (bytes, bytearray)) else str(data)
    sec = _sections(text)
    if "MeshFormat" not in sec or not sec["MeshFormat"]:
        raise UnsupportedFormatError("missing $MeshFormat header")
    header = sec["MeshFormat"][0].split()
    version = header[0]
    if len(header) > 1 and header[1] != "0":
        raise UnsupportedFormatError("binary MSH files are not supported")
    try:
        if version.startswith("2.2"):
            tags, coords, elements = _parse_v2(sec)
        elif version.startswith("4.1"):
            tags, coords, elements = _parse_v4(sec)
        else:
            raise UnsupportedFormatError(f"MSH version {version} is not supported (2.2 or 4.1 only)")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, (MalformedFileError, UnsupportedElementError, UnsupportedFormatError)):
            raise
        raise MalformedFileError(f"truncated or malformed file: {exc}") from exc

    if not elements[QUAD]:
        raise MalformedFileError("no quadrangle elements found")
    remap = {tag: i for i, tag in enumerate(tags)}

    def dense(conn_list, what):
        try:
            return np.array([[remap[t] for t in conn] for conn in conn_list], dtype=np.int64)
        except KeyError as exc:
            raise MalformedFileError(f"{what} references undefined node {exc.args[0]}") from None

    nodes = np.array(coords, dtype=np.float64)
    quads = dense(elements[QUAD], "quadrangle")
    # Reverse clockwise quads while keeping v0 first.
    v = nodes[quads]
    area = 0.5 * np.sum(v[..., 0] * np.roll(v[..., 1], -1, 1) - np.roll(v[..., 0], -1, 1) * v[..., 1], 1)
    flip = area < 0
    quads[flip] = quads[flip][:, [0, 3, 2, 1]]

    if elements[LINE]:
        edges = dense(elements[LINE], "line")
    else:
        edges = boundary_edges_from_topology(quads)
    bnd = set(np.unique(edges).tolist())
    if elements[POINT]:
        bnd.update(dense(elements[POINT], "point").ravel().tolist())
    return Mesh(nodes, quads, np.array(sorted(bnd), dtype=np.int64), edges)


def write_gmsh_ascii(mesh: Mesh, version: str = "4.1") -> str:
    """Serialise a mesh; boundary edges are written as line elements."""
    out = io.StringIO()
    n_nodes, n_quad, n_line = mesh.n_nodes, mesh.n_elem, len(mesh.boundary_edges)
    if version == "2.2":
        out.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
        out.write(f"{n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes, start=1):
            out.write(f"{i} {float(x)!r} {float(y)!r} 0\n")
        out.write("$EndNodes\n$Elements\n")
        out.write(f"{n_line + n_quad}\n")
        tag = 1
        for a, b in mesh.boundary_edges:
            out.write(f"{tag} 1 2 1 1 {a + 1} {b + 1}\n")
            tag += 1
        for q in mesh.elements:
            out.write(f"{tag} 3 2 2 1 {' '.join(str(int(i) + 1) for i in q)}\n")
            tag += 1
        out.write("$EndElements\n")
    elif version == "4.1":
        out.write("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Nodes\n")
        out.write(f"1 {n_nodes} 1 {n_nodes}\n2 1 0 {n_nodes}\n")
        for i in range(1, n_nodes + 1):
            out.write(f"{i}\n")
        for x, y in mesh.nodes:
            out.write(f"{float(x)!r} {float(y)!r} 0\n")
        out.write("$EndNodes\n$Elements\n")
        blocks = (1 if n_line else 0) + 1
        out.write(f"{blocks} {n_line + n_quad} 1 {n_line + n_quad}\n")
        tag = 1
        if n_line:
            out.write(f"1 1 1 {n_line}\n")
            for a, b in mesh.boundary_edges:
                out.write(f"{tag} {a + 1} {b + 1}\n")
                tag += 1
        out.write(f"2 1 3 {n_quad}\n")
        for q in mesh.elements:
            out.write(f"{tag} {' '.join(str(int(i) + 1) for i in q)}\n")
            tag += 1
        out.write("$EndElements\n")
    else:
        raise UnsupportedFormatError(f"cannot write MSH version {version}")
    return out.getvalue()
