"""Plain-text, SVG and CSV writers (and readers for the text formats)."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .geometry import CONTACT, JointGeometry


def _f(x) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def polygon_text(geom: JointGeometry) -> str:
    """Both half polygons, blank-line separated, then contact edges as global index pairs."""
    lines, pairs, base = [], [], 0
    for side in ("L", "R"):
        poly = geom.polygon(side)
        if side == "R":
            lines.append("")
        lines += [f"{_f(x)} {_f(y)}" for x, y in poly]
        for k, (tag, _) in enumerate(geom.tags(side)):
            if tag == CONTACT:
                pairs.append((base + k, base + (k + 1) % len(poly)))
        base += len(poly)
    lines.append("")
    lines.append("# contact")
    lines += [f"{i} {j}" for i, j in pairs]
    return "\n".join(lines) + "\n"


def read_polygon_text(text: str):
    """Inverse of polygon_text: (list of (n, 2) arrays, list of index pairs)."""
    polys, cur, pairs, in_contact = [], [], [], False
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("# contact"):
            in_contact = True
            continue
        if in_contact:
            if line:
                i, j = line.split()
                pairs.append((int(i), int(j)))
            continue
        if not line:
            if cur:
                polys.append(np.array(cur))
                cur = []
            continue
        cur.append([float(v) for v in line.split()])
    if cur:
        polys.append(np.array(cur))
    return polys, pairs


def geometry_svg(geom: JointGeometry, deformed: dict | None = None) -> str:
    """SVG in mm; y flipped so the picture matches the usual x-right, y-up view.

    ``deformed`` optionally maps "L"/"R" to (nodes, boundary_edges) pairs that
    are drawn as thin outlines on top.
    """
    dom = geom.domain
    W, H = dom.half_width, dom.height
    out = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{2 * W:g}mm" height="{H:g}mm" viewBox="{-W:g} 0 {2 * W:g} {H:g}">',
        f'<g transform="translate(0 {H:g}) scale(1 -1)">',
    ]
    fills = {"L": "#d9c7a8", "R": "#a8bcd9"}
    for side in ("L", "R"):
        pts = " ".join(f"{x:.6g},{y:.6g}" for x, y in geom.polygon(side))
        out.append(f'<polygon points="{pts}" fill="{fills[side]}" stroke="black" stroke-width="0.05"/>')
    iface = " ".join(f"{x:.6g},{y:.6g}" for x, y in geom.interface)
    out.append(f'<polyline points="{iface}" fill="none" stroke="red" stroke-width="0.1"/>')
    for side, (nodes, edges) in (deformed or {}).items():
        for i, j in edges:
            (x0, y0), (x1, y1) = nodes[i], nodes[j]
            out.append(f'<line x1="{x0:.6g}" y1="{y0:.6g}" x2="{x1:.6g}" y2="{y1:.6g}" stroke="black" stroke-width="0.03"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"


def mesh_text(mesh, nodes=None, field=None) -> str:
    """`v x y`, `t i j k`, `m node tag` lines, plus `d a b` per node if ``field`` is given."""
    X = mesh.nodes if nodes is None else nodes
    buf = [f"v {_f(x)} {_f(y)}" for x, y in X]
    buf += [f"t {i} {j} {k}" for i, j, k in mesh.triangles]
    buf += [f"m {n} {tag}" for n, tag in mesh.node_markers()]
    if field is not None:
        F = np.asarray(field, dtype=float).reshape(-1, 2)
        if len(F) != len(X):
            raise ValueError("field length does not match node count")
        buf += [f"d {_f(a)} {_f(b)}" for a, b in F]
    return "\n".join(buf) + "\n"


def read_mesh_text(text: str) -> dict:
    v, t, m, d = [], [], [], []
    for line in text.splitlines():
        if not line:
            continue
        kind, *rest = line.split()
        if kind == "v":
            v.append([float(r) for r in rest])
        elif kind == "t":
            t.append([int(r) for r in rest])
        elif kind == "m":
            m.append((int(rest[0]), rest[1]))
        elif kind == "d":
            d.append([float(r) for r in rest])
        else:
            raise ValueError(f"unknown record {kind!r}")
    return {
        "nodes": np.array(v).reshape(-1, 2),
        "triangles": np.array(t, dtype=np.int64).reshape(-1, 3),
        "markers": m,
        "field": np.array(d).reshape(-1, 2) if d else None,
    }


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def trace_csv(trace, param_names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", *param_names, "loss", "d", "step_size", "step_kind"])
    for s in trace.steps:
        w.writerow([s.step, *map(_f, s.theta), _f(s.L), _f(s.d), _f(s.step_size), s.step_kind])
    return buf.getvalue()


def gradcheck_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component", "adjoint", "fd", "rel_diff"])
    for label, a, f, r in report.rows():
        w.writerow([label, _f(a), _f(f), _f(r)])
    buf.write(f"# mean_rel_diff={_f(report.mean_rel_diff)} step={_f(report.step)} mode={report.mode}\n")
    return buf.getvalue()
