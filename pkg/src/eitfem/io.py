"""Text formats for meshes, nodal fields, patterns and CSV tables, with atomic writes."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataIOError, InvalidMeshError
from .mesh import Domain, TriMesh, build_mesh


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a sibling temporary file, then rename it over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------- meshes

def format_mesh(mesh: TriMesh) -> str:
    out = ["eitmesh 1", f"vertices {mesh.n_nodes}"]
    out += [f"{fmt(x)} {fmt(y)}" for x, y in mesh.nodes]
    out.append(f"triangles {mesh.n_triangles}")
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    out.append(f"boundary {len(mesh.boundary_edges)}")
    out += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges, mesh.electrode_of_edge)]
    d = mesh.domain
    out.append(f"domain {d.kind} {fmt(d.center[0])} {fmt(d.center[1])} {fmt(d.radius)}")
    return "\n".join(out) + "\n"


def parse_mesh(text: str, level: int = 0) -> TriMesh:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    pos = 0

    def take(keyword):
        nonlocal pos
        if pos >= len(lines):
            raise InvalidMeshError(f"mesh file ends before '{keyword}'")
        head = lines[pos].split()
        if head[0] != keyword or len(head) != 2 or not head[1].isdigit():
            raise InvalidMeshError(f"expected '{keyword} <count>' at line {pos + 1}")
        n = int(head[1])
        rows = lines[pos + 1:pos + 1 + n]
        if len(rows) != n:
            raise InvalidMeshError(f"section '{keyword}' is truncated")
        pos += 1 + n
        return rows

    if not lines or lines[0] != "eitmesh 1":
        raise InvalidMeshError("mesh file must start with 'eitmesh 1'")
    pos = 1
    try:
        nodes = np.array([[float(v) for v in r.split()] for r in take("vertices")], dtype=float)
        tris = np.array([[int(v) for v in r.split()] for r in take("triangles")], dtype=np.int64)
        bnd = np.array([[int(v) for v in r.split()] for r in take("boundary")], dtype=np.int64)
        if pos >= len(lines):
            raise InvalidMeshError("mesh file lacks a 'domain' line")
        dom = lines[pos].split()
        if dom[0] != "domain" or len(dom) != 5 or dom[1] not in ("polygon", "disk"):
            raise InvalidMeshError(f"malformed domain line at line {pos + 1}")
        domain = Domain(dom[1], float(dom[4]), (float(dom[2]), float(dom[3])))
    except ValueError as exc:
        raise InvalidMeshError(f"malformed number in mesh file: {exc}") from exc
    if nodes.ndim != 2 or nodes.shape[1] != 2 or tris.ndim != 2 or tris.shape[1] != 3 \
            or bnd.ndim != 2 or bnd.shape[1] != 3:
        raise InvalidMeshError("wrong number of entries per row")
    tags = {(min(i, j), max(i, j)): t for i, j, t in bnd}
    mesh = build_mesh(nodes, tris, domain, level, tags)
    found = {(min(i, j), max(i, j)) for i, j in mesh.boundary_edges}
    if found != set(tags):
        raise InvalidMeshError("listed boundary edges do not match the triangulation")
    return mesh


def write_mesh(path, mesh: TriMesh) -> None:
    atomic_write(path, format_mesh(mesh))


def read_mesh(path) -> TriMesh:
    return parse_mesh(read_text(path))


# ---------------------------------------------------------------- fields, patterns, tables

def format_field(values) -> str:
    return "".join(fmt(v) + "\n" for v in np.asarray(values, dtype=float))


def parse_field(text: str, n_nodes: int | None = None) -> np.ndarray:
    try:
        v = np.array([float(ln) for ln in text.split()], dtype=float)
    except ValueError as exc:
        raise DataIOError(f"malformed nodal field: {exc}") from exc
    if n_nodes is not None and len(v) != n_nodes:
        raise DataIOError(f"nodal field has {len(v)} values, mesh has {n_nodes} nodes")
    return v


def parse_patterns(text: str, n_electrodes: int | None = None) -> np.ndarray:
    """One current pattern per non-empty line, entries separated by whitespace."""
    try:
        rows = [[float(v) for v in ln.split()] for ln in text.splitlines() if ln.strip()]
    except ValueError as exc:
        raise DataIOError(f"malformed pattern file: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise DataIOError("pattern file needs rows of equal length")
    P = np.array(rows)
    if n_electrodes is not None and P.shape[1] != n_electrodes:
        raise DataIOError(f"patterns have {P.shape[1]} entries, expected {n_electrodes}")
    return P


def format_patterns(patterns) -> str:
    return "".join(" ".join(fmt(v) for v in row) + "\n" for row in np.atleast_2d(patterns))


def format_voltages(U) -> str:
    """CSV rows ``pattern,electrode,voltage`` for an ``(L, P)`` voltage matrix."""
    U = np.asarray(U, dtype=float)
    out = ["pattern,electrode,voltage"]
    for p in range(U.shape[1]):
        out += [f"{p},{l},{fmt(U[l, p])}" for l in range(U.shape[0])]
    return "\n".join(out) + "\n"


def parse_voltages(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "pattern,electrode,voltage":
        raise DataIOError("voltage file must start with 'pattern,electrode,voltage'")
    try:
        rows = [ln.split(",") for ln in lines[1:]]
        idx = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
        val = np.array([float(r[2]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataIOError(f"malformed voltage row: {exc}") from exc
    if len(idx) == 0 or idx.min() < 0:
        raise DataIOError("voltage file has no valid rows")
    P, L = idx[:, 0].max() + 1, idx[:, 1].max() + 1
    if len(idx) != P * L or len({tuple(r) for r in idx}) != P * L:
        raise DataIOError("voltage file must list every (pattern, electrode) pair once")
    U = np.empty((L, P))
    U[idx[:, 1], idx[:, 0]] = val
    return U


def format_run_summary(result) -> str:
    out = ["iteration,J,fit,penalty,step"]
    for k, (J, f, p, s) in enumerate(zip(result.objective_history, result.fit_history,
                                         result.penalty_history, result.step_history)):
        out.append(f"{k},{fmt(J)},{fmt(f)},{fmt(p)},{fmt(s)}")
    return "\n".join(out) + "\n"
