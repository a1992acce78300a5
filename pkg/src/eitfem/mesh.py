"""Triangular meshes of the unit square and of inscribed polygons of the unit disk.

Meshes are immutable. Electrode tags live on the boundary edges: 0 means no
electrode, ``l`` in ``1..L`` means electrode ``l``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    ElectrodeUnresolvedError,
    InvalidArgumentError,
    InvalidMeshError,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Domain:
    kind: str = "polygon"  # "polygon" or "disk"
    radius: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def is_disk(self) -> bool:
        return self.kind == "disk"


@dataclass(frozen=True)
class ElectrodeConfig:
    """Electrode arcs and contact impedances.

    On a disk an arc is ``(start_angle, end_angle)`` measured counterclockwise
    from the positive x axis; ``end`` may exceed ``2*pi`` to wrap past zero.
    On a polygon an arc is an interval of boundary arclength, measured
    counterclockwise from the lowest (then leftmost) boundary vertex.
    """

    arcs: tuple[tuple[float, float], ...]
    impedances: tuple[float, ...]

    def __post_init__(self):
        arcs = tuple((float(a), float(b)) for a, b in self.arcs)
        z = np.broadcast_to(np.asarray(self.impedances, dtype=float), (len(arcs),))
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "impedances", tuple(float(v) for v in z))
        if len(arcs) < 2:
            raise InvalidArgumentError("need at least two electrodes")
        if not all(np.isfinite(v) and v > 0 for v in self.impedances):
            raise InvalidArgumentError("contact impedances must be positive")
        for a, b in arcs:
            if not (np.isfinite(a) and np.isfinite(b) and b > a):
                raise InvalidArgumentError(f"electrode arc ({a}, {b}) must have end > start")

    @property
    def n_electrodes(self) -> int:
        return len(self.arcs)

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.impedances)

    def check_disjoint(self, period: float) -> None:
        """Raise unless the arcs are pairwise disjoint with positive gaps on a loop of length ``period``."""
        spans = []
        for a, b in self.arcs:
            if b - a >= period:
                raise InvalidArgumentError("an electrode arc covers the whole boundary")
            a0 = a % period
            spans.append((a0, a0 + (b - a)))
        spans.sort()
        for (a1, b1), (a2, b2) in zip(spans, spans[1:] + [(spans[0][0] + period, 0.0)]):
            if not a2 - b1 > 0:
                raise InvalidArgumentError("electrode arcs overlap or touch")

    def with_impedances(self, impedances) -> "ElectrodeConfig":
        return ElectrodeConfig(self.arcs, tuple(np.broadcast_to(impedances, (self.n_electrodes,))))

    def permuted(self, order: Sequence[int]) -> "ElectrodeConfig":
        return ElectrodeConfig(
            tuple(self.arcs[i] for i in order), tuple(self.impedances[i] for i in order)
        )


def uniform_electrodes(n_electrodes: int, coverage: float = 0.5, impedance: float = 0.1,
                       period: float = TWO_PI, offset: float = 0.0) -> ElectrodeConfig:
    """Equally spaced electrodes covering ``coverage`` of a boundary of length ``period``."""
    if not 0 < coverage < 1:
        raise InvalidArgumentError("coverage must lie in (0, 1)")
    pitch = period / n_electrodes
    arcs = tuple((offset + k * pitch, offset + k * pitch + coverage * pitch) for k in range(n_electrodes))
    return ElectrodeConfig(arcs, (impedance,) * n_electrodes)


@dataclass(frozen=True)
class QualityReport:
    min_angle: float
    h_max: float
    h_min: float
    shape_regularity: float
    boundary_node_count: int

    @property
    def quasi_uniformity(self) -> float:
        return self.h_max / self.h_min


@dataclass(frozen=True, eq=False)
class TriMesh:
    nodes: np.ndarray  # (N, 2)
    triangles: np.ndarray  # (M, 3), counterclockwise
    boundary_edges: np.ndarray  # (B, 2), ordered along the counterclockwise boundary loop
    boundary_owner: np.ndarray  # (B,), owning triangle of each boundary edge
    electrode_of_edge: np.ndarray  # (B,), 0 = untagged
    domain: Domain = field(default_factory=Domain)
    level: int = 0

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "boundary_owner", "electrode_of_edge"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_electrodes(self) -> int:
        return int(self.electrode_of_edge.max(initial=0))

    @property
    def h(self) -> float:
        return float(circumradii(self).max())

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.boundary_edges[:, 0]

    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def electrode_edges(self, l: int) -> np.ndarray:
        """Indices of boundary edges tagged with electrode ``l`` (1-based)."""
        return np.flatnonzero(self.electrode_of_edge == l)

    def electrode_lengths(self, n_electrodes: int | None = None) -> np.ndarray:
        L = n_electrodes or self.n_electrodes
        return np.bincount(self.electrode_of_edge, weights=self.edge_lengths(), minlength=L + 1)[1:L + 1]

    def area(self) -> float:
        return float(signed_areas(self).sum())


# ---------------------------------------------------------------- geometry of elements

def signed_areas(mesh: TriMesh) -> np.ndarray:
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _side_lengths(mesh: TriMesh) -> np.ndarray:
    p = mesh.nodes[mesh.triangles]
    return np.stack([
        np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
    ], axis=1)


def circumradii(mesh: TriMesh) -> np.ndarray:
    s = _side_lengths(mesh)
    return s.prod(axis=1) / (4.0 * signed_areas(mesh))


def mesh_quality(mesh: TriMesh) -> QualityReport:
    s = _side_lengths(mesh)
    area = signed_areas(mesh)
    a, b, c = s[:, 0], s[:, 1], s[:, 2]
    cos_a = np.clip((b**2 + c**2 - a**2) / (2 * b * c), -1, 1)
    cos_b = np.clip((a**2 + c**2 - b**2) / (2 * a * c), -1, 1)
    cos_c = np.clip((a**2 + b**2 - c**2) / (2 * a * b), -1, 1)
    min_angle = float(np.arccos(np.stack([cos_a, cos_b, cos_c])).min())
    R = s.prod(axis=1) / (4.0 * area)
    r = 2.0 * area / s.sum(axis=1)
    return QualityReport(
        min_angle=min_angle,
        h_max=float(R.max()),
        h_min=float(R.min()),
        shape_regularity=float((R / r).max()),
        boundary_node_count=int(len(np.unique(mesh.boundary_edges))),
    )


# ---------------------------------------------------------------- construction

def _boundary_loop(nodes: np.ndarray, triangles: np.ndarray, start_node: int | None = None):
    """Boundary edges (oriented as in their owning CCW triangle) ordered along the loop."""
    local = np.array([[0, 1], [1, 2], [2, 0]])
    edges = triangles[:, local].reshape(-1, 2)
    owner = np.repeat(np.arange(len(triangles)), 3)
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max() > 2:
        raise InvalidMeshError("an edge is shared by more than two triangles")
    on_boundary = counts[inverse] == 1
    bedges = edges[on_boundary]
    bowner = owner[on_boundary]
    nxt = {}
    for k, (i, j) in enumerate(bedges):
        if i in nxt:
            raise InvalidMeshError("boundary is not a simple closed loop")
        nxt[int(i)] = k
    if start_node is None or start_node not in nxt:
        start_node = int(bedges[0, 0])
    order = []
    node = start_node
    for _ in range(len(bedges)):
        k = nxt.get(node)
        if k is None:
            raise InvalidMeshError("boundary edges do not close")
        order.append(k)
        node = int(bedges[k, 1])
        if node == start_node:
            break
    if len(order) != len(bedges):
        raise InvalidMeshError("boundary consists of more than one loop")
    order = np.asarray(order)
    return bedges[order], bowner[order]


def _loop_start(nodes: np.ndarray, boundary_nodes: np.ndarray, domain: Domain) -> int:
    if domain.is_disk:
        ang = np.mod(np.arctan2(nodes[boundary_nodes, 1] - domain.center[1],
                                nodes[boundary_nodes, 0] - domain.center[0]), TWO_PI)
        ang[ang > TWO_PI - 1e-12] = 0.0
        return int(boundary_nodes[np.argmin(ang)])
    pts = nodes[boundary_nodes]
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    return int(boundary_nodes[order[0]])


def build_mesh(nodes, triangles, domain: Domain | None = None, level: int = 0,
               tags: dict | None = None, quasi_uniform_bound: float | None = None) -> TriMesh:
    """Assemble a validated :class:`TriMesh` from nodes and triangles.

    ``tags`` optionally maps sorted boundary node pairs to electrode numbers.
    """
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    domain = domain or Domain()
    bedges, bowner = _boundary_loop(nodes, triangles)
    start = _loop_start(nodes, np.unique(bedges), domain)
    bedges, bowner = _boundary_loop(nodes, triangles, start)
    etag = np.zeros(len(bedges), dtype=np.int64)
    if tags:
        for k, (i, j) in enumerate(bedges):
            etag[k] = tags.get((min(i, j), max(i, j)), 0)
    mesh = TriMesh(nodes, triangles, bedges, bowner, etag, domain, level)
    validate(mesh, quasi_uniform_bound)
    return mesh


def validate(mesh: TriMesh, quasi_uniform_bound: float | None = None) -> None:
    """Check the structural invariants of ``mesh``; raise :class:`InvalidMeshError` if any fails."""
    if mesh.nodes.ndim != 2 or mesh.nodes.shape[1] != 2 or not np.all(np.isfinite(mesh.nodes)):
        raise InvalidMeshError("nodes must be a finite (N, 2) array")
    if mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_nodes:
        raise InvalidMeshError("triangle index out of range")
    if np.any(signed_areas(mesh) <= 0):
        raise InvalidMeshError("triangles must have positive signed area")
    n_edges = len(np.unique(np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1), axis=0))
    used = len(np.unique(mesh.triangles))
    if used - n_edges + mesh.n_triangles != 1:
        raise InvalidMeshError("Euler relation V - E + T = 1 violated")
    if mesh.domain.is_disk:
        c = np.asarray(mesh.domain.center)
        r = np.linalg.norm(mesh.nodes[mesh.boundary_nodes] - c, axis=1)
        if np.max(np.abs(r - mesh.domain.radius)) > 1e-12 * mesh.domain.radius:
            raise InvalidMeshError("disk boundary nodes must lie on the circle")
    if quasi_uniform_bound is not None:
        q = mesh_quality(mesh)
        if q.quasi_uniformity > quasi_uniform_bound:
            raise InvalidMeshError(
                f"quasi-uniformity ratio {q.quasi_uniformity:.3f} exceeds {quasi_uniform_bound}")


def generate_square_mesh(n: int, quasi_uniform_bound: float = 4.0) -> TriMesh:
    """Uniform ``n`` x ``n`` grid on the unit square, each cell cut along the same diagonal."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return build_mesh(nodes, tris, Domain("polygon"), quasi_uniform_bound=quasi_uniform_bound)


def _zip_rings(inner: np.ndarray, inner_pos: tuple, outer: np.ndarray, outer_pos: tuple):
    """Triangulate the annulus between two node rings, merging by angle.

    Ring positions are given exactly as ``(numerators, denominator)`` with
    angle ``2*pi*numerator/denominator``; comparing them in integers keeps the
    triangulation as symmetric as the rings themselves.
    """
    na_num, da = inner_pos
    nb_num, db = outer_pos
    na, nb = len(inner), len(outer)

    def le(p, q):  # angle of inner numerator p <= angle of outer numerator q
        return p * db <= q * da

    # outer start: last outer node whose angle does not exceed the first inner angle
    below = [j for j in range(nb) if nb_num[j] * da <= na_num[0] * db]
    start = below[-1] if below else nb - 1
    a = list(na_num) + [na_num[0] + da]
    b = [nb_num[(start + j) % nb] + db * ((start + j) // nb) for j in range(nb)]
    if not below:
        b = [v - db for v in b]
    b.append(b[0] + db)
    outer = np.roll(outer, -start)
    i = j = 0
    tris = []
    while i < na or j < nb:
        if j == nb or (i < na and le(a[i + 1], b[j + 1])):
            tris.append((inner[i % na], outer[j % nb], inner[(i + 1) % na]))
            i += 1
        else:
            tris.append((inner[i % na], outer[j % nb], outer[(j + 1) % nb]))
            j += 1
    return tris


def _ring_count(n_boundary: int, k: int, n_rings: int) -> int:
    if k == n_rings:
        return n_boundary
    count = max(6, int(round(n_boundary * k / n_rings)))
    if n_boundary % 2 == 0 and count % 2:
        # even populations keep the mesh invariant under the half-turn
        count += 1 if n_boundary * k / n_rings > count else -1
    return max(6, count)


def generate_disk_mesh(n_boundary: int, quasi_uniform_bound: float = 4.0) -> TriMesh:
    """Concentric-ring mesh of the inscribed regular ``n_boundary``-gon of the unit disk.

    Ring count and ring populations are chosen so that radial and tangential
    spacings agree; boundary nodes sit at angles ``2*pi*k/n_boundary``. For
    even ``n_boundary`` the mesh is symmetric under the half-turn.
    """
    if int(n_boundary) != n_boundary or n_boundary < 8:
        raise InvalidArgumentError("n_boundary must be an integer >= 8")
    n_boundary = int(n_boundary)
    n_rings = max(1, int(round(n_boundary / TWO_PI)))
    nodes = [(0.0, 0.0)]
    tris = []
    prev_ids = prev_pos = None
    for k in range(1, n_rings + 1):
        count = _ring_count(n_boundary, k, n_rings)
        shift = 0 if k == n_rings else k % 2  # inner rings alternate a half-step offset
        num = 2 * np.arange(count) + shift
        ang = TWO_PI * num / (2 * count)
        ids = np.arange(len(nodes), len(nodes) + count)
        radius = 1.0 if k == n_rings else k / n_rings
        nodes.extend(map(tuple, radius * np.column_stack([np.cos(ang), np.sin(ang)])))
        if prev_ids is None:
            tris.extend((0, ids[i], ids[(i + 1) % count]) for i in range(count))
        else:
            tris.extend(_zip_rings(prev_ids, prev_pos, ids, (num.tolist(), 2 * count)))
        prev_ids, prev_pos = ids, (num.tolist(), 2 * count)
    nodes = np.asarray(nodes)
    tris = np.asarray(tris, dtype=np.int64)
    area = signed_areas_raw(nodes, tris)
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return build_mesh(nodes, tris, Domain("disk", 1.0, (0.0, 0.0)),
                      quasi_uniform_bound=quasi_uniform_bound)


def signed_areas_raw(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints.

    On a disk, new boundary nodes are pushed radially onto the circle. Child
    boundary edges inherit the electrode tag of their parent edge.
    """
    tri = mesh.triangles
    local = np.array([[0, 1], [1, 2], [2, 0]])
    key = np.sort(tri[:, local].reshape(-1, 2), axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    mid_ids = mesh.n_nodes + np.arange(len(uniq))
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])

    parent_tag = {}
    for (i, j), t in zip(mesh.boundary_edges, mesh.electrode_of_edge):
        parent_tag[(min(i, j), max(i, j))] = int(t)
    edge_index = {(int(i), int(j)): k for k, (i, j) in enumerate(uniq)}

    if mesh.domain.is_disk:
        c = np.asarray(mesh.domain.center)
        for (i, j) in parent_tag:
            k = edge_index[(i, j)]
            d = mids[k] - c
            mids[k] = c + mesh.domain.radius * d / np.linalg.norm(d)

    m = mid_ids[inverse].reshape(-1, 3)  # m01, m12, m20
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    children = np.concatenate([
        np.column_stack([v0, m01, m20]),
        np.column_stack([m01, v1, m12]),
        np.column_stack([m20, m12, v2]),
        np.column_stack([m01, m12, m20]),
    ])
    nodes = np.vstack([mesh.nodes, mids])

    tags = {}
    for (i, j), t in parent_tag.items():
        if t:
            mid = int(mid_ids[edge_index[(i, j)]])
            tags[(min(i, mid), max(i, mid))] = t
            tags[(min(j, mid), max(j, mid))] = t
    return build_mesh(nodes, children, mesh.domain, mesh.level + 1, tags)


def refine(mesh: TriMesh, times: int) -> TriMesh:
    for _ in range(times):
        mesh = refine_uniform(mesh)
    return mesh


# ---------------------------------------------------------------- electrodes

def boundary_parameter(mesh: TriMesh) -> tuple[np.ndarray, float]:
    """Parameter of each boundary-edge midpoint, and the loop period.

    Disk: angle of the normal-ray image of the midpoint. For a chord with both
    endpoints on the circle that ray passes through the centre, so the image
    lies along the midpoint's own direction. Polygon: arclength from the loop
    start.
    """
    p = mesh.nodes[mesh.boundary_edges]
    mid = 0.5 * (p[:, 0] + p[:, 1])
    if mesh.domain.is_disk:
        c = np.asarray(mesh.domain.center)
        ang = np.mod(np.arctan2(mid[:, 1] - c[1], mid[:, 0] - c[0]), TWO_PI)
        return ang, TWO_PI
    lengths = mesh.edge_lengths()
    s = np.cumsum(lengths) - 0.5 * lengths
    return s, float(lengths.sum())


def _in_arc(t: np.ndarray, a: float, b: float, period: float) -> np.ndarray:
    return np.mod(t - a, period) < (b - a)


def tag_electrodes(mesh: TriMesh, config: ElectrodeConfig) -> TriMesh:
    """Return a copy of ``mesh`` whose boundary edges carry electrode tags from ``config``."""
    t, period = boundary_parameter(mesh)
    config.check_disjoint(period)
    tags = np.zeros(len(t), dtype=np.int64)
    for l, (a, b) in enumerate(config.arcs, start=1):
        hit = _in_arc(t, a, b, period)
        if not hit.any():
            raise ElectrodeUnresolvedError(
                f"electrode {l} arc ({a:.6g}, {b:.6g}) captures no boundary edge; refine the mesh")
        tags[hit] = l
    return replace(mesh, electrode_of_edge=tags)
