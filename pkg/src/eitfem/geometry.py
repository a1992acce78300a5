"""Maps between the unit circle and its inscribed polygon, and the resulting error functionals.

``project_to_polygon`` is the closest-point map onto the polygon boundary,
``normal_ray_map`` sends a point of a boundary face along the face normal onto
the circle, and ``extend_field`` extends a mesh field to the whole disk by
composing with the projection on the crescent between polygon and circle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cem_forward import values_of
from .errors import (
    AmbiguousNormalError,
    ElectrodeUnresolvedError,
    InvalidArgumentError,
    OutOfDomainError,
    UnsupportedDomainError,
)
from .mesh import TWO_PI, ElectrodeConfig, TriMesh, boundary_parameter, signed_areas

GAUSS4 = np.polynomial.legendre.leggauss(4)
GAUSS8 = np.polynomial.legendre.leggauss(8)
MAX_PANEL_ANGLE = 0.1


@dataclass(frozen=True)
class GeometryReport:
    n_boundary: int
    h: float
    hausdorff: float
    normal_dev: float
    perimeter_gap: float
    eps_h: float
    arc_chord_distortion: float
    electrode_measure_gaps: tuple[float, ...] = ()

    CSV_FIELDS = ("n_boundary", "h", "hausdorff", "normal_dev", "perimeter_gap", "eps_h")

    def csv_row(self) -> tuple:
        return tuple(getattr(self, k) for k in self.CSV_FIELDS)


def _require_disk(mesh: TriMesh) -> None:
    if not mesh.domain.is_disk:
        raise UnsupportedDomainError("operation is defined for disk meshes only")


def _faces(mesh: TriMesh):
    p = mesh.nodes[mesh.boundary_edges]
    return p[:, 0], p[:, 1]


def face_normals(mesh: TriMesh) -> np.ndarray:
    a, b = _faces(mesh)
    d = b - a
    n = np.column_stack([d[:, 1], -d[:, 0]])  # right of a counterclockwise loop
    return n / np.linalg.norm(n, axis=1)[:, None]


def _central_angles(mesh: TriMesh) -> np.ndarray:
    c = np.asarray(mesh.domain.center)
    a, b = _faces(mesh)
    ra, rb = a - c, b - c
    cross = ra[:, 0] * rb[:, 1] - ra[:, 1] * rb[:, 0]
    return np.arctan2(cross, np.einsum("ij,ij->i", ra, rb))


def _check_in_disk(mesh: TriMesh, x: np.ndarray) -> None:
    c = np.asarray(mesh.domain.center)
    r = np.linalg.norm(x - c, axis=1)
    if np.any(r > mesh.domain.radius * (1 + 1e-12)):
        raise OutOfDomainError("point lies outside the disk")


def _closest_on_faces(mesh: TriMesh, x: np.ndarray):
    a, b = _faces(mesh)
    d = b - a
    t = np.einsum("kbd,bd->kb", x[:, None, :] - a[None], d) / np.einsum("bd,bd->b", d, d)
    t = np.clip(t, 0.0, 1.0)
    foot = a[None] + t[..., None] * d[None]
    dist = np.linalg.norm(x[:, None, :] - foot, axis=2)
    # equidistant faces: take the lowest index
    tol = 1e-14 * mesh.domain.radius
    face = np.argmax(dist <= dist.min(axis=1, keepdims=True) + tol, axis=1)
    k = np.arange(len(x))
    return foot[k, face], face, t[k, face]


def project_to_polygon(mesh: TriMesh, x):
    """Closest point on the polygon boundary, and the index of the face containing it.

    Accepts one point ``(2,)`` or many ``(k, 2)``.
    """
    _require_disk(mesh)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    _check_in_disk(mesh, pts)
    foot, face, _ = _closest_on_faces(mesh, pts)
    if np.ndim(x) == 1:
        return foot[0], int(face[0])
    return foot, face


def normal_ray_map(mesh: TriMesh, x_h, face: int | None = None) -> np.ndarray:
    """Intersection of the outward face-normal ray through ``x_h`` with the circle."""
    _require_disk(mesh)
    x_h = np.asarray(x_h, dtype=float)
    a, b = _faces(mesh)
    scale = mesh.domain.radius
    if face is None:
        _, faces, ts = _closest_on_faces(mesh, x_h[None])
        face, t = int(faces[0]), float(ts[0])
    else:
        d = b[face] - a[face]
        t = float((x_h - a[face]) @ d / (d @ d))
    foot = a[face] + t * (b[face] - a[face])
    if np.linalg.norm(foot - x_h) > 1e-10 * scale:
        raise InvalidArgumentError("point does not lie on a boundary face")
    if t <= 1e-12 or t >= 1 - 1e-12:
        raise AmbiguousNormalError("normal is undefined at a face endpoint")
    n = face_normals(mesh)[face]
    w = x_h - np.asarray(mesh.domain.center)
    wn = w @ n
    s = -wn + math.sqrt(wn * wn - (w @ w - scale**2))
    return x_h + s * n


def geometry_report(mesh: TriMesh, electrodes: ElectrodeConfig | None = None) -> GeometryReport:
    """Distances between circle and inscribed polygon measured on ``mesh``."""
    _require_disk(mesh)
    r = mesh.domain.radius
    c = np.asarray(mesh.domain.center)
    a, b = _faces(mesh)
    n = face_normals(mesh)
    lengths = mesh.edge_lengths()
    phi = _central_angles(mesh)

    # farthest arc point over each chord sits on the chord's normal through the centre
    line_dist = np.einsum("ij,ij->i", a - c, n)
    hausdorff = float(np.max(r - line_dist))

    # normals of arc points over a chord deviate most at the chord ends
    ra = (a - c) / r
    dev = np.abs(np.arctan2(ra[:, 0] * n[:, 1] - ra[:, 1] * n[:, 0], np.einsum("ij,ij->i", ra, n)))
    normal_dev = float(dev.max())

    perimeter_gap = float(TWO_PI * r - lengths.sum())

    segment = 0.5 * r**2 * (phi - np.sin(phi))
    owner_area = signed_areas(mesh)[mesh.boundary_owner]
    eps_h = float(np.max(segment / owner_area))

    half = 0.5 * phi
    distortion = float(np.max(half / np.sin(half) - 1.0))

    gaps = ()
    if electrodes is not None:
        gaps = tuple(float(g) for g in electrode_measures(mesh, electrodes)[2])
    return GeometryReport(len(lengths), mesh.h, hausdorff, normal_dev, perimeter_gap, eps_h,
                          distortion, gaps)


def electrode_measures(mesh: TriMesh, electrodes: ElectrodeConfig):
    """Per electrode: arc length ``|e|``, projected length ``|phi_h(e)|``, and their gap.

    Over each chord the arc point at angle ``theta`` from the chord bisector
    projects to tangential coordinate ``r sin(theta)``, so arc pieces map to
    chord pieces in closed form; the normal-ray image of the projection is
    the arc piece itself.
    """
    _require_disk(mesh)
    r = mesh.domain.radius
    c = np.asarray(mesh.domain.center)
    a, _ = _faces(mesh)
    start = np.mod(np.arctan2(a[:, 1] - c[1], a[:, 0] - c[0]), TWO_PI)
    phi = _central_angles(mesh)
    arc_len, proj_len = [], []
    for lo, hi in electrodes.arcs:
        tot_arc = tot_proj = 0.0
        for s0, ph in zip(start, phi):
            mid = s0 + 0.5 * ph
            for shift in (-TWO_PI, 0.0, TWO_PI):
                s = max(lo + shift, s0)
                e = min(hi + shift, s0 + ph)
                if e > s:
                    tot_arc += r * (e - s)
                    tot_proj += r * (math.sin(e - mid) - math.sin(s - mid))
        arc_len.append(tot_arc)
        proj_len.append(tot_proj)
    arc_len, proj_len = np.array(arc_len), np.array(proj_len)
    return arc_len, proj_len, arc_len - proj_len


# ---------------------------------------------------------------- field extension

def locate(mesh: TriMesh, x: np.ndarray, tol: float = 1e-12):
    """Containing triangle (``-1`` if none) and barycentric coordinates for points ``(k, 2)``."""
    p = mesh.nodes[mesh.triangles]
    centroids = p.mean(axis=1)
    k = min(16, mesh.n_triangles)
    _, cand = cKDTree(centroids).query(x, k=k)
    cand = np.atleast_2d(cand).reshape(len(x), k)
    tri = np.full(len(x), -1)
    bary = np.zeros((len(x), 3))

    def bary_of(ts, pts):
        q = p[ts]
        v0, v1 = q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]
        w = pts - q[:, 0]
        det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (w[:, 0] * v1[:, 1] - w[:, 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * w[:, 1] - v0[:, 1] * w[:, 0]) / det
        return np.column_stack([1 - l1 - l2, l1, l2])

    for j in range(k):
        todo = np.flatnonzero(tri < 0)
        if todo.size == 0:
            break
        lam = bary_of(cand[todo, j], x[todo])
        ok = lam.min(axis=1) >= -tol
        tri[todo[ok]] = cand[todo[ok], j]
        bary[todo[ok]] = lam[ok]
    for i in np.flatnonzero(tri < 0):
        lam = bary_of(np.arange(mesh.n_triangles), np.repeat(x[i:i + 1], mesh.n_triangles, axis=0))
        best = int(np.argmax(lam.min(axis=1)))
        if lam[best].min() >= -tol:
            tri[i], bary[i] = best, lam[best]
    return tri, bary


def _face_value(mesh: TriMesh, v: np.ndarray, face: np.ndarray, t: np.ndarray) -> np.ndarray:
    e = mesh.boundary_edges[face]
    return (1 - t) * v[e[:, 0]] + t * v[e[:, 1]]


def extend_field(mesh: TriMesh, f, x):
    """Value of the extended field at ``x``: the P1 interpolant inside the polygon, the
    value at the projected boundary point in the crescent."""
    v = values_of(f)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    tri, bary = locate(mesh, pts)
    out = np.empty(len(pts))
    inside = tri >= 0
    out[inside] = np.einsum("ki,ki->k", v[mesh.triangles[tri[inside]]], bary[inside])
    outside = np.flatnonzero(~inside)
    if outside.size:
        if not mesh.domain.is_disk:
            raise OutOfDomainError("point lies outside the polygonal domain")
        q = pts[outside]
        _check_in_disk(mesh, q)
        _, face, t = _closest_on_faces(mesh, q)
        out[outside] = _face_value(mesh, v, face, t)
    return float(out[0]) if np.ndim(x) == 1 else out


def crescent_integrals(mesh: TriMesh, f, p: float) -> tuple[float, float]:
    """``int |jf|^p`` and ``int |grad jf|^p`` over the crescent between polygon and circle.

    Each circular segment is swept by the angle ``theta`` from the chord
    bisector and the fraction ``rho`` of the way from chord to circle; a 4x4
    Gauss rule is applied on angular panels no wider than ``MAX_PANEL_ANGLE``.
    The extended field is constant along chord normals, so its gradient there
    is the tangential gradient along the chord.
    """
    _require_disk(mesh)
    if not p >= 1:
        raise InvalidArgumentError("exponent p must be >= 1")
    v = values_of(f)
    r = mesh.domain.radius
    lengths = mesh.edge_lengths()
    phi = _central_angles(mesh)
    e = mesh.boundary_edges
    fa, fb = v[e[:, 0]], v[e[:, 1]]
    xg, wg = GAUSS4
    value = 0.0
    for j in range(len(lengths)):
        beta = 0.5 * phi[j]
        d = r * math.cos(beta)
        panels = max(1, math.ceil(2 * beta / MAX_PANEL_ANGLE))
        edges = np.linspace(-beta, beta, panels + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            theta = 0.5 * (hi + lo) + 0.5 * (hi - lo) * xg
            w_theta = 0.5 * (hi - lo) * wg
            t = r * np.sin(theta)  # tangential coordinate from chord midpoint
            height = r * np.cos(theta) - d
            jac = r * np.cos(theta) * height  # d(t, y) / d(theta, rho)
            s = t / lengths[j] + 0.5
            val = np.abs((1 - s) * fa[j] + s * fb[j]) ** p
            # rho-direction weights sum to one and the integrand is independent of rho
            for w_rho in 0.5 * wg:
                value += w_rho * np.sum(w_theta * jac * val)
    segment = 0.5 * r**2 * (phi - np.sin(phi))
    tangential = np.abs(fb - fa) / lengths
    grad = float(np.sum(segment * tangential**p))
    return float(value), grad


def crescent_norm(mesh: TriMesh, f, p: float = 2.0) -> float:
    """``W^{1,p}`` norm of the extended field over the crescent."""
    value, grad = crescent_integrals(mesh, f, p)
    return (value + grad) ** (1.0 / p)


def crescent_area(mesh: TriMesh) -> float:
    _require_disk(mesh)
    phi = _central_angles(mesh)
    return float(np.sum(0.5 * mesh.domain.radius**2 * (phi - np.sin(phi))))


def arc_edges(mesh: TriMesh, arc: tuple[float, float]) -> np.ndarray:
    """Boundary edges whose midpoint image lies in ``arc``; same rule as electrode tagging."""
    t, period = boundary_parameter(mesh)
    lo, hi = arc
    edges = np.flatnonzero(np.mod(t - lo, period) < (hi - lo))
    if edges.size == 0:
        raise ElectrodeUnresolvedError(f"arc ({lo:.6g}, {hi:.6g}) captures no boundary edge")
    return edges


def edge_l1(mesh: TriMesh, f, edges: np.ndarray) -> float:
    """Exact ``int |f| ds`` over the listed boundary edges."""
    v = values_of(f)
    e = mesh.boundary_edges[edges]
    fa, fb = v[e[:, 0]], v[e[:, 1]]
    length = mesh.edge_lengths()[edges]
    same = fa * fb >= 0
    out = np.where(same, 0.5 * np.abs(fa + fb), 0.0)
    cross = ~same
    out[cross] = 0.5 * (fa[cross] ** 2 + fb[cross] ** 2) / (np.abs(fa[cross]) + np.abs(fb[cross]))
    return float(np.sum(length * out))


def boundary_integral_gap(mesh: TriMesh, f, arc: tuple[float, float]) -> float:
    """``|int_{e_h} f ds - int_{psi_h(e_h)} jf ds|`` for the edges ``e_h`` resolving ``arc``."""
    _require_disk(mesh)
    v = values_of(f)
    edges = arc_edges(mesh, arc)
    e = mesh.boundary_edges[edges]
    length = mesh.edge_lengths()[edges]
    chord = float(np.sum(0.5 * length * (v[e[:, 0]] + v[e[:, 1]])))

    r = mesh.domain.radius
    c = np.asarray(mesh.domain.center)
    a = mesh.nodes[e[:, 0]]
    start = np.arctan2(a[:, 1] - c[1], a[:, 0] - c[0])
    phi = _central_angles(mesh)[edges]
    xg, wg = GAUSS8
    theta = start[:, None] + 0.5 * phi[:, None] * (1 + xg[None])
    weights = 0.5 * phi[:, None] * wg[None] * r
    pts = c + r * np.stack([np.cos(theta), np.sin(theta)], axis=-1).reshape(-1, 2)
    # pull a hair inside so points stay within the disk tolerance
    pts = c + (pts - c) * (1 - 1e-15)
    _, face, t = _closest_on_faces(mesh, pts)
    arc_int = float(np.sum(weights.ravel() * _face_value(mesh, v, face, t)))
    return abs(chord - arc_int)
