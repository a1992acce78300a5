"""P1 element kernels: areas, basis gradients, stiffness and mass matrices, exact integrals."""
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, signed_areas


@lru_cache(maxsize=64)
def basis_gradients(mesh: TriMesh):
    """Areas ``(M,)`` and constant gradients ``(M, 3, 2)`` of the three nodal basis functions."""
    p = mesh.nodes[mesh.triangles]
    area = signed_areas(mesh)
    x, y = p[..., 0], p[..., 1]
    # grad(lambda_i) = (y_j - y_k, x_k - x_j) / (2|T|) with (i, j, k) cyclic
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([gx, gy], axis=-1) / (2.0 * area)[:, None, None]
    area.setflags(write=False)
    grads.setflags(write=False)
    return area, grads


def _scatter(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_nodes
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh: TriMesh, coef=None) -> sp.csr_matrix:
    """Matrix of ``int coef grad(phi_i).grad(phi_j)`` with ``coef`` constant per element."""
    if coef is None:
        return _laplacian(mesh).copy()
    return _stiffness(mesh, coef)


@lru_cache(maxsize=64)
def _laplacian(mesh: TriMesh) -> sp.csr_matrix:
    return _stiffness(mesh, None)


def _stiffness(mesh: TriMesh, coef) -> sp.csr_matrix:
    area, g = basis_gradients(mesh)
    w = area if coef is None else area * np.asarray(coef)
    local = np.einsum("t,tid,tjd->tij", w, g, g)
    return _scatter(mesh, local)


def mass_matrix(mesh: TriMesh) -> sp.csr_matrix:
    return _mass(mesh).copy()


@lru_cache(maxsize=64)
def _mass(mesh: TriMesh) -> sp.csr_matrix:
    area = signed_areas(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _scatter(mesh, area[:, None, None] * ref[None])


def lumped_mass(mesh: TriMesh) -> np.ndarray:
    area = signed_areas(mesh)
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.n_nodes)


def element_mean(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    return np.asarray(values)[mesh.triangles].mean(axis=1)


def element_gradients(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """Constant gradient ``(M, 2)`` of a P1 field on every triangle."""
    _, g = basis_gradients(mesh)
    return np.einsum("ti,tid->td", np.asarray(values)[mesh.triangles], g)


def edge_mass(mesh: TriMesh, edges: np.ndarray, weights=None) -> sp.csr_matrix:
    """Matrix of ``sum_e w_e int_e phi_i phi_j ds`` over boundary edges ``edges``."""
    n = mesh.n_nodes
    be = mesh.boundary_edges[edges]
    length = mesh.edge_lengths()[edges]
    w = length if weights is None else length * weights
    ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    local = w[:, None, None] * ref[None]
    rows = np.repeat(be, 2, axis=1).ravel()
    cols = np.tile(be, (1, 2)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def positive_part_integral(area: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Exact ``int_T max(f, 0)`` for a linear ``f`` with vertex values ``vals`` ``(M, 3)``."""
    out = np.zeros(len(area))
    f = np.sort(vals, axis=1)[:, ::-1]  # descending
    f1, f2, f3 = f[:, 0], f[:, 1], f[:, 2]
    allpos = f3 >= 0
    out[allpos] = area[allpos] * (f1 + f2 + f3)[allpos] / 3.0
    one = (f1 > 0) & (f2 <= 0)
    if one.any():
        a, b, c = f1[one], f2[one], f3[one]
        # a^3 / ((a - b)(a - c)) as a product of ratios in (0, 1]: no overflow or 0/0
        out[one] = area[one] * a * (a / (a - b)) * (a / (a - c)) / 3.0
    two = (f2 > 0) & (f3 < 0)
    if two.any():
        # f+ = f - f-, with f- handled by the single-negative-vertex formula
        a, b, c = f1[two], f2[two], f3[two]
        neg = area[two] * (-c) * (c / (c - a)) * (c / (c - b)) / 3.0
        out[two] = area[two] * (a + b + c) / 3.0 + neg
    return out


def abs_integrals(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """Exact per-element ``int_T |f|`` for a P1 field ``f``."""
    area = signed_areas(mesh)
    v = np.asarray(values, dtype=float)[mesh.triangles]
    return positive_part_integral(area, v) + positive_part_integral(area, -v)
