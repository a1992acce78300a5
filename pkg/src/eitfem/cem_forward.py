"""P1 discretization of the complete electrode model and associated norms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import (
    InadmissibleConductivityError,
    InvalidArgumentError,
    LinearSolverError,
    MissingElectrodeError,
)
from .mesh import ElectrodeConfig, TriMesh

DIRECT_SOLVER_LIMIT = 20_000
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NodalField:
    """P1 coefficient vector with optional admissibility bounds ``(lam, 1/lam)``."""

    values: np.ndarray
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("nodal field has non-finite values")

    @classmethod
    def conductivity(cls, values, lam: float) -> "NodalField":
        if not 0 < lam < 1:
            raise InvalidArgumentError("lambda must lie in (0, 1)")
        return cls(values, (lam, 1.0 / lam))

    def is_admissible(self) -> bool:
        if self.bounds is None:
            return True
        lo, hi = self.bounds
        return bool(np.all(self.values >= lo) and np.all(self.values <= hi))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def values_of(f) -> np.ndarray:
    return f.values if isinstance(f, NodalField) else np.asarray(f, dtype=float)


def adjacent_dipoles(n_electrodes: int, n_patterns: int | None = None) -> np.ndarray:
    """Patterns ``I = e_l - e_{l+1}`` as rows of a ``(P, L)`` array."""
    P = n_electrodes - 1 if n_patterns is None else n_patterns
    out = np.zeros((P, n_electrodes))
    for p in range(P):
        out[p, p % n_electrodes] = 1.0
        out[p, (p + 1) % n_electrodes] = -1.0
    return out


def check_pattern(I, n_electrodes: int) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    if I.shape != (n_electrodes,):
        raise InvalidArgumentError(f"current pattern must have {n_electrodes} entries")
    if abs(I.sum()) > 1e-14 * max(np.linalg.norm(I), 1.0):
        raise InvalidArgumentError("current pattern must sum to zero")
    return I


def zero_mean_basis(L: int) -> np.ndarray:
    """Orthonormal ``(L, L-1)`` basis of the zero-sum subspace (Helmert columns)."""
    Q = np.zeros((L, L - 1))
    for k in range(1, L):
        Q[:k, k - 1] = 1.0
        Q[k, k - 1] = -k
        Q[:, k - 1] /= math.sqrt(k * (k + 1))
    return Q


@dataclass(frozen=True)
class CemSolution:
    u: np.ndarray
    U: np.ndarray


@dataclass(eq=False)
class CemSystem:
    """Assembled CEM blocks for one conductivity.

    The full system is ``[[K, B], [B^T, D]] (u, U) = (0, I)`` with
    ``K = stiffness + electrode_mass``. Solves go through the reduced SPD
    system in which ``U = Q V`` for the orthonormal zero-mean basis ``Q``.
    """

    mesh: TriMesh
    electrodes: ElectrodeConfig
    sigma: np.ndarray
    stiffness: sp.csr_matrix
    electrode_mass: sp.csr_matrix
    B: sp.csr_matrix
    D: np.ndarray
    zero_mean_basis: np.ndarray
    _solve: object = field(default=None, repr=False)
    _reduced: sp.csc_matrix | None = field(default=None, repr=False)

    @property
    def K(self) -> sp.csr_matrix:
        return (self.stiffness + self.electrode_mass).tocsr()

    @property
    def n_electrodes(self) -> int:
        return len(self.D)

    def full_matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.K, self.B], [self.B.T, sp.diags(self.D)]]).tocsr()

    def reduced_matrix(self) -> sp.csc_matrix:
        if self._reduced is None:
            Q = self.zero_mean_basis
            BQ = sp.csr_matrix(self.B @ Q)
            DQ = Q.T @ (self.D[:, None] * Q)
            self._reduced = sp.bmat([[self.K, BQ], [BQ.T, sp.csr_matrix(DQ)]]).tocsc()
        return self._reduced


def assemble_system(mesh: TriMesh, sigma, electrodes: ElectrodeConfig) -> CemSystem:
    """Assemble the CEM blocks on ``mesh`` for the P1 conductivity ``sigma``."""
    s = values_of(sigma)
    if s.shape != (mesh.n_nodes,):
        raise InvalidArgumentError("conductivity must have one value per mesh node")
    if isinstance(sigma, NodalField):
        if sigma.bounds is None:
            raise InadmissibleConductivityError("conductivity needs admissibility bounds")
        if not sigma.is_admissible():
            raise InadmissibleConductivityError(
                f"conductivity leaves [{sigma.bounds[0]:g}, {sigma.bounds[1]:g}]")
    elif np.any(s <= 0):
        raise InadmissibleConductivityError("conductivity must be positive")
    L = electrodes.n_electrodes
    tags = mesh.electrode_of_edge
    for l in range(1, L + 1):
        if not np.any(tags == l):
            raise MissingElectrodeError(f"electrode {l} is not tagged on the mesh")
    if tags.max(initial=0) > L:
        raise MissingElectrodeError("mesh carries more electrode tags than the configuration")

    z = electrodes.z
    tagged = np.flatnonzero(tags > 0)
    inv_z = 1.0 / z[tags[tagged] - 1]
    stiff = fem.stiffness_matrix(mesh, fem.element_mean(mesh, s))
    emass = fem.edge_mass(mesh, tagged, inv_z)

    length = mesh.edge_lengths()[tagged]
    be = mesh.boundary_edges[tagged]
    rows = be.ravel()
    cols = np.repeat(tags[tagged] - 1, 2)
    vals = np.repeat(-0.5 * length * inv_z, 2)
    B = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, L))
    D = mesh.electrode_lengths(L) / z
    return CemSystem(mesh, electrodes, s.copy(), stiff, emass, B, D, zero_mean_basis(L))


def _factorize(system: CemSystem):
    if system._solve is not None:
        return system._solve
    A = system.reduced_matrix()
    if A.shape[0] <= DIRECT_SOLVER_LIMIT:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        system._solve = lu.solve
    else:
        diag = A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda x: x / diag)

        def solve(rhs):
            rhs2 = np.atleast_2d(rhs.T).T
            out = np.empty_like(rhs2)
            for k in range(rhs2.shape[1]):
                x, info = spla.cg(A, rhs2[:, k], rtol=1e-12, atol=0.0, maxiter=10 * A.shape[0], M=M)
                if info != 0:
                    res = np.linalg.norm(A @ x - rhs2[:, k]) / max(np.linalg.norm(rhs2[:, k]), 1e-300)
                    raise LinearSolverError(f"conjugate gradients stagnated (relative residual {res:.2e})", res)
                out[:, k] = x
            return out.reshape(rhs.shape)

        system._solve = solve
    return system._solve


def _solve_reduced(system: CemSystem, rhs_currents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve for each column of ``rhs_currents`` ``(L, P)``; return ``u (N, P)`` and ``U (L, P)``."""
    N = system.mesh.n_nodes
    Q = system.zero_mean_basis
    rhs = np.zeros((N + Q.shape[1], rhs_currents.shape[1]))
    rhs[N:] = Q.T @ rhs_currents
    x = _factorize(system)(rhs)
    x = x.reshape(rhs.shape)
    return x[:N], Q @ x[N:]


def block_residual(system: CemSystem, u: np.ndarray, U: np.ndarray, I: np.ndarray) -> float:
    """Relative residual of the full block system for one pattern."""
    r1 = system.K @ u + system.B @ U
    r2 = system.B.T @ u + system.D * U - I
    scale = abs(system.K).max() * np.linalg.norm(u) + np.abs(system.D).max() * np.linalg.norm(U) \
        + np.linalg.norm(I)
    if scale == 0:
        return 0.0
    return float(np.sqrt(r1 @ r1 + r2 @ r2) / scale)


def solve_patterns(system: CemSystem, patterns) -> tuple[np.ndarray, np.ndarray]:
    """Solve for several patterns ``(P, L)``; return potentials ``(N, P)`` and voltages ``(L, P)``."""
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    for I in patterns:
        check_pattern(I, system.n_electrodes)
    u, U = _solve_reduced(system, patterns.T)
    for p, I in enumerate(patterns):
        res = block_residual(system, u[:, p], U[:, p], I)
        if not res <= RESIDUAL_TOL:
            raise LinearSolverError(f"block residual {res:.2e} exceeds {RESIDUAL_TOL:g}", res)
    return u, U


def solve_forward(system: CemSystem, pattern) -> CemSolution:
    u, U = solve_patterns(system, np.asarray(pattern, dtype=float)[None, :])
    return CemSolution(u[:, 0], U[:, 0])


def electrode_currents(system: CemSystem, solution: CemSolution) -> np.ndarray:
    """``z_l^{-1} int_{e_l} (U_l - u) ds`` for every electrode."""
    return system.B.T @ solution.u + system.D * solution.U


def forward_map(mesh: TriMesh, sigma, electrodes: ElectrodeConfig, patterns) -> np.ndarray:
    """Electrode voltages ``(L, P)``, one column per current pattern, from a single assembly."""
    system = assemble_system(mesh, sigma, electrodes)
    return solve_patterns(system, patterns)[1]


# ---------------------------------------------------------------- norms

def l2_norm(mesh: TriMesh, f) -> float:
    v = values_of(f)
    return float(math.sqrt(max(v @ (fem.mass_matrix(mesh) @ v), 0.0)))


def _grad_sq(mesh: TriMesh, v: np.ndarray) -> float:
    # sum of squares of element gradients: no cancellation for near-constant fields
    area = fem.signed_areas(mesh)
    return float(np.sum(area * np.sum(fem.element_gradients(mesh, v) ** 2, axis=1)))


def h1_seminorm(mesh: TriMesh, f) -> float:
    return math.sqrt(_grad_sq(mesh, values_of(f)))


def h1_norm(mesh: TriMesh, f) -> float:
    return math.hypot(l2_norm(mesh, f), h1_seminorm(mesh, f))


def l1_norm(mesh: TriMesh, f) -> float:
    return float(fem.abs_integrals(mesh, values_of(f)).sum())


def w11_seminorm(mesh: TriMesh, f) -> float:
    area = fem.signed_areas(mesh)
    g = fem.element_gradients(mesh, values_of(f))
    return float((area * np.linalg.norm(g, axis=1)).sum())


def w11_norm(mesh: TriMesh, f) -> float:
    return l1_norm(mesh, f) + w11_seminorm(mesh, f)


def energy_norm(mesh: TriMesh, electrodes: ElectrodeConfig, u, U) -> float:
    """``(|grad u|^2_{L2} + sum_l |u - U_l|^2_{L2(e_l)})^{1/2}`` evaluated exactly for P1 ``u``."""
    u = values_of(u)
    U = np.asarray(U, dtype=float)
    grad2 = _grad_sq(mesh, u)
    tags = mesh.electrode_of_edge
    total = 0.0
    for l in range(1, electrodes.n_electrodes + 1):
        edges = np.flatnonzero(tags == l)
        w = u - U[l - 1]
        total += w @ (fem.edge_mass(mesh, edges) @ w)
    return float(math.sqrt(max(grad2 + total, 0.0)))


def product_norm(mesh: TriMesh, u, U) -> float:
    """``(|u|^2_{H1} + |U|^2)^{1/2}``."""
    return math.hypot(h1_norm(mesh, u), float(np.linalg.norm(U)))
