import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitfem.cem_forward import (
    CemSolution,
    NodalField,
    adjacent_dipoles,
    assemble_system,
    block_residual,
    electrode_currents,
    energy_norm,
    forward_map,
    h1_norm,
    h1_seminorm,
    l1_norm,
    l2_norm,
    solve_forward,
    solve_patterns,
    w11_seminorm,
    zero_mean_basis,
)
from eitfem.errors import InadmissibleConductivityError, InvalidArgumentError, MissingElectrodeError
from eitfem.mesh import ElectrodeConfig, generate_disk_mesh, generate_square_mesh, refine, tag_electrodes

from conftest import disk_electrodes


def dense_cem(mesh, sigma, electrodes, I):
    """Independent dense assembly of the full block system, grounded by a Lagrange multiplier."""
    N, L = mesh.n_nodes, electrodes.n_electrodes
    K = np.zeros((N, N))
    for tri in mesh.triangles:
        p = mesh.nodes[tri]
        T = np.column_stack([np.ones(3), p])
        coef = np.linalg.inv(T)  # columns: coefficients of the three hat functions
        grads = coef[1:].T
        area = 0.5 * abs(np.linalg.det(T))
        K[np.ix_(tri, tri)] += sigma[tri].mean() * area * grads @ grads.T
    B = np.zeros((N, L))
    D = np.zeros(L)
    for (i, j), tag in zip(mesh.boundary_edges, mesh.electrode_of_edge):
        if tag == 0:
            continue
        z = electrodes.impedances[tag - 1]
        h = np.linalg.norm(mesh.nodes[i] - mesh.nodes[j])
        K[np.ix_([i, j], [i, j])] += h / (6 * z) * np.array([[2, 1], [1, 2]])
        B[[i, j], tag - 1] -= h / (2 * z)
        D[tag - 1] += h / z
    A = np.zeros((N + L + 1, N + L + 1))
    A[:N, :N], A[:N, N:N + L], A[N:N + L, :N] = K, B, B.T
    A[N:N + L, N:N + L] = np.diag(D)
    A[N:N + L, -1] = A[-1, N:N + L] = 1.0
    rhs = np.zeros(N + L + 1)
    rhs[N:N + L] = I
    x = np.linalg.solve(A, rhs)
    return x[:N], x[N:N + L]


def random_pattern(rng, L):
    I = rng.standard_normal(L)
    return I - I.mean()


# ---------------------------------------------------------------- types

def test_nodal_field_bounds():
    f = NodalField.conductivity([0.5, 2.0], 0.1)
    assert f.is_admissible()
    assert not NodalField.conductivity([0.05, 1.0], 0.1).is_admissible()
    with pytest.raises(InvalidArgumentError):
        NodalField([1.0, np.nan])
    with pytest.raises(InvalidArgumentError):
        NodalField.conductivity([1.0], 1.5)


def test_zero_mean_basis_orthonormal():
    for L in (2, 5, 16):
        Q = zero_mean_basis(L)
        assert np.allclose(Q.T @ Q, np.eye(L - 1), atol=1e-14)
        assert np.allclose(Q.sum(axis=0), 0, atol=1e-14)


def test_adjacent_dipoles():
    P = adjacent_dipoles(4)
    assert P.shape == (3, 4)
    assert np.array_equal(P[0], [1, -1, 0, 0])
    assert np.allclose(P.sum(axis=1), 0)


# ---------------------------------------------------------------- assembly

def test_assembly_errors(square8):
    mesh, el = square8
    with pytest.raises(InadmissibleConductivityError):
        assemble_system(mesh, NodalField.conductivity(np.full(mesh.n_nodes, 20.0), 0.1), el)
    with pytest.raises(InadmissibleConductivityError):
        assemble_system(mesh, NodalField(np.ones(mesh.n_nodes)), el)
    untagged = generate_square_mesh(8)
    with pytest.raises(MissingElectrodeError):
        assemble_system(untagged, np.ones(untagged.n_nodes), el)


def test_full_matrix_kernel(disk8):
    mesh, el = disk8
    sys_ = assemble_system(mesh, np.ones(mesh.n_nodes), el)
    A = sys_.full_matrix()
    assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-13
    assert abs(A - A.T).max() < 1e-15


def test_reduced_matrix_spd_small():
    el = ElectrodeConfig(((0, 1), (2, 3)), (0.1, 0.1))
    mesh = tag_electrodes(generate_square_mesh(2), el)
    sys_ = assemble_system(mesh, np.ones(mesh.n_nodes), el)
    ev = np.linalg.eigvalsh(sys_.reduced_matrix().toarray())
    assert ev.min() > 0


def test_impedance_doubling_halves_couplings(square8):
    mesh, el = square8
    s1 = assemble_system(mesh, np.ones(mesh.n_nodes), el)
    s2 = assemble_system(mesh, np.ones(mesh.n_nodes), el.with_impedances(2 * el.z))
    assert np.allclose(s2.B.toarray(), 0.5 * s1.B.toarray())
    assert np.allclose(s2.D, 0.5 * s1.D)
    assert np.allclose(s2.electrode_mass.toarray(), 0.5 * s1.electrode_mass.toarray())


# ---------------------------------------------------------------- solves

def test_two_triangle_dense_oracle():
    el = ElectrodeConfig(((0.0, 1.0), (2.0, 3.0)), (0.3, 0.7))
    mesh = tag_electrodes(generate_square_mesh(1), el)
    sigma = np.array([1.0, 2.0, 0.5, 3.0])
    sol = solve_forward(assemble_system(mesh, sigma, el), [1.0, -1.0])
    u, U = dense_cem(mesh, sigma, el, np.array([1.0, -1.0]))
    assert np.allclose(sol.u, u, atol=1e-12) and np.allclose(sol.U, U, atol=1e-12)


def test_zero_current_zero_solution(disk8):
    mesh, el = disk8
    sys_ = assemble_system(mesh, np.ones(mesh.n_nodes), el)
    sol = solve_forward(sys_, np.zeros(8))
    assert not np.any(sol.u) and not np.any(sol.U)
    assert not np.any(electrode_currents(sys_, sol))


def test_pattern_must_be_zero_mean(disk8):
    mesh, el = disk8
    sys_ = assemble_system(mesh, np.ones(mesh.n_nodes), el)
    with pytest.raises(InvalidArgumentError):
        solve_forward(sys_, np.eye(8)[0])


def test_current_recovery_and_grounding(disk8, rng):
    mesh, el = disk8
    sigma = rng.uniform(0.5, 2.0, mesh.n_nodes)
    sys_ = assemble_system(mesh, sigma, el)
    for _ in range(5):
        I = random_pattern(rng, 8)
        sol = solve_forward(sys_, I)
        assert abs(sol.U.sum()) <= 1e-12 * np.linalg.norm(sol.U)
        rec = electrode_currents(sys_, sol)
        assert np.linalg.norm(rec - I) <= 1e-9 * np.linalg.norm(I)
        assert block_residual(sys_, sol.u, sol.U, I) <= 1e-10


def test_antipodal_symmetry():
    el = ElectrodeConfig(((-math.pi / 4, math.pi / 4), (3 * math.pi / 4, 5 * math.pi / 4)), (0.1, 0.1))
    mesh = tag_electrodes(refine(generate_disk_mesh(16), 1), el)
    sol = solve_forward(assemble_system(mesh, np.ones(mesh.n_nodes), el), [1.0, -1.0])
    assert sol.U[0] == pytest.approx(-sol.U[1], abs=1e-9)
    # half-turn: node x pairs with node -x
    key = {tuple(np.round(p, 10)): i for i, p in enumerate(mesh.nodes)}
    partner = np.array([key[tuple(np.round(-p, 10) + 0.0)] for p in mesh.nodes])
    assert np.allclose(sol.u, -sol.u[partner], atol=1e-9)


def test_forward_map_linear_and_single_pattern(disk8, rng):
    mesh, el = disk8
    sigma = rng.uniform(0.5, 2.0, mesh.n_nodes)
    I1, I2 = random_pattern(rng, 8), random_pattern(rng, 8)
    U = forward_map(mesh, sigma, el, [I1 + I2, I1, I2])
    assert np.allclose(U[:, 0], U[:, 1] + U[:, 2], atol=1e-9)
    single = solve_forward(assemble_system(mesh, sigma, el), I1).U
    assert np.allclose(U[:, 1], single, atol=1e-13)


def test_permuting_electrodes_permutes_rows(rng):
    el = disk_electrodes(8, 16)
    mesh = generate_disk_mesh(32)
    order = [3, 0, 7, 1, 6, 2, 5, 4]
    sigma = rng.uniform(0.5, 2.0, mesh.n_nodes)
    P = adjacent_dipoles(8)
    U = forward_map(tag_electrodes(mesh, el), sigma, el, P)
    elp = el.permuted(order)
    Up = forward_map(tag_electrodes(mesh, elp), sigma, elp, P[:, order])
    assert np.allclose(Up, U[order], atol=1e-12)


def test_reciprocity(disk8, rng):
    mesh, el = disk8
    sigma = rng.uniform(0.5, 2.0, mesh.n_nodes)
    P = adjacent_dipoles(8)
    R = P @ forward_map(mesh, sigma, el, P)
    assert np.abs(R - R.T).max() <= 1e-9 * np.abs(R).max()


def test_joint_scaling(disk8, rng):
    mesh, el = disk8
    sigma = rng.uniform(0.5, 2.0, mesh.n_nodes)
    I = random_pattern(rng, 8)
    a = solve_forward(assemble_system(mesh, sigma, el), I)
    sys2 = assemble_system(mesh, 2 * sigma, el.with_impedances(el.z / 2))
    b = solve_forward(sys2, I)
    assert np.allclose(b.u, a.u / 2, atol=1e-10 * np.abs(a.u).max())
    assert np.allclose(b.U, a.U / 2, atol=1e-10 * np.abs(a.U).max())
    assert np.allclose(electrode_currents(sys2, b), I, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_dense_oracle_property(seed):
    rng = np.random.default_rng(seed)
    el = ElectrodeConfig(((0.0, 0.5), (1.0, 1.5), (2.0, 2.5), (3.0, 3.5)),
                         tuple(rng.uniform(0.05, 1.0, 4)))
    mesh = tag_electrodes(generate_square_mesh(4), el)
    sigma = rng.uniform(0.1, 10.0, mesh.n_nodes)
    I = random_pattern(rng, 4)
    sol = solve_forward(assemble_system(mesh, NodalField.conductivity(sigma, 0.1), el), I)
    u, U = dense_cem(mesh, sigma, el, I)
    scale = np.linalg.norm(np.concatenate([u, U]))
    assert np.linalg.norm(np.concatenate([sol.u - u, sol.U - U])) <= 1e-10 * scale


# ---------------------------------------------------------------- norms

def test_norm_closed_forms():
    m = generate_square_mesh(4)
    one = np.ones(m.n_nodes)
    x = m.nodes[:, 0]
    assert h1_norm(m, one) ** 2 == pytest.approx(1.0)
    assert h1_norm(m, x) ** 2 == pytest.approx(4 / 3)
    assert l2_norm(m, x) ** 2 == pytest.approx(1 / 3)
    assert h1_seminorm(m, x) == pytest.approx(1.0)
    assert w11_seminorm(m, x) == pytest.approx(1.0)
    assert l1_norm(m, x - 0.5) == pytest.approx(0.25)


def test_h1_norm_matches_dense_gram(rng):
    m = generate_square_mesh(3)
    f = rng.standard_normal(m.n_nodes)
    G = np.zeros((m.n_nodes, m.n_nodes))
    for tri in m.triangles:
        T = np.column_stack([np.ones(3), m.nodes[tri]])
        g = np.linalg.inv(T)[1:].T
        area = 0.5 * abs(np.linalg.det(T))
        G[np.ix_(tri, tri)] += area * (g @ g.T + (np.ones((3, 3)) + np.eye(3)) / 12)
    assert h1_norm(m, f) ** 2 == pytest.approx(f @ G @ f, rel=1e-12)


def test_energy_norm_cases(disk8, rng):
    mesh, el = disk8
    assert energy_norm(mesh, el, np.full(mesh.n_nodes, 2.5), np.full(8, 2.5)) == pytest.approx(0, abs=1e-12)
    U = rng.standard_normal(8)
    expected = math.sqrt(np.sum(U**2 * mesh.electrode_lengths(8)))
    assert energy_norm(mesh, el, np.zeros(mesh.n_nodes), U) == pytest.approx(expected)


def test_energy_norm_equivalence_stable(rng):
    from eitfem.cem_forward import product_norm

    el = disk_electrodes(8, 16)
    ratios = []
    base = tag_electrodes(generate_disk_mesh(16), el)
    for k in range(3):
        m = refine(base, k)
        sol = solve_forward(assemble_system(m, np.ones(m.n_nodes), el), adjacent_dipoles(8)[0])
        ratios.append(energy_norm(m, el, sol.u, sol.U) / product_norm(m, sol.u, sol.U))
    assert max(ratios) / min(ratios) < 1.5


def test_solution_dataclass():
    s = CemSolution(np.zeros(3), np.zeros(2))
    assert s.u.shape == (3,) and s.U.shape == (2,)


def test_solve_patterns_shapes(disk8):
    mesh, el = disk8
    u, U = solve_patterns(assemble_system(mesh, np.ones(mesh.n_nodes), el), adjacent_dipoles(8))
    assert u.shape == (mesh.n_nodes, 7) and U.shape == (8, 7)
