import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landau_torus.basis import build_orbital_set
from landau_torus.core import Grid, PotentialSpec, build_config, synthesize_potential
from landau_torus.many_body import (
    DimensionBudgetError,
    TwoBodyTensor,
    build_fock_basis,
    build_hamiltonian,
    energy_asymptotics_study,
    exchange_trace,
    ground_state,
    ground_state_bytes,
    hartree_fock_energy,
    hartree_fock_pair,
    interaction_energy,
    occupation_state,
    one_body_energy,
    one_body_matrix,
    partial_trace,
    pauli_bound,
    random_orthonormal,
    read_ground_state,
    reduced_density,
    slater_state,
    two_body_tensor,
    two_body_tensor_bruteforce,
    wick_check,
    write_ground_state,
)

W_SPEC = PotentialSpec("gaussian_periodic", w0=0.5, sigma=0.1, interaction=True)
V_SPEC = PotentialSpec("cosine", v0=0.3)


@pytest.fixture(scope="module")
def small():
    # d = 3, levels 0..1: six orbitals, three particles
    cfg = build_config(1.0, 3, 1.0, 1, 3)
    grid = Grid(16, 1.0)
    orb = build_orbital_set(cfg, 1, grid, tol=1e-6)
    Vm = one_body_matrix(synthesize_potential(V_SPEC, grid), orb)
    W = two_body_tensor(synthesize_potential(W_SPEC, grid), orb)
    return cfg, orb, Vm, W


def jordan_wigner(M):
    # c_j = Z ... Z a I ... I, with the orbital index as the bit position
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    Z = np.diag([1.0, -1.0])
    I = np.eye(2)
    ops = []
    for j in range(M):
        mats = [Z] * j + [a] + [I] * (M - j - 1)
        op = np.array([[1.0]])
        for m in reversed(mats):
            op = np.kron(op, m)
        ops.append(op)
    return ops


def jw_hamiltonian(cfg, Vm, W, N):
    M = Vm.shape[0]
    c = jordan_wigner(M)
    cd = [x.T for x in c]
    h1 = np.diag(2 * cfg.hbar_b * (np.arange(M) // cfg.d + 0.5)) + Vm
    H = sum(h1[a, b] * cd[a] @ c[b] for a in range(M) for b in range(M))
    for a in range(M):
        for b in range(M):
            for cc in range(M):
                for d in range(M):
                    if W.W[a, b, cc, d] != 0:
                        H = H + W.W[a, b, cc, d] / (N - 1) * cd[a] @ cd[b] @ c[d] @ c[cc]
    # keep the N-particle sector
    occ = np.array([bin(s).count("1") for s in range(2**M)])
    sel = np.flatnonzero(occ == N)
    return H[np.ix_(sel, sel)]


def test_fock_basis_ordering():
    b = build_fock_basis(5, 2)
    assert b.dim == 10
    assert list(b.states) == sorted(sum(1 << j for j in c) for c in combinations(range(5), 2))
    assert all(b.rank(int(s)) == i for i, s in enumerate(b.states))


def test_fock_budget():
    with pytest.raises(DimensionBudgetError):
        build_fock_basis(30, 15, budget=1000)
    with pytest.raises(ValueError):
        build_fock_basis(3, 4)


def test_two_body_symmetries(small):
    _, _, _, W = small
    flags = W.symmetry_flags()
    assert flags["hermitian"] and flags["exchange"]


def test_two_body_fft_matches_bruteforce(small):
    _, orb, _, W = small
    w = synthesize_potential(W_SPEC, orb.grid)
    assert np.max(np.abs(two_body_tensor_bruteforce(w, orb).W - W.W)) < 1e-12


def test_spectrum_matches_jordan_wigner(small):
    cfg, orb, Vm, W = small
    H = build_hamiltonian(cfg, 1, Vm, W)
    ours = np.linalg.eigvalsh(H.dense())
    ref = np.linalg.eigvalsh(jw_hamiltonian(cfg, Vm, W, 3))
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_matvec_dense_sparse_agree(small):
    cfg, orb, Vm, W = small
    H = build_hamiltonian(cfg, 1, Vm, W)
    D = H.dense()
    assert np.max(np.abs(D - D.conj().T)) < 1e-14
    x = np.random.default_rng(0).normal(size=H.dim) + 0j
    assert np.max(np.abs(H.matvec(x) - D @ x)) < 1e-13
    assert np.max(np.abs(H.sparse().toarray() - D)) < 1e-14


def test_free_filling_energy():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    H = build_hamiltonian(cfg, 2, None, None)
    E, psi = ground_state(H)
    # four particles at hbar b, two at 3 hbar b
    assert E == pytest.approx(10 * cfg.hbar_b, rel=1e-14)


def test_lanczos_route_agrees_with_dense(small):
    cfg, orb, Vm, W = small
    cfg8 = build_config(1.0, 4, 1.0, 1, 6)
    grid = Grid(16, 1.0)
    orb8 = build_orbital_set(cfg8, 1, grid, tol=1e-6)
    Vm8 = one_body_matrix(synthesize_potential(V_SPEC, grid), orb8)
    W8 = two_body_tensor(synthesize_potential(W_SPEC, grid), orb8)
    H = build_hamiltonian(cfg8, 1, Vm8, W8)
    E_dense, _ = ground_state(H)
    E_lanczos, psi = ground_state(H, dense_limit=10)
    assert E_lanczos == pytest.approx(E_dense, abs=1e-10)
    assert psi.norm() == pytest.approx(1.0, abs=1e-12)


def test_energy_through_reduced_densities(small):
    cfg, orb, Vm, W = small
    H = build_hamiltonian(cfg, 1, Vm, W)
    E, psi = ground_state(H)
    g1 = reduced_density(psi, 1)
    g2 = reduced_density(psi, 2)
    per_particle = one_body_energy(g1, cfg, Vm) + interaction_energy(g2, W)
    assert per_particle == pytest.approx(E / 3, abs=1e-12)
    assert np.trace(g1).real == pytest.approx(1.0, abs=1e-13)
    assert np.max(np.abs(partial_trace(g2) - g1)) < 1e-13
    assert np.linalg.eigvalsh(g1).max() <= pauli_bound(3, 1) + 1e-12
    assert np.linalg.eigvalsh(g2.reshape(36, 36)).max() <= pauli_bound(3, 2) + 1e-12


def test_hartree_fock_is_an_upper_bound(small):
    cfg, orb, Vm, W = small
    H = build_hamiltonian(cfg, 1, Vm, W)
    E, _ = ground_state(H)
    rng = np.random.default_rng(3)
    for _ in range(5):
        U = random_orthonormal(6, 3, rng)
        psi = slater_state(H.basis, U)
        hf = hartree_fock_energy(U @ U.conj().T / 3, cfg, Vm, W, 3)
        assert H.expectation(psi) / 3 == pytest.approx(hf, abs=1e-12)
        assert hf >= E / 3 - 1e-12


def test_hartree_fock_rejects_bad_density(small):
    cfg, _, Vm, W = small
    with pytest.raises(ValueError):
        hartree_fock_energy(np.eye(6) / 3, cfg, Vm, W, 3)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4))
def test_wick_for_determinants(seed, N):
    U = random_orthonormal(6, N, np.random.default_rng(seed))
    assert wick_check(U) < 1e-13


def test_exchange_trace_identity():
    U = random_orthonormal(6, 3, np.random.default_rng(9))
    g = U @ U.conj().T / 3
    # Tr[Ex g (x) g] = Tr[g^2]
    assert abs(exchange_trace(g) - np.trace(g @ g)) < 1e-15
    assert abs(np.einsum("abab->", hartree_fock_pair(g, 3)) - 1.0) < 1e-14


def test_slater_state_requires_orthonormal():
    b = build_fock_basis(4, 2)
    with pytest.raises(ValueError):
        slater_state(b, np.ones((4, 2)))


def test_occupation_state_density():
    b = build_fock_basis(5, 2)
    g = reduced_density(occupation_state(b, [1, 3]), 1)
    assert np.allclose(np.diag(g).real, [0, 0.5, 0, 0.5, 0])


def test_ground_state_file_roundtrip(tmp_path, small):
    cfg, orb, Vm, W = small
    _, psi = ground_state(build_hamiltonian(cfg, 1, Vm, W))
    path = tmp_path / "gs.bin"
    write_ground_state(path, psi, 3, 1)
    back = read_ground_state(path, 3, 1)
    assert np.array_equal(back.coefficients, psi.coefficients)
    assert path.read_bytes() == ground_state_bytes(psi, 3, 1)
    with pytest.raises(ValueError):
        read_ground_state(path, 3, 2)


def test_energy_study_rows():
    rows = energy_asymptotics_study([(2, 3), (4, 6)], 1, V_SPEC, W_SPEC, n_max=2, grid_size=32, husimi_levels=2)
    assert [r["d"] for r in rows] == [2, 4]
    for r in rows:
        assert r["abs_gap"] == abs(r["gap"])
        assert r["gap"] == pytest.approx(r["energy_per_particle"] - r["prediction"], abs=1e-15)
        assert r["truncation_bias"] <= 1e-12
    with pytest.raises(ValueError):
        energy_asymptotics_study([(2, 3), (4, 5)], 1, V_SPEC, W_SPEC)
