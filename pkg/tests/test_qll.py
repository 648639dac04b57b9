import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landau_torus.core import ConfigError, Grid, GridField, PotentialSpec, build_config, synthesize_potential
from landau_torus.qll import (
    QllProblem,
    bathtub_oracle,
    build_qll_problem,
    constant_density,
    decomposition_check,
    filled_level_constants,
    kkt_residual,
    minimize_qll,
    project_by_sorting,
    project_onto_domain,
    qll_constants,
    qll_energy,
    qll_gradient,
)

G16 = Grid(16, 1.0)


def gaussian_w(grid, w0=0.035, sigma=0.1):
    return synthesize_potential(PotentialSpec("gaussian_periodic", w0=w0, sigma=sigma, interaction=True), grid)


def cosine_v(grid, v0=0.3):
    return synthesize_potential(PotentialSpec("cosine", v0=v0), grid)


def test_constants_exact():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    mass, qr = qll_constants(cfg)
    assert (mass, qr) == (pytest.approx(1 / 3), pytest.approx(1.5))
    E, EV, Ew = filled_level_constants(cfg, GridField.constant(G16, 0.0), GridField.constant(G16, 1.0))
    assert E == pytest.approx(5 / 3, rel=1e-15)
    assert EV == 0.0
    # (q^2 + 2qr)/(q+r)^2 * int w with int w = 1
    assert Ew == pytest.approx(2 / 2.25, rel=1e-14)


def test_problem_validation():
    V = GridField.constant(G16, 0.0)
    odd = GridField(G16, np.sin(2 * np.pi * G16.mesh()[0]))
    with pytest.raises(ConfigError):
        QllProblem(V, odd, 0.3, 1.0)
    with pytest.raises(ConfigError):
        QllProblem(V, V, 2.0, 1.0)


def test_gradient_matches_finite_difference():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    prob = build_qll_problem(cfg, cosine_v(G16), gaussian_w(G16))
    rng = np.random.default_rng(0)
    rho = GridField(G16, rng.uniform(0, 0.5, (16, 16)))
    dx = rng.normal(size=(16, 16))
    eps = 1e-6
    fd = (qll_energy(GridField(G16, rho.values + eps * dx), prob) - qll_energy(GridField(G16, rho.values - eps * dx), prob)) / (2 * eps)
    an = G16.cell_area * np.sum(qll_gradient(rho, prob).values * dx)
    assert fd == pytest.approx(an, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.99))
def test_two_projections_agree(seed, frac):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(8, 8))
    h2 = 1 / 64
    cap = 1.5
    mass = frac * cap
    prob = QllProblem(GridField(Grid(8, 1.0), np.zeros((8, 8))), GridField(Grid(8, 1.0), np.zeros((8, 8))), mass, cap)
    a = project_onto_domain(GridField(Grid(8, 1.0), vals), prob).values
    b = project_by_sorting(vals, mass, cap, h2)
    assert np.max(np.abs(a - b)) < 1e-9
    assert h2 * b.sum() == pytest.approx(mass, abs=1e-12)
    assert b.min() >= 0 and b.max() <= cap


def test_linear_problem_matches_bathtub():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    rng = np.random.default_rng(2)
    V = GridField(G16, rng.normal(size=(16, 16)))
    prob = build_qll_problem(cfg, V, GridField.constant(G16, 0.0))
    sol = minimize_qll(prob, tol=1e-12)
    oracle = bathtub_oracle(V, prob.mass, prob.cap)
    assert sol.converged
    assert sol.energy == pytest.approx(qll_energy(oracle, prob), abs=1e-12)
    assert np.max(np.abs(sol.rho.values - oracle.values)) < 1e-8


def test_energy_log_monotone():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    prob = build_qll_problem(cfg, cosine_v(G16), gaussian_w(G16))
    sol = minimize_qll(prob, tol=1e-10)
    assert sol.converged
    energies = [e["energy"] for e in sol.log]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert energies[-1] == pytest.approx(sol.energy, abs=1e-12)
    assert sol.kkt_residual < 1e-6
    assert kkt_residual(sol.rho, prob) == sol.kkt_residual


def test_solution_in_domain():
    cfg = build_config(1.0, 6, 1.0, 1, 9)
    prob = build_qll_problem(cfg, cosine_v(G16), gaussian_w(G16))
    rho = minimize_qll(prob).rho.values
    assert rho.min() >= 0 and rho.max() <= prob.cap * (1 + 1e-14)
    assert G16.cell_area * rho.sum() == pytest.approx(prob.mass, abs=1e-12)


def test_uniqueness_interior():
    # constraints inactive: the minimizer is unique up to the null modes of w-hat
    # (the zeroed Nyquist row and column), whatever the start
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    w = gaussian_w(G16, w0=1.0, sigma=0.03)
    prob = build_qll_problem(cfg, cosine_v(G16, 0.1), w)
    a = minimize_qll(prob, tol=1e-12)
    start = GridField(G16, np.random.default_rng(5).uniform(0, prob.cap, (16, 16)))
    b = minimize_qll(prob, rho0=start, tol=1e-12)
    assert a.converged and b.converged
    assert 0 < a.rho.values.min() and a.rho.values.max() < prob.cap
    assert a.energy == pytest.approx(b.energy, abs=1e-12)
    w_hat = np.fft.fft2(w.values)
    diff = np.fft.fft2(a.rho.values - b.rho.values)
    diff[np.abs(w_hat) < 1e-12 * np.abs(w_hat).max()] = 0
    assert np.max(np.abs(np.fft.ifft2(diff))) < 1e-9


def test_zero_potential_keeps_constant():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    prob = build_qll_problem(cfg, GridField.constant(G16, 0.0), gaussian_w(G16))
    sol = minimize_qll(prob)
    assert np.max(np.abs(sol.rho.values - constant_density(prob).values)) <= 1e-6


def test_integer_filling_is_trivial():
    cfg = build_config(1.0, 4, 1.0, 1, 4)
    prob = build_qll_problem(cfg, cosine_v(G16), gaussian_w(G16))
    sol = minimize_qll(prob)
    assert sol.converged and sol.energy == 0.0 and not np.any(sol.rho.values)


def test_decomposition_identity():
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    V, w = cosine_v(G16), gaussian_w(G16)
    rho = minimize_qll(build_qll_problem(cfg, V, w)).rho
    assert decomposition_check(rho, cfg, V, w) < 1e-12
