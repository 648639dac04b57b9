import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import eval_hermite, gamma

from landau_torus.basis import (
    TruncationError,
    apply_ladder,
    apply_momentum,
    build_orbital_set,
    c_direct,
    c_poisson,
    eigenfunction,
    hermite,
    kinetic_expectation,
    lll_theta_form,
    magnetic_translate,
    poisson_policy,
    theta,
    x_period_residual,
)
from landau_torus.core import ConfigError, Grid, build_config


def scipy_orbital(n, l, x, y, cfg, K=12):
    # plain Landau-gauge sum written against scipy's Hermite polynomials
    L, d, lb = cfg.L, cfg.d, cfg.l_b
    total = 0j
    for k in range(-K, K + 1):
        u = (y + k * L + l * L / d) / lb
        total += eval_hermite(n, u) * math.exp(-u * u / 2) * np.exp(2j * math.pi * (l + k * d) * x / L)
    return (-1j / math.sqrt(2)) ** n / (math.pi**0.25 * math.sqrt(math.factorial(n))) / math.sqrt(L * lb) * total


def test_theta_closed_form():
    assert abs(theta(0.0, 1j) - math.pi**0.25 / gamma(0.75)) < 1e-15


def test_normalizations_closed_form():
    assert abs(c_direct(0) - math.pi**-0.25) < 1e-16
    assert abs(c_poisson(0) - math.sqrt(2) * math.pi**0.25) < 1e-15
    frozen_d = [0.7511255444649425, -0.5311259660135984j, -0.26556298300679915, 0.10841563382300967j]
    frozen_p = [1.8827925275534299, 1.3313353638003897, 0.6656676819001949, 0.27175769315279713]
    for n in range(4):
        assert abs(c_direct(n) - frozen_d[n]) < 1e-15
        assert abs(c_poisson(n) - frozen_p[n]) < 1e-15


def test_hermite_against_scipy():
    x = np.linspace(-4, 4, 33)
    for n in range(8):
        assert np.allclose(hermite(n, x), eval_hermite(n, x), rtol=1e-13, atol=1e-10)


def test_frozen_orbital_values(cfg4):
    v = eigenfunction((0, 1), np.array([[0.3, 0.7]]), cfg4)[0]
    assert abs(v - (1.3185140933083248 + 0.9579781368685528j)) < 1e-12
    v = eigenfunction((2, 3), np.array([[0.11, 0.52]]), cfg4)[0]
    assert abs(v - (-0.9407156227005182 + 0.7963226113076204j)) < 1e-12


@pytest.mark.parametrize("n,l", [(0, 0), (1, 2), (3, 1), (5, 3)])
def test_orbital_matches_scipy_sum(cfg4, n, l):
    for x, y in [(0.1, 0.2), (0.77, 0.93), (0.5, 0.05)]:
        assert abs(eigenfunction((n, l), x + 1j * y, cfg4) - scipy_orbital(n, l, x, y, cfg4)) < 1e-11


@pytest.mark.parametrize("n,l", [(0, 0), (2, 1), (4, 3)])
def test_direct_and_poisson_agree(cfg4, n, l):
    z = np.array([0.13 + 0.41j, 0.88 + 0.02j, 0.5 + 0.99j])
    a = eigenfunction((n, l), z, cfg4, method="direct", tol=1e-14)
    b = eigenfunction((n, l), z, cfg4, method="poisson", tol=1e-14)
    assert np.max(np.abs(a - b)) < 1e-12


def test_lowest_level_theta_form(cfg4):
    z = np.array([0.2 + 0.3j, 0.71 + 0.66j])
    for l in range(4):
        assert np.max(np.abs(lll_theta_form(l, z, cfg4) - eigenfunction((0, l), z, cfg4))) < 1e-12


def test_orbital_set_validation(orbitals4):
    rep = orbitals4.report
    assert rep["gram_deviation"] < 1e-8
    assert rep["boundary_residual"] < 1e-10
    assert rep["ladder_residual"] < 1e-8
    assert rep["orbitals_per_level"] == 4


def test_truncated_set(orbitals4):
    t = orbitals4.truncated(1)
    assert t.size == 8
    assert np.array_equal(t.samples, orbitals4.samples[:8])
    with pytest.raises(ValueError):
        orbitals4.truncated(4)


def test_ladder_relations(cfg4):
    z = np.array([0.3 + 0.4j, 0.9 + 0.1j])
    # a a^dagger psi_n = (n + 1) psi_n
    aad = apply_ladder((2, 1), z, cfg4, ["lower", "raise"])
    assert np.max(np.abs(aad - 3 * eigenfunction((2, 1), z, cfg4))) < 1e-11
    low = apply_ladder((3, 0), z, cfg4, "lower")
    assert np.max(np.abs(low - math.sqrt(3) * eigenfunction((2, 0), z, cfg4))) < 1e-11


def test_kinetic_levels(orbitals4):
    cfg = orbitals4.config
    for n in range(3):
        assert kinetic_expectation(orbitals4, n, 1) == pytest.approx(2 * cfg.hbar_b * (n + 0.5), rel=1e-8)


def test_momentum_has_two_components(cfg4):
    out = apply_momentum((1, 0), np.array([0.2 + 0.2j]), cfg4)
    assert out.shape == (2, 1)


def test_x_period_modulus(cfg4):
    z = np.array([0.1 + 0.3j, 0.45 + 0.8j])
    assert x_period_residual(1, 2, cfg4, z) < 1e-12


def test_magnetic_translation_grid_shift(orbitals4):
    cfg = orbitals4.config
    f = orbitals4.orbital(1, 2)
    h = orbitals4.grid.spacing
    g = magnetic_translate(f, 3 * h + 5j * h, cfg)
    # translations preserve the norm exactly
    assert np.sum(np.abs(g.values) ** 2) == pytest.approx(np.sum(np.abs(f.values) ** 2), rel=1e-13)
    # and the L/d translation in y maps orbital l to orbital l - 1 up to phase
    s = magnetic_translate(f, 1j * cfg.L / cfg.d, cfg)
    other = orbitals4.orbital(1, 1).values
    overlap = abs(np.vdot(other, s.values)) * orbitals4.grid.cell_area
    assert overlap == pytest.approx(1.0, abs=1e-8)


def test_truncation_budget_enforced():
    cfg = build_config(1.0, 400, 1.0, 0, 1)
    with pytest.raises(TruncationError):
        poisson_policy(0, cfg, tol=1e-14, K_max=5)
    assert poisson_policy(0, cfg, tol=1e-14).tail_bound <= 1e-14


def test_invalid_index(cfg4):
    with pytest.raises((ConfigError, ValueError)):
        eigenfunction((0, 4), 0.1j, cfg4)


def test_grid_must_match_torus():
    cfg = build_config(1.0, 2, 1.0, 0, 1)
    with pytest.raises(ConfigError):
        build_orbital_set(cfg, 1, Grid(16, 2.0))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 3), st.integers(0, 3))
def test_magnetic_periodicity_property(x, y, n, l):
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    z = complex(x, y)
    assert abs(eigenfunction((n, l), z + 1, cfg) - eigenfunction((n, l), z, cfg)) < 1e-10
    shifted = eigenfunction((n, l), z + 1j, cfg)
    assert abs(shifted - np.exp(-1j * x / cfg.l_b_sq) * eigenfunction((n, l), z, cfg)) < 1e-10
