"""Acceptance criteria at their stated tolerances; one summary line each."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE
from landau_torus.basis import apply_ladder, build_orbital_set, eigenfunction
from landau_torus.core import Grid, GridField, PotentialSpec, build_config, synthesize_potential
from landau_torus.husimi import (
    DensityMatrix,
    lower_symbol,
    mass_correct,
    pauli_cap,
    pauli_ceiling_excess,
    spatial_relation,
)
from landau_torus.many_body import (
    build_hamiltonian,
    energy_asymptotics_study,
    exchange_trace,
    ground_state,
    hartree_fock_energy,
    interaction_energy,
    one_body_energy,
    one_body_matrix,
    partial_trace,
    random_orthonormal,
    reduced_density,
    slater_state,
    two_body_tensor,
    wick_check,
)
from landau_torus.projectors import build_localizer, kernel_convergence_study, loglog_slope
from landau_torus.qll import (
    bathtub_oracle,
    build_qll_problem,
    constant_density,
    decomposition_check,
    minimize_qll,
    project_onto_domain,
    qll_energy,
    qll_gradient,
)

V_SPEC = PotentialSpec("cosine", v0=0.3)
W_SPEC = PotentialSpec("gaussian_periodic", w0=0.035, sigma=0.1, interaction=True)


def record(k, checks, elapsed, limit):
    """``checks`` maps a label to ``(passed, value)``."""
    checks = dict(checks)
    checks["runtime_s"] = (elapsed < limit, round(elapsed, 1))
    ok = all(p for p, _ in checks.values())
    failed = [name for name, (p, _) in checks.items() if not p]
    detail = ", ".join(f"{name}={v:.3g}" if isinstance(v, float) else f"{name}={v}" for name, (_, v) in checks.items())
    if failed:
        detail += "  [failed: " + ", ".join(failed) + "]"
    ACCEPTANCE[k] = (ok, detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_basis_validity():
    t0 = time.perf_counter()
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    orb = build_orbital_set(cfg, 3, Grid(256, 1.0), tol=1e-8, series_tol=1e-14, edge_samples=64)
    rep = orb.report
    record(1, {
        "series_tail": (rep["series_tail"] < 1e-14, rep["series_tail"]),
        "gram": (rep["gram_deviation"] <= 1e-8, rep["gram_deviation"]),
        "boundary": (rep["boundary_residual"] <= 1e-10, rep["boundary_residual"]),
    }, time.perf_counter() - t0, 30)


def test_criterion_02_dual_series():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for d in (2, 4, 8):
        cfg = build_config(1.0, d, 1.0, 0, 1)
        pts = rng.uniform(0, 1, size=(1000, 2))
        for n in range(4):
            for l in range(d):
                a = eigenfunction((n, l), pts, cfg, method="direct", tol=1e-14)
                b = eigenfunction((n, l), pts, cfg, method="poisson", tol=1e-14)
                worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(a))))
    record(2, {"relative_gap": (worst <= 1e-10, worst)}, time.perf_counter() - t0, 30)


def test_criterion_03_ladder():
    t0 = time.perf_counter()
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    pts = Grid(64, 1.0).points()
    raise_res = lower0 = comm = 0.0
    for l in range(cfg.d):
        lower0 = max(lower0, float(np.max(np.abs(apply_ladder((0, l), pts, cfg, "lower")))))
        for n in range(3):
            psi = eigenfunction((n, l), pts, cfg)
            up = apply_ladder((n, l), pts, cfg, "raise")
            raise_res = max(raise_res, float(np.max(np.abs(up - math.sqrt(n + 1) * eigenfunction((n + 1, l), pts, cfg)))))
            c = apply_ladder((n, l), pts, cfg, ["lower", "raise"]) - apply_ladder((n, l), pts, cfg, ["raise", "lower"])
            comm = max(comm, float(np.max(np.abs(c - psi))))
    record(3, {
        "raise": (raise_res <= 1e-8, raise_res),
        "lower_on_lowest": (lower0 <= 1e-8, lower0),
        "commutator": (comm <= 1e-8, comm),
    }, time.perf_counter() - t0, 10)


def test_criterion_04_projector_convergence():
    t0 = time.perf_counter()
    rows = kernel_convergence_study([0, 1], [8, 16, 32, 64], grid_size=256)
    lll = [r for r in rows if r["n"] == 0]
    dev = np.array([r["diagonal_deviation"] for r in lll])
    lb = np.array([r["l_b"] for r in lll])
    slope = loglog_slope(lb, dev)
    loc_err = np.array([r["localized_trace_error"] for r in lll])
    trace = max(abs(r["trace"] - r["d"]) / r["d"] for r in rows)
    record(4, {
        "deviation_strictly_decreasing": (bool(np.all(np.diff(dev) < 0)), float(dev[-1])),
        "loglog_slope": (0.5 <= slope <= 1.5, slope),
        "trace": (trace <= 1e-8, trace),
        "localized_trace_error_decreasing": (bool(np.all(np.diff(loc_err) < 0)), float(loc_err[-1])),
    }, time.perf_counter() - t0, 120)


def test_criterion_05_qll_solver():
    t0 = time.perf_counter()
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    g128, g64 = Grid(128, 1.0), Grid(64, 1.0)
    zero128 = GridField.constant(g128, 0.0)
    prob_a = build_qll_problem(cfg, zero128, synthesize_potential(W_SPEC, g128))
    sol_a = minimize_qll(prob_a)
    dev = float(np.max(np.abs(sol_a.rho.values - constant_density(prob_a).values)))

    V = synthesize_potential(V_SPEC, g64)
    prob_b = build_qll_problem(cfg, V, GridField.constant(g64, 0.0))
    sol_b = minimize_qll(prob_b)
    bath = abs(sol_b.energy - qll_energy(bathtub_oracle(V, prob_b.mass, prob_b.cap), prob_b))

    prob_c = build_qll_problem(cfg, V, synthesize_potential(W_SPEC, g64))
    sol_c = minimize_qll(prob_c)

    rng = np.random.default_rng(5)
    rho = GridField(g64, rng.uniform(0, prob_c.cap, (64, 64)))
    dx = rng.normal(size=(64, 64))
    eps = 1e-5
    fd = (qll_energy(GridField(g64, rho.values + eps * dx), prob_c) - qll_energy(GridField(g64, rho.values - eps * dx), prob_c)) / (2 * eps)
    an = g64.cell_area * float(np.sum(qll_gradient(rho, prob_c).values * dx))
    grad = abs(fd - an) / abs(an)
    record(5, {
        "uniform_minimizer": (sol_a.converged and dev <= 1e-6, dev),
        "bathtub_gap": (sol_b.converged and bath <= 1e-8, bath),
        "kkt": (sol_c.converged and sol_c.kkt_residual <= 1e-8, sol_c.kkt_residual),
        "gradient_fd": (grad <= 1e-6, grad),
    }, time.perf_counter() - t0, 60)


def test_criterion_06_decomposition():
    t0 = time.perf_counter()
    grid = Grid(64, 1.0)
    V = synthesize_potential(V_SPEC, grid)
    w = synthesize_potential(W_SPEC, grid)
    rng = np.random.default_rng(6)
    worst = 0.0
    for d, N in ((4, 6), (3, 7)):  # (q, r) = (1, 1/2), (2, 1/3)
        cfg = build_config(1.0, d, 1.0, N // d, N)
        prob = build_qll_problem(cfg, V, w)
        for _ in range(20):
            rho = project_onto_domain(GridField(grid, rng.uniform(-1, 2, (64, 64)) * prob.cap), prob)
            worst = max(worst, decomposition_check(rho, cfg, V, w))
    record(6, {"relative_residual": (worst <= 1e-10, worst)}, time.perf_counter() - t0, 10)


def test_criterion_07_filling():
    t0 = time.perf_counter()
    cases = {}
    cfg = build_config(1.0, 4, 1.0, 0, 3)
    E, _ = ground_state(build_hamiltonian(cfg, 1, None, None))
    cases["d4_N3"] = abs(E - 3 * cfg.hbar_b) / (3 * cfg.hbar_b)
    cfg = build_config(1.0, 4, 1.0, 1, 6)
    for n_max in (1, 2):
        E, _ = ground_state(build_hamiltonian(cfg, n_max, None, None))
        cases[f"d4_N6_nmax{n_max}"] = abs(E - 10 * cfg.hbar_b) / (10 * cfg.hbar_b)
        q, r = cfg.q, cfg.r_exact
        assert (q * q + 2 * q * r + r) / (q + r) == Fraction(5, 3)
        cases[f"per_particle_nmax{n_max}"] = abs(E / 6 - Fraction(5, 3) * cfg.hbar_b) / cfg.hbar_b
    record(7, {k: (v <= 1e-9, v) for k, v in cases.items()}, time.perf_counter() - t0, 10)


def _small_problem(d, N, n_max, grid_size=64):
    cfg = build_config(1.0, d, 1.0, N // d, N)
    grid = Grid(grid_size, 1.0)
    orb = build_orbital_set(cfg, n_max, grid)
    Vm = one_body_matrix(synthesize_potential(V_SPEC, grid), orb)
    W = two_body_tensor(synthesize_potential(W_SPEC, grid), orb)
    return cfg, orb, Vm, W


def test_criterion_08_wick_hartree_fock():
    t0 = time.perf_counter()
    cfg, orb, Vm, W = _small_problem(3, 3, 1)
    H = build_hamiltonian(cfg, 1, Vm, W)
    E0, _ = ground_state(H)
    rng = np.random.default_rng(8)
    wick = hf_gap = ex_gap = 0.0
    bound_ok = True
    for _ in range(10):
        U = random_orthonormal(orb.size, 3, rng)
        wick = max(wick, wick_check(U))
        gamma = U @ U.conj().T / 3
        hf = hartree_fock_energy(gamma, cfg, Vm, W, 3)
        direct = H.expectation(slater_state(H.basis, U)) / 3
        hf_gap = max(hf_gap, abs(hf - direct) / max(1.0, abs(direct)))
        ex_gap = max(ex_gap, abs(exchange_trace(gamma) - np.trace(gamma @ gamma)))
        bound_ok &= E0 <= 3 * hf + 1e-10 * max(1.0, abs(E0))
    record(8, {
        "wick": (wick <= 1e-12, wick),
        "hf_vs_slater": (hf_gap <= 1e-10, hf_gap),
        "exchange_trace": (ex_gap <= 1e-12, ex_gap),
        "variational_bound": (bool(bound_ok), bool(bound_ok)),
    }, time.perf_counter() - t0, 30)


def test_criterion_09_reduced_densities():
    t0 = time.perf_counter()
    cfg, orb, Vm, W = _small_problem(4, 6, 2)
    E, psi = ground_state(build_hamiltonian(cfg, 2, Vm, W))
    N = cfg.N
    g1 = reduced_density(psi, 1)
    g2 = reduced_density(psi, 2)
    ev = np.linalg.eigvalsh(g1)
    trace = abs(np.trace(g1).real - 1.0)
    pauli = max(-ev.min(), ev.max() - 1.0 / N)
    ptrace = float(np.max(np.abs(partial_trace(g2) - g1)))
    energy = abs(E / N - one_body_energy(g1, cfg, Vm) - interaction_energy(g2, W)) / max(1.0, abs(E / N))
    record(9, {
        "trace": (trace <= 1e-10, trace),
        "eigenvalue_bounds": (pauli <= 1e-10, pauli),
        "partial_trace": (ptrace <= 1e-10, ptrace),
        "energy_identity": (energy <= 1e-10, energy),
    }, time.perf_counter() - t0, 30)


def test_criterion_10_husimi():
    t0 = time.perf_counter()
    grid = Grid(64, 1.0)
    loc = build_localizer(1.0, grid)
    deficits, lbs = [], []
    ceiling = closed = mc_trace = 0.0
    bounds_ok = True
    for d in (4, 8, 16):
        N = 3 * d // 2  # q = 1, r = 1/2
        cfg = build_config(1.0, d, 1.0, 1, N)
        orb = build_orbital_set(cfg, 3, grid, validate=False)
        mat = np.zeros((orb.size, orb.size), dtype=complex)
        mat[np.arange(N), np.arange(N)] = 1.0 / N
        gamma = DensityMatrix(orb, mat)
        m = lower_symbol(gamma, loc, 3)
        deficits.append(abs(m.integral() - 1.0))
        lbs.append(cfg.l_b)
        ceiling = max(ceiling, pauli_ceiling_excess(m, gamma, loc) / pauli_cap(cfg))
        rel = spatial_relation(gamma, m, loc)
        closed = max(closed, rel["closed_residual"])
        mc = mass_correct(m, cfg, loc)
        mc_trace = max(mc_trace, abs(mc.trace - 1.0))
        v = mc.density.values
        bounds_ok &= v.min() >= 0 and v.max() <= pauli_cap(cfg) * (1 + 1e-12)
    ratio = np.array(deficits) / np.array(lbs)
    record(10, {
        "deficit_decreasing": (bool(np.all(np.diff(deficits) < 0)), deficits[-1]),
        "deficit_over_l_b_bounded": (bool(np.all(np.diff(ratio) <= 0)), float(ratio.max())),
        "pauli_ceiling": (ceiling <= 1e-12, ceiling),
        "spatial_relation": (closed <= 1e-8, closed),
        "mass_correct_trace": (mc_trace <= 1e-12, mc_trace),
        "mass_correct_bounds": (bool(bounds_ok), bool(bounds_ok)),
    }, time.perf_counter() - t0, 60)


@pytest.mark.slow
def test_criterion_11_energy_trend():
    t0 = time.perf_counter()
    rows = energy_asymptotics_study([(2, 3), (4, 6), (6, 9)], 1, V_SPEC, W_SPEC, n_max=3, budget=100_000)
    gaps = [r["abs_gap"] for r in rows]
    above = [r["husimi_above"] for r in rows]
    weak = max(max(r["V_sup_over_hbar_b"], r["w_sup_over_hbar_b"]) for r in rows)
    bias = max(abs(r["truncation_bias"]) for r in rows)
    for r in rows:
        print(f"  d={r['d']} N={r['N']} n_max={r['n_max']} dim={r['dim']} gap={r['gap']:.6g} "
              f"bias={r['truncation_bias']:.3g} husimi_above={r['husimi_above']:.4g}")
    record(11, {
        "weak_potentials": (weak <= 0.05, weak),
        "gap_non_increasing": (all(b <= a for a, b in zip(gaps, gaps[1:])), gaps[-1]),
        "husimi_above_decreasing": (all(b < a for a, b in zip(above, above[1:])), above[-1]),
        "max_truncation_bias": (True, bias),
    }, time.perf_counter() - t0, 900)
