"""Command-line batch driver: ``landau-torus <subcommand> --config <path> [--set k=v ...] --out <dir>``.

Exit codes: 0 all enabled checks pass, 1 some check failed, 2 parse error,
3 validation error, 4 numerical non-convergence, 5 unwritable output.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import many_body as mb
from .basis import (
    TruncationError,
    ValidationError,
    build_orbital_set,
    eigenfunction,
    kinetic_expectation,
    lll_theta_form,
    validate_orbital_set,
)
from .core import ConfigError, Grid, PotentialSpec, build_config, synthesize_potential
from .husimi import (
    DensityMatrix,
    lower_symbol,
    mass_correct,
    pauli_cap,
    pauli_ceiling_excess,
    husimi_leakage,
    spatial_relation,
)
from .projectors import build_localizer, kernel_convergence_study, loglog_slope
from .qll import (
    bathtub_oracle,
    build_qll_problem,
    constant_density,
    decomposition_check,
    minimize_qll,
    qll_energy,
)
from .report import ReportError, ReportWriter

SUBCOMMANDS = ("basis", "projector", "husimi", "qll", "ed", "verify")

EXIT_OK, EXIT_FAILED, EXIT_PARSE, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_OUTPUT = 0, 1, 2, 3, 4, 5

DEFAULTS = {
    "torus": {"L": 1.0, "d": 4, "hbar": 1.0, "q": 1, "N": 6},
    "potential": {"family": "cosine", "v0": 0.3},
    "interaction": {"family": "gaussian_periodic", "w0": 0.035, "sigma": 0.1},
    "grid": {"size": 64, "kernel_size": 256},
    "truncation": {"series_tol": 1e-14, "gram_tol": 1e-8, "edge_samples": 64},
    "solver": {
        "n_max": None,
        "husimi_levels": None,
        "lam": 1.0,
        "qll_tol": 1e-10,
        "max_iter": 5000,
        "budget": 100000,
        "d_list": [8, 16, 32, 64],
        "n_list": [0, 1],
        "sweep": None,
        "random_points": 1000,
        "seed": 0,
    },
    "checks": {"disable": []},
    "output": {"svg": True},
}

_NUM = {"type": "number"}
_OPT_INT = {"type": ["integer", "null"], "minimum": 0}
_SPEC = {
    "type": "object",
    "required": ["family"],
    "additionalProperties": False,
    "properties": {
        "family": {"enum": ["zero", "cosine", "fourier", "gaussian_periodic"]},
        "v0": _NUM,
        "w0": _NUM,
        "sigma": _NUM,
        "coefficients": {"type": ["array", "null"], "items": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 4}},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "torus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"L": _NUM, "d": {"type": "integer"}, "hbar": _NUM, "q": {"type": "integer"}, "N": {"type": "integer"}},
        },
        "potential": _SPEC,
        "interaction": _SPEC,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"size": {"type": "integer", "minimum": 2}, "kernel_size": {"type": "integer", "minimum": 2}},
        },
        "truncation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"series_tol": _NUM, "gram_tol": _NUM, "edge_samples": {"type": "integer", "minimum": 1}},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_max": _OPT_INT,
                "husimi_levels": _OPT_INT,
                "lam": _NUM,
                "qll_tol": _NUM,
                "max_iter": {"type": "integer", "minimum": 1},
                "budget": {"type": "integer", "minimum": 1},
                "d_list": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "n_list": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "sweep": {
                    "type": ["array", "null"],
                    "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                },
                "random_points": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"disable": {"type": "array", "items": {"type": "string"}}},
        },
        "output": {"type": "object", "additionalProperties": False, "properties": {"svg": {"type": "boolean"}}},
    },
}


class ParseError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("potential", "interaction"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise ParseError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ParseError(f"unknown configuration key {key!r}")
        node = node[p]
    if parts[-1] not in node and parts[0] not in ("potential", "interaction"):
        raise ParseError(f"unknown configuration key {key!r}")
    node[parts[-1]] = value


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings; ``to_dict`` and ``from_dict`` round-trip exactly."""

    subcommand: str
    settings: dict
    out: str

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, "out": self.out, **copy.deepcopy(self.settings)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        sub = data.pop("subcommand")
        out = data.pop("out")
        return cls(sub, parse_settings(data), out)

    def section(self, name: str) -> dict:
        return self.settings[name]

    def torus(self):
        t = self.settings["torus"]
        return build_config(t["L"], t["d"], t["hbar"], t["q"], t["N"])

    def grid(self, size: int | None = None) -> Grid:
        return Grid(size or self.settings["grid"]["size"], self.settings["torus"]["L"])

    def potential(self, grid: Grid):
        return synthesize_potential(PotentialSpec.from_dict(self.settings["potential"]), grid)

    def interaction(self, grid: Grid):
        spec = dict(self.settings["interaction"])
        spec["interaction"] = True
        return synthesize_potential(PotentialSpec.from_dict(spec), grid)

    def enabled(self, name: str) -> bool:
        return name not in self.settings["checks"]["disable"]


def parse_settings(raw: dict) -> dict:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ParseError(f"configuration: {exc.message}") from exc
    return _merge(DEFAULTS, raw)


def load_config(subcommand: str, path: str | None, overrides: list[str], out: str) -> RunConfig:
    """Defaults < file < ``--set`` flags."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read configuration {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParseError("configuration must be a JSON object")
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ParseError(f"configuration: {exc.message}") from exc
    merged = _merge(DEFAULTS, raw)
    for item in overrides:
        _apply_override(merged, item)
    return RunConfig(subcommand, parse_settings(merged), out)


def validate_run(rc: RunConfig) -> None:
    """Physical validation: raises ConfigError (exit 3)."""
    rc.torus()
    grid = rc.grid()
    rc.potential(grid)
    rc.interaction(grid)
    if rc.settings["solver"]["lam"] < 1.0:
        raise ConfigError("localizer scale lam must be >= 1")


# ---------------------------------------------------------------------------
# Result accumulation
# ---------------------------------------------------------------------------


class Results:
    def __init__(self, rc: RunConfig, writer: ReportWriter):
        self.rc = rc
        self.writer = writer
        self.scalars: dict = {}
        self.checks: list = []
        self.tolerances: dict = {}

    def scalar(self, name: str, value, tolerance=None) -> None:
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        self.scalars[name] = {"value": value, "tolerance": tolerance}

    def check(self, name: str, value, tolerance, passed: bool) -> None:
        if not self.rc.enabled(name):
            return
        if isinstance(value, (np.floating, np.integer, np.bool_)):
            value = value.item()
        self.checks.append({"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed)})
        if tolerance is not None:
            self.tolerances[name] = tolerance

    def upper(self, name: str, value: float, tolerance: float) -> None:
        self.check(name, float(value), tolerance, bool(value <= tolerance))

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "subcommand": self.rc.subcommand,
            "config": self.rc.to_dict(),
            "tolerances": self.tolerances,
            "scalars": self.scalars,
            "checks": self.checks,
            "artifacts": [],
            "passed": self.passed,
        }


def _svg(res: Results, name: str, values: np.ndarray, title: str) -> None:
    if res.rc.settings["output"]["svg"]:
        res.writer.add_svg(name, values, title)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def run_basis(rc: RunConfig, res: Results) -> None:
    cfg = rc.torus()
    tr = rc.settings["truncation"]
    n_max = rc.settings["solver"]["n_max"]
    n_max = cfg.q + 2 if n_max is None else n_max
    grid = rc.grid()
    orb = build_orbital_set(cfg, n_max, grid, tol=tr["gram_tol"], series_tol=tr["series_tol"], validate=False)
    report = validate_orbital_set(orb, edge_samples=tr["edge_samples"])
    res.upper("series_tail", max(p.tail_bound for p in orb.policies), tr["series_tol"])
    res.upper("gram_deviation", report["gram_deviation"], tr["gram_tol"])
    res.upper("boundary_residual", report["boundary_residual"], 1e-10)
    res.upper("ladder_residual", report["ladder_residual"], 1e-8)

    rng = np.random.default_rng(rc.settings["solver"]["seed"])
    pts = rng.uniform(0.0, cfg.L, size=(rc.settings["solver"]["random_points"], 2))
    dual = 0.0
    for n in range(n_max + 1):
        for l in range(cfg.d):
            a = eigenfunction((n, l), pts, cfg, method="direct", tol=tr["series_tol"])
            b = eigenfunction((n, l), pts, cfg, method="poisson", tol=tr["series_tol"])
            dual = max(dual, float(np.max(np.abs(a - b)) / np.max(np.abs(a))))
    res.upper("dual_series_relative", dual, 1e-10)
    theta = max(
        float(np.max(np.abs(lll_theta_form(l, pts, cfg) - eigenfunction((0, l), pts, cfg)))) for l in range(cfg.d)
    )
    res.upper("theta_form_deviation", theta, 1e-10)

    rows = []
    kin = 0.0
    for n in range(n_max + 1):
        for l in range(cfg.d):
            k = kinetic_expectation(orb, n, l)
            kin = max(kin, abs(k - cfg.level_energy(n)) / cfg.hbar_b)
            psi = orb.samples[orb.index(n, l)]
            rows.append(
                {
                    "n": n,
                    "l": l,
                    "index": orb.index(n, l),
                    "norm": float(np.sqrt(grid.cell_area * np.sum(np.abs(psi) ** 2))),
                    "kinetic_over_hbar_b": k / cfg.hbar_b,
                    "level_energy_over_hbar_b": cfg.level_energy(n) / cfg.hbar_b,
                }
            )
    res.upper("kinetic_expectation_deviation", kin, 1e-8)
    res.writer.add_csv("orbitals.csv", rows)
    for key, val in report.items():
        res.scalar(key, val, tr["gram_tol"] if key != "orbitals_per_level" else None)
    res.scalar("l_b", cfg.l_b, None)
    res.scalar("b", cfg.b, None)
    _svg(res, f"orbital_density_n{cfg.q}_l0.svg", np.abs(orb.samples[orb.index(cfg.q, 0)]) ** 2, "|psi|^2")


def run_projector(rc: RunConfig, res: Results) -> None:
    s = rc.settings["solver"]
    t = rc.settings["torus"]
    rows = kernel_convergence_study(
        s["n_list"], s["d_list"], L=t["L"], hbar=t["hbar"], grid_size=rc.settings["grid"]["kernel_size"],
        tol=rc.settings["truncation"]["series_tol"],
    )
    flat = []
    for r in rows:
        r = dict(r)
        for key in ("reference_x", "reference_y"):
            z = r.pop(key)
            r[key + "_re"], r[key + "_im"] = z.real, z.imag
        flat.append(r)
    res.writer.add_csv("projector_study.csv", flat)
    for r in rows:
        res.upper(f"trace_error_n{r['n']}_d{r['d']}", r["trace_error"], 1e-8)
    lll = [r for r in rows if r["n"] == 0]
    if len(lll) >= 2:
        dev = np.array([r["diagonal_deviation"] for r in lll])
        lb = np.array([r["l_b"] for r in lll])
        res.check("diagonal_deviation_decreasing", bool(np.all(np.diff(dev) < 0)), None, bool(np.all(np.diff(dev) < 0)))
        slope = loglog_slope(lb, dev)
        res.check("diagonal_deviation_slope", slope, None, 0.5 <= slope <= 1.5)
        loc_err = np.array([r["localized_trace_error"] for r in lll])
        res.check("localized_trace_error_decreasing", bool(np.all(np.diff(loc_err) < 0)), None, bool(np.all(np.diff(loc_err) < 0)))
        res.scalar("loglog_slope", slope, None)
    d0 = s["d_list"][0]
    cfg = build_config(t["L"], d0, t["hbar"], 0, 1)
    from .projectors import diagonal_field

    g = rc.grid(rc.settings["grid"]["kernel_size"])
    field = diagonal_field(0, g, cfg).values * 2.0 * math.pi * cfg.l_b_sq - 1.0
    _svg(res, f"diagonal_deviation_d{d0}.svg", field, "2 pi l_b^2 Pi_0(z,z) - 1")


def _fermi_sea(orb, N: int) -> DensityMatrix:
    g = np.zeros((orb.size, orb.size), dtype=complex)
    g[np.arange(N), np.arange(N)] = 1.0 / N
    return DensityMatrix(orb, g, 1)


def run_husimi(rc: RunConfig, res: Results) -> None:
    cfg = rc.torus()
    s = rc.settings["solver"]
    levels = cfg.q + 2 if s["husimi_levels"] is None else s["husimi_levels"]
    grid = rc.grid()
    orb = build_orbital_set(cfg, levels, grid, tol=rc.settings["truncation"]["gram_tol"], validate=False)
    if cfg.N > orb.size:
        raise ConfigError("N exceeds the number of computed orbitals")
    gamma = _fermi_sea(orb, cfg.N)
    loc = build_localizer(s["lam"], grid)
    m = lower_symbol(gamma, loc, levels)
    cap = pauli_cap(cfg)
    res.upper("pauli_ceiling_excess", pauli_ceiling_excess(m, gamma, loc), 1e-12 * cap)
    leak = husimi_leakage(m, gamma)
    res.check("husimi_mass_at_most_one", m.integral(), 1e-12, m.integral() <= 1.0 + 1e-12)
    res.check("husimi_leakage_nonnegative", leak, 1e-12, leak >= -1e-12)
    rel = spatial_relation(gamma, m, loc)
    res.upper("spatial_relation_closed", rel["closed_residual"], 1e-8 * max(1.0, rel["scale"]))
    res.scalar("spatial_relation_raw_gap", rel["raw_gap"], None)
    res.scalar("localization_leakage_sup", rel["leakage_sup"], None)
    mc = mass_correct(m, cfg, loc)
    res.upper("mass_correct_trace", abs(mc.trace - 1.0), 1e-12)
    vals = mc.density.values
    res.check("mass_correct_bounds", float(vals.max() / cap), 1e-12, vals.min() >= 0 and vals.max() <= cap * (1 + 1e-12))
    res.scalar("husimi_integral", m.integral(), 1e-12)
    res.scalar("mass_correct_tau", mc.tau, None)
    masses = m.level_masses()
    res.writer.add_csv("husimi_levels.csv", [{"n": n, "mass": float(x)} for n, x in enumerate(masses)])
    for n in range(levels + 1):
        _svg(res, f"husimi_level_{n}.svg", m.values[n], f"m(n={n}, R)")


def run_qll(rc: RunConfig, res: Results) -> None:
    cfg = rc.torus()
    s = rc.settings["solver"]
    grid = rc.grid()
    V, w = rc.potential(grid), rc.interaction(grid)
    prob = build_qll_problem(cfg, V, w)
    sol = minimize_qll(prob, tol=s["qll_tol"], max_iter=s["max_iter"])
    if not sol.converged:
        raise NonConvergence(f"qLL solver stopped at residual {sol.residual:.3e} after {sol.iterations} iterations")
    res.upper("kkt_residual", sol.kkt_residual, 1e-8)
    res.scalar("energy", sol.energy, s["qll_tol"])
    res.scalar("iterations", sol.iterations, None)
    res.scalar("fixed_point_residual", sol.residual, s["qll_tol"])
    rho0 = constant_density(prob)
    dev0 = float(np.max(np.abs(sol.rho.values - rho0.values)))
    res.scalar("max_abs_rho_minus_rho0", dev0, 1e-6)
    if not np.any(V.values):
        res.upper("uniform_minimizer", dev0, 1e-6)
    if not np.any(w.values):
        oracle = bathtub_oracle(V, prob.mass, prob.cap)
        gap = abs(sol.energy - qll_energy(oracle, prob))
        res.upper("bathtub_energy_gap", gap, 1e-8)
    energies = [e["energy"] for e in sol.log]
    mono = all(b <= a for a, b in zip(energies, energies[1:]))
    res.check("energy_monotone", mono, None, mono)
    dec = decomposition_check(sol.rho, cfg, V, w)
    res.upper("decomposition_identity", dec, 1e-10)
    res.writer.add_csv("qll_density.csv", _grid_rows(sol.rho.values, grid.L))
    res.writer.add_json("solver_log.json", sol.log)
    _svg(res, "qll_density.svg", sol.rho.values, "rho*")


def _grid_rows(values, L):
    from .report import grid_rows

    return grid_rows(values, L)


def run_ed(rc: RunConfig, res: Results) -> None:
    cfg = rc.torus()
    s = rc.settings["solver"]
    n_max = cfg.q + 2 if s["n_max"] is None else s["n_max"]
    grid = rc.grid()
    V, w = rc.potential(grid), rc.interaction(grid)
    orb = build_orbital_set(cfg, n_max, grid, tol=rc.settings["truncation"]["gram_tol"])
    Vm = mb.one_body_matrix(V, orb)
    W = mb.two_body_tensor(w, orb)
    flags = W.symmetry_flags()
    res.check("two_body_hermitian", W.hermiticity_defect(), 1e-10, flags["hermitian"])
    res.check("two_body_exchange", W.exchange_defect(), 1e-10, flags["exchange"])
    H = mb.build_hamiltonian(cfg, n_max, Vm, W, budget=s["budget"])
    try:
        E, psi = mb.ground_state(H)
    except mb.NonConvergenceError as exc:
        raise NonConvergence(str(exc)) from exc
    N = cfg.N
    res.scalar("dimension", H.dim, None)
    res.scalar("ground_energy", E, 1e-10 * max(1.0, H.norm_proxy()))
    res.scalar("energy_per_particle", E / N, 1e-10 * max(1.0, H.norm_proxy()) / N)
    g1 = mb.reduced_density(psi, 1)
    res.upper("gamma1_trace", abs(np.trace(g1).real - 1.0), 1e-10)
    ev = np.linalg.eigvalsh(0.5 * (g1 + g1.conj().T))
    res.upper("gamma1_pauli", max(-ev.min(), ev.max() - 1.0 / N), 1e-10)
    if N >= 2:
        g2 = mb.reduced_density(psi, 2)
        res.upper("partial_trace_consistency", float(np.max(np.abs(mb.partial_trace(g2) - g1))), 1e-10)
        e_reduced = mb.one_body_energy(g1, cfg, Vm) + mb.interaction_energy(g2, W)
        res.upper("energy_identity", abs(E / N - e_reduced) / max(1.0, abs(E / N)), 1e-10)
        U = np.eye(orb.size, N, dtype=complex)
        hf = mb.hartree_fock_energy(U @ U.conj().T / N, cfg, Vm, W, N)
        res.check("variational_bound", E - N * hf, 1e-10, E <= N * hf + 1e-10 * max(1.0, abs(E)))
    res.writer.add_bytes("ground_state.bin", mb.ground_state_bytes(psi, cfg.d, n_max))
    if s["sweep"]:
        rows = mb.energy_asymptotics_study(
            [tuple(x) for x in s["sweep"]], cfg.q,
            PotentialSpec.from_dict(rc.settings["potential"]),
            PotentialSpec.from_dict({**rc.settings["interaction"], "interaction": True}),
            n_max=s["n_max"], L=cfg.L, hbar=cfg.hbar, grid_size=grid.size, budget=s["budget"],
            husimi_levels=s["husimi_levels"], lam=s["lam"], qll_tol=s["qll_tol"],
        )
        res.writer.add_csv("energy_study.csv", rows)
        gaps = [r["abs_gap"] for r in rows]
        ok = all(b <= a for a, b in zip(gaps, gaps[1:]))
        res.check("gap_non_increasing", ok, None, ok)
        above = [r["husimi_above"] for r in rows]
        ok = all(b <= a for a, b in zip(above, above[1:]))
        res.check("husimi_above_decreasing", ok, None, ok)
    res.writer.add_csv("occupations.csv", [{"orbital": a, "level": a // cfg.d, "occupation": float(g1[a, a].real * N)} for a in range(orb.size)])


def run_verify(rc: RunConfig, res: Results) -> None:
    """Fast property suites on the configured torus."""
    cfg = rc.torus()
    grid = rc.grid()
    tr = rc.settings["truncation"]
    s = rc.settings["solver"]
    n_max = cfg.q + 2 if s["n_max"] is None else s["n_max"]
    orb = build_orbital_set(cfg, n_max, grid, tol=tr["gram_tol"], validate=False)
    rep = validate_orbital_set(orb, edge_samples=tr["edge_samples"])
    res.upper("basis_gram", rep["gram_deviation"], tr["gram_tol"])
    res.upper("basis_boundary", rep["boundary_residual"], 1e-10)
    res.upper("basis_ladder", rep["ladder_residual"], 1e-8)
    rng = np.random.default_rng(s["seed"])
    pts = rng.uniform(0.0, cfg.L, size=(200, 2))
    dual = max(
        float(np.max(np.abs(eigenfunction((n, l), pts, cfg) - eigenfunction((n, l), pts, cfg, method="poisson"))))
        for n in range(n_max + 1)
        for l in range(cfg.d)
    )
    res.upper("dual_series", dual, 1e-10)

    from .projectors import diagonal_field

    tr_err = max(abs(grid.cell_area * float(np.sum(diagonal_field(n, grid, cfg).values)) - cfg.d) for n in range(n_max + 1))
    res.upper("projector_trace", tr_err, 1e-8 * cfg.d)

    # qLL on the configured potentials
    V, w = rc.potential(grid), rc.interaction(grid)
    prob = build_qll_problem(cfg, V, w)
    sol = minimize_qll(prob, tol=s["qll_tol"], max_iter=s["max_iter"])
    if not sol.converged:
        raise NonConvergence("qLL solver did not converge")
    res.upper("qll_kkt", sol.kkt_residual, 1e-8)
    res.upper("qll_decomposition", decomposition_check(sol.rho, cfg, V, w), 1e-10)

    # Husimi contracts on the Fermi sea
    loc = build_localizer(s["lam"], grid)
    gamma = _fermi_sea(orb, cfg.N)
    m = lower_symbol(gamma, loc, n_max)
    res.upper("husimi_pauli_ceiling", pauli_ceiling_excess(m, gamma, loc), 1e-12 * pauli_cap(cfg))
    rel = spatial_relation(gamma, m, loc)
    res.upper("husimi_spatial_relation", rel["closed_residual"], 1e-8 * max(1.0, rel["scale"]))
    mc = mass_correct(m, cfg, loc)
    res.upper("husimi_mass_correct", abs(mc.trace - 1.0), 1e-12)

    # many-body contracts on the smallest level set holding N
    n_ed = max(cfg.q, math.ceil(cfg.N / cfg.d) - 1)
    sub = orb.truncated(min(n_ed, orb.n_max))
    Hfree = mb.build_hamiltonian(cfg, sub.n_max, None, None, budget=s["budget"])
    E0, _ = mb.ground_state(Hfree)
    full, rem = divmod(cfg.N, cfg.d)
    exact = sum(cfg.d * cfg.level_energy(n) for n in range(full)) + rem * cfg.level_energy(full)
    res.upper("filling_energy", abs(E0 - exact) / exact, 1e-9)
    Vm, W = mb.one_body_matrix(V, sub), mb.two_body_tensor(w, sub)
    H = mb.build_hamiltonian(cfg, sub.n_max, Vm, W, budget=s["budget"])
    E, psi = mb.ground_state(H)
    g1 = mb.reduced_density(psi, 1)
    res.upper("gamma1_trace", abs(np.trace(g1).real - 1.0), 1e-10)
    if cfg.N >= 2:
        g2 = mb.reduced_density(psi, 2)
        res.upper("partial_trace", float(np.max(np.abs(mb.partial_trace(g2) - g1))), 1e-10)
        e_reduced = mb.one_body_energy(g1, cfg, Vm) + mb.interaction_energy(g2, W)
        res.upper("energy_identity", abs(E / cfg.N - e_reduced) / max(1.0, abs(E / cfg.N)), 1e-10)
        U = mb.random_orthonormal(sub.size, cfg.N, rng)
        res.upper("wick", mb.wick_check(U), 1e-12)
        gam = U @ U.conj().T / cfg.N
        res.upper("exchange_trace", abs(mb.exchange_trace(gam) - np.trace(gam @ gam)), 1e-12)
        hf = mb.hartree_fock_energy(gam, cfg, Vm, W, cfg.N)
        slater = mb.slater_state(H.basis, U)
        direct = H.expectation(slater) / cfg.N
        res.upper("hartree_fock_wick", abs(hf - direct) / max(1.0, abs(direct)), 1e-10)
        res.check("variational", E - cfg.N * hf, None, E <= cfg.N * hf + 1e-10 * max(1.0, abs(E)))


HANDLERS = {
    "basis": run_basis,
    "projector": run_projector,
    "husimi": run_husimi,
    "qll": run_qll,
    "ed": run_ed,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="landau-torus", description="Landau levels on a magnetic torus")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", default=None, help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output directory")
    return p


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    parser.__class__ = _Parser
    try:
        args = parser.parse_args(argv)
        rc = load_config(args.subcommand, args.config, args.overrides, args.out)
    except (_ArgumentError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        validate_run(rc)
    except (ConfigError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    mb.configure_threads()
    writer = ReportWriter(rc.out)
    res = Results(rc, writer)
    try:
        HANDLERS[rc.subcommand](rc, res)
    except (NonConvergence, mb.NonConvergenceError, TruncationError) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, mb.DimensionBudgetError, ValidationError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        writer.write(res.summary())
    except (ReportError, OSError) as exc:
        print(f"cannot write reports: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    for c in res.checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['name']}: {c['value']} (tolerance {c['tolerance']})")
    return EXIT_OK if res.passed else EXIT_FAILED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
