"""Electrostatic model of the partially filled level: capped-mass density minimization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import ConfigError, Grid, GridField, GridMismatchError, TorusConfig, convolve_periodic
from .husimi import build_saturated_density, semiclassical_energy


@dataclass(frozen=True)
class QllProblem:
    V: GridField
    w: GridField
    mass: float
    cap: float

    @property
    def grid(self) -> Grid:
        return self.V.grid

    def __post_init__(self):
        if self.V.grid != self.w.grid:
            raise GridMismatchError("V and w must share a grid")
        if self.V.kind != "real" or self.w.kind != "real":
            raise ConfigError("V and w must be real fields")
        wv = self.w.values
        flipped = np.roll(wv[::-1, ::-1], shift=(1, 1), axis=(0, 1))
        if np.max(np.abs(wv - flipped)) > 1e-12 * max(1.0, float(np.max(np.abs(wv)))):
            raise ConfigError("interaction must be even: w(x) = w(-x)")
        if self.mass < 0 or self.cap <= 0:
            raise ConfigError("mass must be >= 0 and cap > 0")
        if self.mass > self.cap * self.grid.L**2 * (1 + 1e-14):
            raise ConfigError("mass exceeds cap * L^2: infeasible")


def qll_constants(cfg: TorusConfig) -> tuple[Fraction, Fraction]:
    """``(r/(q+r), q+r)`` as exact rationals."""
    r = cfg.r_exact
    return r / (cfg.q + r), cfg.q + r


def build_qll_problem(cfg: TorusConfig, V: GridField, w: GridField) -> QllProblem:
    mass, qr = qll_constants(cfg)
    return QllProblem(V, w, float(mass), float(1 / qr) / cfg.L**2)


def _check(rho: GridField, prob: QllProblem) -> None:
    if rho.grid != prob.grid:
        raise GridMismatchError("density and problem grids differ")


def qll_energy(rho: GridField, prob: QllProblem) -> float:
    """``int V rho + int int w(x - y) rho(x) rho(y)``."""
    _check(rho, prob)
    if rho.kind != "real":
        raise ValueError("density must be real")
    h2 = prob.grid.cell_area
    conv = convolve_periodic(prob.w, rho).values
    return float(h2 * np.sum(prob.V.values * rho.values) + h2 * np.sum(conv * rho.values))


def qll_gradient(rho: GridField, prob: QllProblem) -> GridField:
    """First variation ``V + 2 (w * rho)`` (uses ``w`` even)."""
    _check(rho, prob)
    return GridField(prob.grid, prob.V.values + 2.0 * convolve_periodic(prob.w, rho).values)


# ---------------------------------------------------------------------------
# Projection onto {0 <= rho <= cap, int rho = mass}
# ---------------------------------------------------------------------------


def _project_values(vals: np.ndarray, mass: float, cap: float, h2: float) -> np.ndarray:
    target = mass / h2
    lo = float(vals.min()) - cap  # everything at the cap
    hi = float(vals.max())  # everything at zero
    if np.sum(np.clip(vals - lo, 0.0, cap)) < target * (1 - 1e-14):
        raise RuntimeError("projection bracket does not enclose the target mass")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if np.sum(np.clip(vals - mid, 0.0, cap)) > target:
            lo = mid
        else:
            hi = mid
    # the active sets are now fixed; solve the linear piece exactly
    mu = 0.5 * (lo + hi)
    shifted = vals - mu
    at_cap = shifted >= cap
    free = (shifted > 0) & ~at_cap
    n_free = int(np.count_nonzero(free))
    if n_free:
        mu = (float(np.sum(vals[free])) - (target - cap * np.count_nonzero(at_cap))) / n_free
    return np.clip(vals - mu, 0.0, cap)


def project_onto_domain(rho: GridField, prob: QllProblem) -> GridField:
    """Euclidean projection ``clip(rho - mu, 0, cap)`` with ``mu`` from bisection on the mass."""
    _check(rho, prob)
    vals = np.asarray(rho.values, dtype=float)
    out = _project_values(vals, prob.mass, prob.cap, prob.grid.cell_area)
    err = abs(prob.grid.cell_area * float(np.sum(out)) - prob.mass)
    if err > 1e-10 * max(1.0, prob.mass):
        raise RuntimeError(f"projection mass error {err:.3e}")
    return GridField(prob.grid, out)


def project_by_sorting(vals: np.ndarray, mass: float, cap: float, h2: float) -> np.ndarray:
    """Same projection through the sorted breakpoints of the piecewise-linear mass."""
    v = np.asarray(vals, dtype=float).ravel()
    target = mass / h2
    bps = np.sort(np.concatenate([v, v - cap]))

    def total(mu):
        return float(np.sum(np.clip(v - mu, 0.0, cap)))

    # total is non-increasing in mu; locate the bracketing pair of breakpoints
    lo_i, hi_i = 0, bps.size - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if total(bps[mid]) >= target:
            lo_i = mid
        else:
            hi_i = mid
    a, b = bps[lo_i], bps[hi_i]
    ta, tb = total(a), total(b)
    mu = a if ta == tb else a + (ta - target) * (b - a) / (ta - tb)
    return np.clip(v - mu, 0.0, cap).reshape(np.shape(vals))


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QllSolution:
    rho: GridField
    energy: float
    kkt_residual: float
    iterations: int
    residual: float
    converged: bool
    log: list = field(default_factory=list, repr=False, compare=False)


def _wnorm(x: np.ndarray, h2: float) -> float:
    return math.sqrt(h2 * float(np.sum(x * x)))


def fixed_point_residual(rho: GridField, prob: QllProblem, step: float = 1.0) -> float:
    """``||rho - Proj(rho - step * grad)|| / step`` in the weighted L^2 norm."""
    g = qll_gradient(rho, prob).values
    trial = _project_values(rho.values - step * g, prob.mass, prob.cap, prob.grid.cell_area)
    return _wnorm(rho.values - trial, prob.grid.cell_area) / step


def kkt_residual(rho: GridField, prob: QllProblem, bound_tol: float = 1e-12) -> float:
    """Smallest ``t`` such that some multiplier ``mu`` gives ``|g - mu| <= t`` on
    the free set, ``g >= mu - t`` where ``rho = 0`` and ``g <= mu + t`` at the cap.
    """
    g = qll_gradient(rho, prob).values
    vals = rho.values
    eps = bound_tol * prob.cap
    at_zero = vals <= eps
    at_cap = vals >= prob.cap - eps
    free = ~(at_zero | at_cap)
    lower = g[free | at_zero]
    upper = g[free | at_cap]
    if lower.size == 0 or upper.size == 0:
        return 0.0
    return max(0.0, 0.5 * (float(upper.max()) - float(lower.min())))


def _quadratic(dx: np.ndarray, prob: QllProblem) -> float:
    h2 = prob.grid.cell_area
    conv = np.fft.ifft2(np.fft.fft2(prob.w.values) * np.fft.fft2(dx)).real * h2
    return h2 * float(np.sum(dx * conv))


def constant_density(prob: QllProblem) -> GridField:
    return GridField.constant(prob.grid, prob.mass / prob.grid.L**2)


def minimize_qll(
    prob: QllProblem,
    rho0: GridField | None = None,
    tol: float = 1e-10,
    max_iter: int = 5000,
    reference_step: float = 1.0,
    armijo: float = 1e-4,
) -> QllSolution:
    """Projected gradient with Barzilai-Borwein steps and monotone Armijo backtracking.

    Stops when the fixed-point residual at ``reference_step`` is below ``tol``.
    """
    h2 = prob.grid.cell_area
    if prob.mass == 0.0:
        zero = GridField.constant(prob.grid, 0.0)
        return QllSolution(zero, 0.0, kkt_residual(zero, prob), 0, 0.0, True, [])
    rho = project_onto_domain(rho0, prob) if rho0 is not None else constant_density(prob)
    x = np.array(rho.values, dtype=float)
    E = qll_energy(GridField(prob.grid, x), prob)
    # energy tracked through the exact per-step changes; immune to the
    # cancellation in re-evaluating E from scratch
    E_track = E
    g = qll_gradient(GridField(prob.grid, x), prob).values
    step = reference_step
    log = []
    x_prev = g_prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        trial_ref = _project_values(x - reference_step * g, prob.mass, prob.cap, h2)
        res = _wnorm(x - trial_ref, h2) / reference_step
        log.append({"iteration": it - 1, "energy": E_track, "energy_direct": E, "residual": res})
        if res <= tol:
            converged = True
            it -= 1
            break
        if x_prev is not None:
            s = x - x_prev
            y = g - g_prev
            sy = h2 * float(np.sum(s * y))
            ss = h2 * float(np.sum(s * s))
            step = ss / sy if sy > 1e-300 * max(ss, 1e-300) and sy > 0 else 1e6 * reference_step
        g_mean = float(np.mean(g))
        # Armijo backtracking along the projection arc; the energy change of a
        # quadratic is evaluated exactly as <g, dx> + <dx, w * dx>
        while True:
            x_new = _project_values(x - step * g, prob.mass, prob.cap, h2)
            dx = x_new - x
            # dx has zero mass, so centring g removes rounding from the multiplier
            lin = h2 * float(np.sum((g - g_mean) * dx))
            dE = lin + _quadratic(dx, prob)
            if dE <= armijo * lin or step < 1e-14:
                break
            step *= 0.5
        if dE > 0 or not np.any(dx):
            break
        x_prev, g_prev = x, g
        x = x_new
        E_track += dE
        E = qll_energy(GridField(prob.grid, x), prob)
        g = qll_gradient(GridField(prob.grid, x), prob).values
    rho = GridField(prob.grid, x)
    res = fixed_point_residual(rho, prob, reference_step)
    converged = converged or res <= tol
    return QllSolution(rho, E, kkt_residual(rho, prob), it, res, converged, log)


def bathtub_oracle(V: GridField, mass: float, cap: float) -> GridField:
    """Fill cells at the cap in ascending ``V`` (ties in row-major order) until the mass is used."""
    h2 = V.grid.cell_area
    v = np.asarray(V.values, dtype=float).ravel()
    order = np.argsort(v, kind="stable")
    out = np.zeros_like(v)
    per_cell = cap * h2
    full = int(math.floor(mass / per_cell + 1e-12))
    full = min(full, v.size)
    out[order[:full]] = cap
    remainder = mass - full * per_cell
    if full < v.size and remainder > 0:
        out[order[full]] = remainder / h2
    return GridField(V.grid, out.reshape(V.values.shape))


# ---------------------------------------------------------------------------
# Filled-level constants and the decomposition identity
# ---------------------------------------------------------------------------


def filled_level_constants(cfg: TorusConfig, V: GridField, w: GridField) -> tuple[float, float, float]:
    """``(E^{q,r}, E_V^{q,r}, E_w^{q,r})``; ``E^{q,r}`` is in units of ``hbar b``."""
    q, r = cfg.q, cfg.r_exact
    if q == 0 and r == 0:
        raise ConfigError("q = r = 0 has no particles")
    E = (q * q + 2 * q * r + r) / (q + r)
    h2 = V.grid.cell_area
    L2 = cfg.L**2
    EV = float(Fraction(q) / (q + r)) / L2 * h2 * float(np.sum(V.values))
    # int int w(x - y) dx dy = L^2 int w
    ww = L2 * h2 * float(np.sum(w.values))
    Ew = float((q * q + 2 * q * r) / (q + r) ** 2) / (L2 * L2) * ww
    return float(E), EV, Ew


def decomposition_check(rho: GridField, cfg: TorusConfig, V: GridField, w: GridField) -> float:
    """Relative gap between the semi-classical energy of the saturated density
    and ``hbar b E^{q,r} + E_V + E_w + E_qLL[rho]``.
    """
    m = build_saturated_density(rho, cfg)
    lhs = semiclassical_energy(m, V, w, cfg)
    E, EV, Ew = filled_level_constants(cfg, V, w)
    prob = build_qll_problem(cfg, V, w)
    rhs = cfg.hbar_b * E + EV + Ew + qll_energy(rho, prob)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
