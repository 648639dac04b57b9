"""Landau-level projectors, their diagonals and the localized coherent operators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _quad

from .basis import (
    DEFAULT_TOL,
    OrbitalSet,
    TruncationError,
    _monomial_majorant,
    apply_momentum,
    eigenfunction,
    hermite,
    hermite_norm_sq,
    lattice_sum_bound,
    lattice_tail_bound,
)
from .core import ConfigError, Grid, GridField, TorusConfig, build_config, localizer_values

HERMITICITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# Projector kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelTruncation:
    K_shift: int
    K_period: int
    tail_bound: float


def kernel_truncation(n: int, cfg: TorusConfig, tol: float = DEFAULT_TOL) -> KernelTruncation:
    """Certify the double lattice sum of the level-``n`` kernel.

    ``tol`` is relative to the bulk diagonal value ``1/(2 pi l_b^2)``.  The
    dropped part is bounded by ``T_k B_q + B_k T_q`` (tail times full sum in
    each lattice direction).
    """
    C, p = _monomial_majorant(np.eye(n + 1)[n])
    pref = 1.0 / (hermite_norm_sq(n) * cfg.L * cfg.l_b)
    scale = 1.0 / (2.0 * math.pi * cfg.l_b_sq)
    dk = cfg.L / (cfg.d * cfg.l_b)
    dq = cfg.L / cfg.l_b
    Bk = lattice_sum_bound(C, p, dk)
    Bq = lattice_sum_bound(C, p, dq)
    U = max(1.0, math.sqrt(p) + 0.5, math.sqrt(max(p - 1, 0)) + 1.0)
    while True:
        tail = pref * (lattice_tail_bound(C, p, U, dk) * Bq + Bk * lattice_tail_bound(C, p, U, dq))
        if tail <= tol * scale:
            break
        U += 0.125
        if U > 60.0:
            raise TruncationError(f"kernel tail cannot reach {tol:g}")
    return KernelTruncation(int(math.ceil(U / dk)) + 1, int(math.ceil(U / dq)) + 1, tail)


def projector_kernel(n: int, x, y, cfg: TorusConfig, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Integral kernel ``Pi_n(x, y)`` of the level-``n`` projector (broadcasting).

    Points are complex ``x1 + i x2``.  Summation is centred per point on the
    dominant lattice terms.
    """
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    x1, x2 = x.real, x.imag
    y1, y2 = y.real, y.imag
    L, d, lb = cfg.L, cfg.d, cfg.l_b
    trunc = kernel_truncation(n, cfg, tol)
    pref = 1.0 / (hermite_norm_sq(n) * L * lb)
    shape = np.broadcast(x, y).shape
    total = np.zeros(shape, dtype=complex)
    k0 = -np.rint(x1 * d / L)
    for jk in range(-trunc.K_shift, trunc.K_shift + 1):
        k = k0 + jk
        u1 = (x1 + k * L / d) / lb
        hx = hermite(n, u1, "function")
        phase_k = np.exp(2j * math.pi * k * (y2 - x2) / L)
        q0 = -np.rint((y1 + k * L / d) / L)
        inner = np.zeros(shape, dtype=complex)
        for jq in range(-trunc.K_period, trunc.K_period + 1):
            q = q0 + jq
            u2 = (y1 + q * L + k * L / d) / lb
            inner += hermite(n, u2, "function") * np.exp(2j * math.pi * d * q * y2 / L)
        total += hx * phase_k * inner
    return pref * np.exp(1j * (y1 * y2 - x1 * x2) / cfg.l_b_sq) * total


def kernel_matrix(n: int, points, cfg: TorusConfig, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Hermitian matrix ``Pi_n(z_i, z_j)`` on a point list, symmetrized."""
    z = np.asarray(points, dtype=complex).ravel()
    K = projector_kernel(n, z[:, None], z[None, :], cfg, tol)
    sym = 0.5 * (K + K.conj().T)
    correction = float(np.max(np.abs(K - sym))) if K.size else 0.0
    scale = 1.0 / (2.0 * math.pi * cfg.l_b_sq)
    if correction > HERMITICITY_TOL * max(1.0, scale):
        raise RuntimeError(f"kernel Hermiticity defect {correction:.3e}")
    return sym


def diagonal_field(n: int, grid: Grid, cfg: TorusConfig, tol: float = DEFAULT_TOL) -> GridField:
    """``Pi_n(z, z)`` on the grid; tiny negative rounding is clipped at zero."""
    z = grid.points()
    vals = projector_kernel(n, z, z, cfg, tol)
    if np.max(np.abs(vals.imag)) > HERMITICITY_TOL * max(1.0, float(np.max(np.abs(vals.real)))):
        raise RuntimeError("projector diagonal is not real")
    re = vals.real
    if re.min() < -1e-12 * max(1.0, float(re.max())):
        raise RuntimeError(f"negative projector diagonal {re.min():.3e}")
    return GridField(grid, np.maximum(re, 0.0))


def diagonal_deviation(n: int, grid: Grid, cfg: TorusConfig, tol: float = DEFAULT_TOL) -> float:
    """``sup_z |2 pi l_b^2 Pi_n(z,z) - 1|`` over grid points."""
    diag = diagonal_field(n, grid, cfg, tol)
    return float(np.max(np.abs(2.0 * math.pi * cfg.l_b_sq * diag.values - 1.0)))


def momentum_diagonal(n: int, cfg: TorusConfig, points) -> np.ndarray:
    """``(P Pi_n)(z, z) = sum_l (pi psi_{nl})(z) conj(psi_{nl}(z))``, shape (2, ...)."""
    z = np.asarray(points, dtype=complex)
    out = np.zeros((2,) + z.shape, dtype=complex)
    for l in range(cfg.d):
        out += apply_momentum((n, l), z, cfg) * np.conj(eigenfunction((n, l), z, cfg))[None]
    return out


def momentum_reference(n: int, cfg: TorusConfig) -> np.ndarray:
    """Displayed bulk value ``(b/l_b)/(2 pi ||h_n||^2) int (i h_n', u h_n) h_n e^{-u^2} du``.

    Evaluated exactly by Gauss-Hermite quadrature (the integrand is polynomial
    times ``e^{-2u^2}``).
    """
    t, wts = np.polynomial.hermite.hermgauss(2 * n + 8)
    u = t / math.sqrt(2.0)
    Hn = hermite(n, u)
    dHn = 2.0 * n * hermite(n - 1, u) if n > 0 else np.zeros_like(u)
    # h_n' h_n e^{-u^2} = (H_n' - u H_n) H_n e^{-2u^2}
    I1 = np.sum(wts * (dHn - u * Hn) * Hn) / math.sqrt(2.0)
    I2 = np.sum(wts * u * Hn * Hn) / math.sqrt(2.0)
    coef = cfg.b / cfg.l_b / (2.0 * math.pi * hermite_norm_sq(n))
    return coef * np.array([1j * I1, I2])


def hermite_reference_quadrature(n: int) -> np.ndarray:
    """Same integrals as ``momentum_reference`` (without prefactor), by adaptive quadrature."""

    def h(u):
        return hermite(n, u, "function")

    def dh(u):
        H = hermite(n, u)
        dH = 2.0 * n * hermite(n - 1, u) if n > 0 else 0.0
        return (dH - u * H) * math.exp(-0.5 * u * u)

    I1, _ = _quad.quad(lambda u: dh(u) * h(u) * math.exp(-u * u), -np.inf, np.inf, epsabs=1e-14)
    I2, _ = _quad.quad(lambda u: u * h(u) ** 2 * math.exp(-u * u), -np.inf, np.inf, epsabs=1e-14)
    return np.array([1j * I1, I2])


# ---------------------------------------------------------------------------
# Localizer and coherent operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Localizer:
    lam: float
    grid: Grid
    samples: GridField = field(repr=False)

    @property
    def radius(self) -> float:
        return self.grid.L / (2.0 * self.lam)

    def centered(self, R: tuple[int, int]) -> np.ndarray:
        """``g_lam(. - R)`` for the grid point with indices ``R``."""
        return np.roll(self.samples.values, shift=R, axis=(0, 1))

    def squared_spectrum(self) -> np.ndarray:
        return np.fft.fft2(self.samples.values**2) * self.grid.cell_area

    def spectrum(self) -> np.ndarray:
        return np.fft.fft2(self.samples.values) * self.grid.cell_area


def default_scale(d: int) -> float:
    return float(d) ** 0.25


def build_localizer(lam: float, grid: Grid, min_points: int = 8) -> Localizer:
    """Smooth radial bump ``g_lam`` with support radius ``L/(2 lam)``.

    Rejects scales whose support radius spans fewer than ``min_points`` cells.
    """
    if lam < 1.0:
        raise ConfigError(f"localizer scale must be >= 1, got {lam}")
    radius = grid.L / (2.0 * lam)
    if radius / grid.spacing < min_points:
        raise ConfigError(
            f"support radius {radius:g} spans {radius / grid.spacing:.1f} < {min_points} grid cells"
        )
    return Localizer(lam, grid, GridField(grid, localizer_values(lam, grid)))


def _correlate(f: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """``R -> int f(z) g(z - R) dz`` for an even kernel; ``g_hat`` includes the cell area."""
    return np.fft.ifft2(np.fft.fft2(f) * g_hat)


@dataclass(frozen=True)
class LocalizedProjector:
    """``g(. - R) Pi_n g(. - R)`` represented through the ``d`` vectors ``g_R psi_{nl}``."""

    n: int
    R: tuple[int, int]
    vectors: np.ndarray = field(repr=False)
    cell_area: float

    def trace(self) -> float:
        return float(self.cell_area * np.sum(np.abs(self.vectors) ** 2))

    def apply(self, f: np.ndarray) -> np.ndarray:
        coeffs = self.cell_area * np.tensordot(np.conj(self.vectors), f, axes=([1, 2], [0, 1]))
        return np.tensordot(coeffs, self.vectors, axes=(0, 0))

    def rayleigh(self, f: np.ndarray) -> float:
        return float(np.real(self.cell_area * np.sum(np.conj(f) * self.apply(f))))

    def compressed(self, orbitals: OrbitalSet) -> np.ndarray:
        """Matrix ``<psi_a | Pi_{n,R} | psi_b>`` on the computed orbitals."""
        F = orbitals.flat()
        o = self.cell_area * (np.conj(F) @ self.vectors.reshape(self.vectors.shape[0], -1).T)
        return o @ o.conj().T


def localized_projector(n: int, R: tuple[int, int], loc: Localizer, orbitals: OrbitalSet) -> LocalizedProjector:
    if n > orbitals.n_max:
        raise ValueError(f"level {n} not in the orbital set (n_max={orbitals.n_max})")
    if loc.grid != orbitals.grid:
        raise ConfigError("localizer and orbitals live on different grids")
    g = loc.centered(R)
    vecs = g[None] * orbitals.level_samples(n)
    return LocalizedProjector(n, tuple(R), vecs, orbitals.grid.cell_area)


def localized_trace_field(n: int, loc: Localizer, cfg: TorusConfig, tol: float = DEFAULT_TOL) -> GridField:
    """``R -> Tr[Pi_{n,R}] = (g^2 * Pi_n(.,.))(R)`` on the grid."""
    diag = diagonal_field(n, loc.grid, cfg, tol)
    vals = np.fft.ifft2(np.fft.fft2(diag.values) * loc.squared_spectrum()).real
    return GridField(loc.grid, vals)


def resolution_of_identity(f: np.ndarray, loc: Localizer, orbitals: OrbitalSet, n_levels: int | None = None):
    """``sum_{n} int Pi_{n,R} f dR`` over the first ``n_levels`` levels.

    Returns ``(image, leakage)`` where ``leakage = ||f||^2 - sum int |<g_R psi, f>|^2``
    is the mass of ``g_R f`` outside the computed levels, integrated over R.
    """
    n_levels = orbitals.n_max + 1 if n_levels is None else n_levels
    area = orbitals.grid.cell_area
    g_hat = loc.spectrum()
    out = np.zeros_like(f, dtype=complex)
    captured = 0.0
    for n in range(n_levels):
        for psi in orbitals.level_samples(n):
            o = _correlate(np.conj(psi) * f, g_hat)
            captured += area * float(np.sum(np.abs(o) ** 2))
            out += psi * _correlate(o, g_hat)
    leakage = area * float(np.sum(np.abs(f) ** 2)) - captured
    return out, leakage


# ---------------------------------------------------------------------------
# Convergence sweep
# ---------------------------------------------------------------------------


def kernel_convergence_study(
    n_list,
    d_list,
    L: float = 1.0,
    hbar: float = 1.0,
    grid_size: int = 256,
    momentum_grid: int = 32,
    lam: float | None = None,
    tol: float = DEFAULT_TOL,
) -> list[dict]:
    """Per ``(n, d)``: diagonal deviation, its ratio to ``l_b``, the momentum
    diagonal against its Hermite-integral reference, and the relative trace
    error of the localized projector (sup over centres).
    """
    rows = []
    grid = Grid(grid_size, L)
    mgrid = Grid(momentum_grid, L)
    for d in d_list:
        cfg = build_config(L, d, hbar, 0, 1)
        scale = lam or default_scale(d)
        loc = Localizer(scale, grid, GridField(grid, localizer_values(scale, grid)))
        for n in n_list:
            diag = diagonal_field(n, grid, cfg, tol)
            dev = float(np.max(np.abs(2.0 * math.pi * cfg.l_b_sq * diag.values - 1.0)))
            trace = float(grid.cell_area * np.sum(diag.values))
            tr_loc = np.fft.ifft2(np.fft.fft2(diag.values) * loc.squared_spectrum()).real
            tr_err = float(np.max(np.abs(2.0 * math.pi * cfg.l_b_sq * tr_loc - 1.0)))
            ref = momentum_reference(n, cfg)
            mom = momentum_diagonal(n, cfg, mgrid.points())
            mdev = float(np.max(np.abs(mom - ref[:, None, None])))
            rows.append(
                {
                    "n": n,
                    "d": d,
                    "l_b": cfg.l_b,
                    "diagonal_deviation": dev,
                    "deviation_over_l_b": dev / cfg.l_b,
                    "trace": trace,
                    "trace_error": abs(trace - d) / d,
                    "localized_trace_error": tr_err,
                    "momentum_deviation": mdev,
                    "momentum_deviation_over_b": mdev / cfg.b,
                    "reference_x": complex(ref[0]),
                    "reference_y": complex(ref[1]),
                }
            )
    return rows


def loglog_slope(l_b: np.ndarray, err: np.ndarray) -> float:
    """Least-squares slope of ``log err`` against ``log l_b``."""
    x = np.log(np.asarray(l_b, dtype=float))
    y = np.log(np.maximum(np.asarray(err, dtype=float), np.finfo(float).tiny))
    return float(np.polyfit(x, y, 1)[0])
