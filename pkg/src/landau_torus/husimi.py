"""Phase-space (Husimi) symbols of density matrices and the semi-classical functional."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import OrbitalSet
from .core import ConfigError, Grid, GridField, TorusConfig, bump_gradient_norm_sq, convolve_periodic
from .projectors import Localizer, diagonal_field

POSITIVITY_TOL = 1e-10


@dataclass(frozen=True)
class DensityMatrix:
    """Density matrix in the orbital basis.

    For ``k = 1`` ``matrix[a, c] = <psi_a|gamma|psi_c>``; for ``k = 2`` it is the
    four-index array ``<psi_a psi_b|gamma|psi_c psi_d>``.  Only the first
    ``matrix.shape[0]`` orbitals of ``basis`` are used.
    """

    basis: OrbitalSet
    matrix: np.ndarray = field(repr=False)
    k: int = 1

    def __post_init__(self):
        M = self.matrix.shape[0]
        if M > self.basis.size:
            raise ValueError("density matrix larger than the orbital set")
        if self.k not in (1, 2):
            raise ValueError("body order must be 1 or 2")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def flat(self) -> np.ndarray:
        if self.k == 1:
            return self.matrix
        M = self.dim
        return self.matrix.reshape(M * M, M * M)

    def trace(self) -> float:
        return float(np.real(np.trace(self.flat())))

    def eigenvalues(self) -> np.ndarray:
        A = self.flat()
        return np.linalg.eigvalsh(0.5 * (A + A.conj().T))

    def check_positive(self, tol: float = POSITIVITY_TOL) -> None:
        A = self.flat()
        if np.max(np.abs(A - A.conj().T), initial=0.0) > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        ev = self.eigenvalues()
        if ev.size and ev.min() < -tol:
            raise ValueError(f"density matrix has negative eigenvalue {ev.min():.3e}")

    def density(self) -> GridField:
        """One-body spatial density ``rho_gamma(z) = gamma(z, z)``."""
        if self.k != 1:
            raise ValueError("density() needs a one-body matrix")
        F = self.basis.flat()[: self.dim]
        rho = np.real(np.einsum("ag,ac,cg->g", F, self.matrix, np.conj(F), optimize=True))
        return GridField(self.basis.grid, rho.reshape(self.basis.grid.size, -1))


@dataclass(frozen=True)
class PhaseSpaceDensity:
    """``m(n, R)`` on levels ``0..n_max`` times an R grid (``k = 1``), or
    ``m(n1, R1, n2, R2)`` stored with shape ``(levels, G, G, levels, G, G)``.
    """

    n_max: int
    grid: Grid
    values: np.ndarray = field(repr=False)
    k: int = 1

    def __post_init__(self):
        lv, G = self.n_max + 1, self.grid.size
        shape = (lv, G, G) if self.k == 1 else (lv, G, G, lv, G, G)
        if self.values.shape != shape:
            raise ValueError(f"phase-space values have shape {self.values.shape}, expected {shape}")

    def integral(self) -> float:
        """``int m d eta``: counting measure in n, grid quadrature in R."""
        return float(self.grid.cell_area**self.k * np.sum(self.values))

    def level_masses(self) -> np.ndarray:
        if self.k != 1:
            raise ValueError("level masses defined for one-body symbols")
        return self.grid.cell_area * self.values.sum(axis=(1, 2))

    def spatial_density(self) -> GridField:
        """``rho_m = sum_n m(n, .)`` for one-body symbols."""
        if self.k != 1:
            raise ValueError("spatial density defined for one-body symbols")
        return GridField(self.grid, self.values.sum(axis=0))

    def marginal(self) -> "PhaseSpaceDensity":
        """Integrate out the second slot of a two-body symbol."""
        if self.k != 2:
            raise ValueError("marginal needs a two-body symbol")
        vals = self.grid.cell_area * self.values.sum(axis=(3, 4, 5))
        return PhaseSpaceDensity(self.n_max, self.grid, vals, 1)

    def pair_density(self) -> np.ndarray:
        """``rho_m(R1, R2) = sum_{n1,n2} m``; shape ``(G, G, G, G)``."""
        if self.k != 2:
            raise ValueError("pair density needs a two-body symbol")
        return self.values.sum(axis=(0, 3))

    def with_levels(self, n_max: int) -> "PhaseSpaceDensity":
        if self.k != 1:
            raise ValueError("level padding defined for one-body symbols")
        if n_max < self.n_max:
            if np.any(self.values[n_max + 1 :] != 0):
                raise ValueError("cannot drop occupied levels")
            return PhaseSpaceDensity(n_max, self.grid, self.values[: n_max + 1].copy())
        pad = np.zeros((n_max - self.n_max,) + self.values.shape[1:])
        return PhaseSpaceDensity(n_max, self.grid, np.concatenate([self.values, pad]))


# ---------------------------------------------------------------------------
# Overlaps <psi_a | g_R psi_{nl}>
# ---------------------------------------------------------------------------


def _stride(orbitals: OrbitalSet, Rgrid: Grid) -> int:
    G, g = orbitals.grid.size, Rgrid.size
    if Rgrid.L != orbitals.grid.L or G % g:
        raise ConfigError("R grid must subsample the spatial grid")
    return G // g


def level_overlaps(n: int, loc: Localizer, orbitals: OrbitalSet, M: int, stride: int = 1) -> np.ndarray:
    """``O[l, a, R] = <psi_a | g(. - R) psi_{nl}>`` for ``a < M``; R on the strided grid."""
    g_hat = loc.spectrum()
    F = orbitals.samples[:M]
    out = []
    for psi in orbitals.level_samples(n):
        prod = np.conj(F) * psi[None]
        conv = np.fft.ifft2(np.fft.fft2(prod, axes=(1, 2)) * g_hat[None], axes=(1, 2))
        out.append(conv[:, ::stride, ::stride])
    return np.stack(out)


def _require_levels(orbitals: OrbitalSet, n_max: int) -> None:
    if n_max > orbitals.n_max:
        raise ValueError(f"Husimi levels up to {n_max} need an orbital set with n_max >= {n_max}")


def lower_symbol(
    gamma: DensityMatrix,
    loc: Localizer,
    n_max: int,
    Rgrid: Grid | None = None,
) -> PhaseSpaceDensity:
    """Husimi function ``m(X) = Tr[gamma Pi_X]`` (tensor product of ``Pi_X`` for k = 2)."""
    gamma.check_positive()
    orbitals = gamma.basis
    _require_levels(orbitals, n_max)
    Rgrid = Rgrid or orbitals.grid
    stride = _stride(orbitals, Rgrid)
    M = gamma.dim
    G = Rgrid.size
    if gamma.k == 1:
        vals = np.empty((n_max + 1, G, G))
        for n in range(n_max + 1):
            O = level_overlaps(n, loc, orbitals, M, stride).reshape(orbitals.config.d, M, -1)
            vals[n] = np.real(np.einsum("lar,ab,lbr->r", np.conj(O), gamma.matrix, O, optimize=True)).reshape(G, G)
        return PhaseSpaceDensity(n_max, Rgrid, _clip_rounding(vals), 1)

    O = np.stack([level_overlaps(n, loc, orbitals, M, stride).reshape(orbitals.config.d, M, -1) for n in range(n_max + 1)])
    # T[n1, r1, b, d] = sum_{l1, a, c} conj(O[a]) O[c] gamma2[a, b, c, d]
    T = np.einsum("nlar,nlcr,abcd->nrbd", np.conj(O), O, gamma.matrix, optimize=True)
    vals = np.real(np.einsum("nrbd,mlbs,mlds->nrms", T, np.conj(O), O, optimize=True))
    lv = n_max + 1
    vals = vals.reshape(lv, G, G, lv, G, G)
    return PhaseSpaceDensity(n_max, Rgrid, _clip_rounding(vals), 2)


def _clip_rounding(vals: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < -1e-12 * scale:
        raise RuntimeError(f"negative Husimi value {vals.min():.3e}")
    return np.maximum(vals, 0.0)


def projector_traces(n_max: int, loc: Localizer, cfg: TorusConfig, Rgrid: Grid | None = None) -> np.ndarray:
    """``Tr[Pi_{n,R}]`` for ``n <= n_max`` on the R grid, shape ``(n_max+1, G, G)``."""
    grid = loc.grid
    Rgrid = Rgrid or grid
    stride = grid.size // Rgrid.size
    out = []
    for n in range(n_max + 1):
        diag = diagonal_field(n, grid, cfg)
        t = np.fft.ifft2(np.fft.fft2(diag.values) * loc.squared_spectrum()).real
        out.append(t[::stride, ::stride])
    return np.stack(out)


def pauli_ceiling_excess(m: PhaseSpaceDensity, gamma: DensityMatrix, loc: Localizer) -> float:
    """``max(m - ||gamma||_op Tr[Pi_X])`` (positive means a violation)."""
    cfg = gamma.basis.config
    ev = gamma.eigenvalues()
    norm = float(ev.max()) if ev.size else 0.0
    traces = projector_traces(m.n_max, loc, cfg, m.grid)
    if m.k == 1:
        return float(np.max(m.values - norm * traces))
    bound = norm * traces[:, :, :, None, None, None] * traces[None, None, None]
    return float(np.max(m.values - bound))


def husimi_leakage(m: PhaseSpaceDensity, gamma: DensityMatrix) -> float:
    """Mass of ``gamma`` not captured by the computed Husimi levels."""
    return gamma.trace() - m.integral()


# ---------------------------------------------------------------------------
# Upper symbols
# ---------------------------------------------------------------------------


def upper_symbol_matrix(m: PhaseSpaceDensity, loc: Localizer, orbitals: OrbitalSet, M: int | None = None) -> DensityMatrix:
    """``gamma_m = 2 pi l_b^2 int m(X) Pi_X d eta(X)``, compressed to the first ``M`` orbitals.

    One-body symbols only.
    """
    if m.k != 1:
        raise NotImplementedError("upper symbols are assembled for one-body densities")
    if np.any(m.values < 0):
        raise ValueError("upper symbol needs a non-negative density")
    _require_levels(orbitals, m.n_max)
    M = orbitals.size if M is None else M
    stride = _stride(orbitals, m.grid)
    cfg = orbitals.config
    out = np.zeros((M, M), dtype=complex)
    for n in range(m.n_max + 1):
        w = m.values[n].ravel()
        if not np.any(w):
            continue
        O = level_overlaps(n, loc, orbitals, M, stride).reshape(cfg.d, M, -1)
        out += np.einsum("lar,r,lbr->ab", O, w, np.conj(O), optimize=True)
    out *= 2.0 * math.pi * cfg.l_b_sq * m.grid.cell_area
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(orbitals, out, 1)


def upper_symbol_trace(m: PhaseSpaceDensity, loc: Localizer, cfg: TorusConfig) -> float:
    """Full ``Tr[gamma_m] = 2 pi l_b^2 sum_n int m(n, R) Tr[Pi_{n,R}] dR``."""
    traces = projector_traces(m.n_max, loc, cfg, m.grid)
    return float(2.0 * math.pi * cfg.l_b_sq * m.grid.cell_area * np.sum(m.values * traces))


# ---------------------------------------------------------------------------
# Saturated density and the semi-classical energy
# ---------------------------------------------------------------------------


def qll_cap(cfg: TorusConfig) -> float:
    return 1.0 / ((cfg.q + cfg.r) * cfg.L**2)


def qll_mass(cfg: TorusConfig) -> float:
    return cfg.r / (cfg.q + cfg.r)


def check_qll_domain(rho: GridField, cfg: TorusConfig, tol: float = 1e-10) -> None:
    vals = np.asarray(rho.values)
    if np.iscomplexobj(vals):
        raise ValueError("density must be real")
    cap = qll_cap(cfg)
    if vals.min() < -tol * cap or vals.max() > cap * (1 + tol):
        raise ValueError("density violates 0 <= rho <= 1/((q+r)L^2)")
    mass = rho.grid.cell_area * float(np.sum(vals))
    if abs(mass - qll_mass(cfg)) > tol:
        raise ValueError(f"density mass {mass} differs from r/(q+r) = {qll_mass(cfg)}")


def build_saturated_density(rho: GridField, cfg: TorusConfig, n_max: int | None = None) -> PhaseSpaceDensity:
    """Fermi sea in levels ``n < q``, ``rho`` in level ``q``, empty above."""
    check_qll_domain(rho, cfg)
    n_max = cfg.q if n_max is None else n_max
    if n_max < cfg.q:
        raise ValueError("phase space must contain level q")
    G = rho.grid.size
    vals = np.zeros((n_max + 1, G, G))
    vals[: cfg.q] = qll_cap(cfg)
    vals[cfg.q] = rho.values
    return PhaseSpaceDensity(n_max, rho.grid, vals, 1)


def _interaction(rho: np.ndarray, w: GridField) -> float:
    r = GridField(w.grid, rho)
    return float(np.sum(convolve_periodic(w, r).values * rho) * w.grid.cell_area)


def semiclassical_energy(m: PhaseSpaceDensity, V: GridField, w: GridField, cfg: TorusConfig) -> float:
    """Kinetic level energies plus potential and interaction by quadrature.

    A one-body ``m`` uses ``m (x) m`` for the interaction; a two-body ``m`` uses
    its marginal for the one-body terms and its pair density for ``w``.
    """
    if V.grid != m.grid or w.grid != m.grid:
        raise ConfigError("potentials must live on the phase-space grid")
    h2 = m.grid.cell_area
    if m.k == 1:
        m1, rho = m, m.values.sum(axis=0)
        inter = _interaction(rho, w)
    else:
        m1 = m.marginal()
        rho = m1.values.sum(axis=0)
        pair = m.pair_density()
        G = m.grid.size
        # int w(R1 - R2) rho(R1, R2): translate w per R1
        idx = np.arange(G)
        dx = (idx[:, None] - idx[None, :]) % G
        wdiff = w.values[dx[:, None, :, None], dx[None, :, None, :]]
        inter = float(h2 * h2 * np.sum(wdiff * pair))
    E = cfg.level_energy(np.arange(m1.n_max + 1))
    kin = float(np.sum(E * m1.level_masses()))
    pot = float(h2 * np.sum(V.values * rho))
    return kin + pot + inter


def kinetic_trace(gamma: DensityMatrix) -> float:
    """``Tr[L gamma]`` from the diagonal of ``gamma`` in the eigenbasis."""
    cfg = gamma.basis.config
    levels = gamma.basis.levels()[: gamma.dim]
    return float(np.real(np.sum(cfg.level_energy(levels) * np.diag(gamma.matrix))))


def kinetic_identity_residual(gamma: DensityMatrix, m: PhaseSpaceDensity, loc: Localizer) -> dict:
    """Compare ``Tr[L gamma]`` with ``int E_n m d eta - (hbar lam)^2 ||grad g||^2 Tr gamma``.

    The residual is the energy carried by Husimi levels above ``m.n_max``.
    """
    cfg = gamma.basis.config
    grad_sq = bump_gradient_norm_sq(cfg.L)
    lhs = kinetic_trace(gamma)
    E = cfg.level_energy(np.arange(m.n_max + 1))
    semiclassical = float(np.sum(E * m.level_masses()))
    ims = (cfg.hbar * loc.lam) ** 2 * grad_sq * gamma.trace()
    rhs = semiclassical - ims
    return {"trace": lhs, "semiclassical": semiclassical, "localization": ims, "residual": lhs - rhs}


# ---------------------------------------------------------------------------
# Mass correction
# ---------------------------------------------------------------------------


def pauli_cap(cfg: TorusConfig) -> float:
    return 1.0 / (2.0 * math.pi * cfg.l_b_sq * cfg.N)


def correction_level(m: PhaseSpaceDensity, cfg: TorusConfig) -> int:
    """``n_1``: smallest integer with ``L^2 n_1 / (2 pi l_b^2 N) > 1``, above the occupied levels."""
    occupied = [n for n in range(m.n_max + 1) if np.any(m.values[n] > 0)]
    n0 = max(occupied) if occupied else 0
    return max(cfg.N // cfg.d + 1, n0 + 1)


def _bisect(f, lo: float, hi: float, max_iter: int = 200) -> float:
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


@dataclass(frozen=True)
class MassCorrection:
    density: PhaseSpaceDensity
    tau: float
    trace: float
    shift_sup: float
    mode: str


def mass_correct(
    m: PhaseSpaceDensity,
    cfg: TorusConfig,
    loc: Localizer,
    tol: float = 1e-12,
) -> MassCorrection:
    """Adjust ``m`` so the upper-symbol trace is 1, keeping ``0 <= m <= cap``.

    Deficit: add ``min(tau, cap - m)`` on levels ``n <= n_1``.  Surplus:
    subtract ``min(m, tau)``.  ``tau`` by bisection.
    """
    if m.k != 1:
        raise ValueError("mass correction acts on one-body symbols")
    cap = pauli_cap(cfg)
    if m.values.min() < 0 or m.values.max() > cap * (1 + 1e-12):
        raise ValueError("input violates 0 <= m <= 1/(2 pi l_b^2 N)")
    n1 = correction_level(m, cfg)
    base = m.with_levels(max(m.n_max, n1))
    weights = 2.0 * math.pi * cfg.l_b_sq * base.grid.cell_area * projector_traces(base.n_max, loc, cfg, base.grid)

    def trace_of(vals):
        return float(np.sum(vals * weights))

    t0 = trace_of(base.values)
    if abs(t0 - 1.0) <= tol:
        return MassCorrection(m, 0.0, t0, 0.0, "unchanged")
    vals0 = base.values
    if t0 < 1.0:
        mask = (np.arange(base.n_max + 1) <= n1)[:, None, None]

        def build(tau):
            return vals0 + np.where(mask, np.minimum(tau, cap - vals0), 0.0)

        if trace_of(build(cap)) < 1.0:
            raise RuntimeError("levels up to n_1 at the Pauli cap cannot reach trace 1")
        mode = "deficit"
        hi = cap
    else:

        def build(tau):
            return vals0 - np.minimum(vals0, tau)

        mode = "surplus"
        hi = float(vals0.max())
    tau = _bisect(lambda t: trace_of(build(t)) - 1.0, 0.0, hi)
    vals = np.clip(build(tau), 0.0, cap)
    out = PhaseSpaceDensity(base.n_max, base.grid, vals, 1)
    return MassCorrection(out, tau, trace_of(vals), float(np.max(np.abs(vals - vals0))), mode)


# ---------------------------------------------------------------------------
# Spatial density of the lower symbol
# ---------------------------------------------------------------------------


def localization_leakage(gamma: DensityMatrix, loc: Localizer) -> np.ndarray:
    """``R -> Tr[gamma g_R (1 - P) g_R]`` with ``P`` the projector onto the orbital set.

    Assembled from the matrix elements ``<psi_a | g_R | psi_c>`` rather than the
    per-level overlaps used by ``lower_symbol``.
    """
    orbitals = gamma.basis
    F = orbitals.samples
    M = gamma.dim
    g_hat = loc.spectrum()
    # Gm[e, a, R] = <psi_e | g_R | psi_a>
    Gm = np.fft.ifft2(np.fft.fft2(np.conj(F)[:, None] * F[None, :M], axes=(2, 3)) * g_hat, axes=(2, 3))
    Gm = Gm.reshape(orbitals.size, M, -1)
    # Tr[gamma g_R P g_R] = sum gamma[a, c] <psi_c|g_R|psi_e> <psi_e|g_R|psi_a>
    inside = np.real(np.einsum("ac,ecr,ear->r", gamma.matrix, np.conj(Gm), Gm, optimize=True))
    rho = gamma.density()
    full = np.fft.ifft2(np.fft.fft2(rho.values) * loc.squared_spectrum()).real
    return full - inside.reshape(full.shape)


def spatial_relation(gamma: DensityMatrix, m: PhaseSpaceDensity, loc: Localizer) -> dict:
    """``rho_m`` against ``g^2 * rho_gamma``; the two differ by the localization leakage."""
    if m.k != 1 or m.n_max != gamma.basis.n_max or m.grid != gamma.basis.grid:
        raise ValueError("symbol must cover every level of the orbital set on its grid")
    rho = gamma.density()
    smoothed = np.fft.ifft2(np.fft.fft2(rho.values) * loc.squared_spectrum()).real
    rho_m = m.spatial_density().values
    leak = localization_leakage(gamma, loc)
    return {
        "raw_gap": float(np.max(np.abs(rho_m - smoothed))),
        "leakage_sup": float(np.max(np.abs(leak))),
        "closed_residual": float(np.max(np.abs(rho_m + leak - smoothed))),
        "scale": float(np.max(np.abs(smoothed))),
    }
