"""Physical configuration, periodic grids, quadrature and potential synthesis.

Everything here is a pure function of immutable inputs.  Fields are sampled
on the uniform grid ``x_i = i * L / size`` (axis 0) and ``y_j = j * L / size``
(axis 1), so ``values[i, j]`` is the sample at ``x_i + 1j * y_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np
from scipy import integrate as _quad


class ConfigError(ValueError):
    """Invalid physical or numerical configuration."""


class GridMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Torus configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusConfig:
    """Square magnetic torus with quantized flux.

    ``b`` and ``r`` are derived from ``(L, d, hbar, q, N)`` so that flux
    quantization ``b L^2 = 2 pi d hbar`` and the filling ``N/d = q + r`` hold
    at finite size instead of asymptotically.
    """

    L: float
    d: int
    hbar: float
    q: int
    N: int

    @property
    def b(self) -> float:
        return 2.0 * math.pi * self.d * self.hbar / (self.L * self.L)

    @property
    def l_b_sq(self) -> float:
        return self.hbar / self.b

    @property
    def l_b(self) -> float:
        return math.sqrt(self.l_b_sq)

    @property
    def r_exact(self) -> Fraction:
        return Fraction(self.N, self.d) - self.q

    @property
    def r(self) -> float:
        return float(self.r_exact)

    @property
    def filling(self) -> Fraction:
        """q + r as an exact rational."""
        return Fraction(self.N, self.d)

    @property
    def hbar_b(self) -> float:
        """Lowest Landau level energy."""
        return self.hbar * self.b

    def level_energy(self, n: int | np.ndarray) -> float | np.ndarray:
        return 2.0 * self.hbar_b * (np.asarray(n) + 0.5)

    def as_dict(self) -> dict:
        return {"L": self.L, "d": self.d, "hbar": self.hbar, "q": self.q, "N": self.N}


def build_config(L: float, d: int, hbar: float, q: int, N: int) -> TorusConfig:
    if not (L > 0 and math.isfinite(L)):
        raise ConfigError(f"L must be positive, got {L}")
    if not (hbar > 0 and math.isfinite(hbar)):
        raise ConfigError(f"hbar must be positive, got {hbar}")
    if int(d) != d or d < 1:
        raise ConfigError(f"degeneracy d must be a positive integer, got {d}")
    if int(q) != q or q < 0:
        raise ConfigError(f"q must be a non-negative integer, got {q}")
    if int(N) != N or N < 1:
        raise ConfigError(f"N must be a positive integer, got {N}")
    r = Fraction(int(N), int(d)) - int(q)
    if not (0 <= r < 1):
        raise ConfigError(
            f"filling N/d - q = {r} is outside [0, 1): inconsistent with q={q}"
        )
    return TorusConfig(L=float(L), d=int(d), hbar=float(hbar), q=int(q), N=int(N))


# ---------------------------------------------------------------------------
# Grids and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    size: int
    L: float

    def __post_init__(self):
        if self.size < 2 or self.size & (self.size - 1):
            raise ConfigError(f"grid size must be a power of two, got {self.size}")
        if not self.L > 0:
            raise ConfigError("grid period must be positive")

    @property
    def spacing(self) -> float:
        return self.L / self.size

    @property
    def cell_area(self) -> float:
        return self.spacing * self.spacing

    @property
    def coords(self) -> np.ndarray:
        return np.arange(self.size) * self.spacing

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.coords
        return np.meshgrid(c, c, indexing="ij")

    def points(self) -> np.ndarray:
        """All grid points as complex numbers ``x + iy``, shape (size, size)."""
        X, Y = self.mesh()
        return X + 1j * Y

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer Fourier modes (m1, m2) in FFT order, shape (size, size)."""
        m = np.fft.fftfreq(self.size, d=1.0 / self.size).astype(int)
        return np.meshgrid(m, m, indexing="ij")

    def periodic_distance(self) -> np.ndarray:
        """Torus distance from the origin to every grid point."""
        c = self.coords
        c = np.minimum(c, self.L - c)
        return np.hypot(c[:, None], c[None, :])


@dataclass(frozen=True)
class GridField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.size, self.grid.size):
            raise GridMismatchError(
                f"values shape {v.shape} does not match grid size {self.grid.size}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    def __add__(self, other: "GridField") -> "GridField":
        _check_same_grid(self, other)
        return GridField(self.grid, self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        _check_same_grid(self, other)
        return GridField(self.grid, self.values - other.values)

    def scaled(self, c) -> "GridField":
        return GridField(self.grid, c * self.values)

    @classmethod
    def constant(cls, grid: Grid, value) -> "GridField":
        return cls(grid, np.full((grid.size, grid.size), value))


def _check_same_grid(f: GridField, g: GridField) -> None:
    if f.grid != g.grid:
        raise GridMismatchError(f"grid mismatch: {f.grid} vs {g.grid}")


def integrate(f: GridField):
    """Uniform-weight quadrature, spectrally accurate for smooth periodic data."""
    s = np.sum(f.values)
    return f.grid.cell_area * s


def inner(f: GridField, g: GridField):
    """L^2 inner product, antilinear in the first slot."""
    _check_same_grid(f, g)
    return f.grid.cell_area * np.sum(np.conj(f.values) * g.values)


def l2_norm(f: GridField) -> float:
    return math.sqrt(f.grid.cell_area * float(np.sum(np.abs(f.values) ** 2)))


def convolve_periodic(f: GridField, g: GridField) -> GridField:
    """``(f * g)(x) = \\int_Omega f(x - y) g(y) dy`` on the torus, via FFT."""
    _check_same_grid(f, g)
    out = np.fft.ifft2(np.fft.fft2(f.values) * np.fft.fft2(g.values))
    out *= f.grid.cell_area
    if f.kind == "real" and g.kind == "real":
        out = out.real
    return GridField(f.grid, out)


def torus_distance(x, y, L: float) -> float:
    """Flat torus distance ``min_{r in L Z^2} |x - y + r|``.

    Points are complex numbers or (x, y) pairs.
    """
    x = complex(*x) if not isinstance(x, (complex, float, int)) else complex(x)
    y = complex(*y) if not isinstance(y, (complex, float, int)) else complex(y)
    dz = x - y
    dx = math.remainder(dz.real, L)
    dy = math.remainder(dz.imag, L)
    return math.hypot(dx, dy)


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

POTENTIAL_FAMILIES = ("zero", "cosine", "fourier", "gaussian_periodic")


@dataclass(frozen=True)
class PotentialSpec:
    """Truncated Fourier description of a real potential on the torus.

    Convention: ``V(x) = sum_m c_m exp(2 i pi m.x / L)`` with ``m`` in Z^2.

    * ``zero``
    * ``cosine``: ``v0 (cos(2 pi x/L) + cos(2 pi y/L))``
    * ``fourier``: explicit ``coefficients`` ``{(m1, m2): c}``
    * ``gaussian_periodic``: ``c_m = w0 exp(-sigma^2 |k|^2 / 2)``, k = 2 pi m / L

    ``interaction=True`` marks a two-body kernel ``w(x - y)``; its coefficient
    set must be invariant under the square-lattice point group, our stand-in
    for radial symmetry on the torus.
    """

    family: str
    v0: float = 1.0
    w0: float = 1.0
    sigma: float = 0.1
    coefficients: Mapping[tuple[int, int], complex] | None = None
    interaction: bool = False

    def __post_init__(self):
        if self.family not in POTENTIAL_FAMILIES:
            raise ConfigError(f"unknown potential family {self.family!r}")
        if self.family == "gaussian_periodic" and not self.sigma > 0:
            raise ConfigError("gaussian_periodic needs sigma > 0")
        if self.family == "fourier":
            if not self.coefficients:
                raise ConfigError("fourier potential needs coefficients")
            coeffs = {tuple(int(v) for v in k): complex(c) for k, c in self.coefficients.items()}
            object.__setattr__(self, "coefficients", coeffs)
            _check_hermitian(coeffs)
            if self.interaction:
                _check_lattice_symmetric(coeffs)

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.family == "cosine":
            out["v0"] = self.v0
        elif self.family == "gaussian_periodic":
            out.update(w0=self.w0, sigma=self.sigma)
        elif self.family == "fourier":
            out["coefficients"] = [
                [m1, m2, c.real, c.imag] for (m1, m2), c in sorted(self.coefficients.items())
            ]
        if self.interaction:
            out["interaction"] = True
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "PotentialSpec":
        data = dict(data)
        if "coefficients" in data and data["coefficients"] is not None:
            raw = data["coefficients"]
            if isinstance(raw, Mapping):
                data["coefficients"] = raw
            else:
                data["coefficients"] = {
                    (int(e[0]), int(e[1])): complex(e[2], e[3] if len(e) > 3 else 0.0)
                    for e in raw
                }
        return cls(**data)


def _check_hermitian(coeffs: Mapping[tuple[int, int], complex], tol: float = 1e-14) -> None:
    for (m1, m2), c in coeffs.items():
        partner = coeffs.get((-m1, -m2), 0.0)
        if abs(partner - np.conj(c)) > tol * max(1.0, abs(c)):
            raise ConfigError(
                f"coefficients violate Hermitian symmetry at mode {(m1, m2)}: "
                f"{c} vs conj partner {partner}"
            )


def _check_lattice_symmetric(coeffs: Mapping[tuple[int, int], complex], tol: float = 1e-14) -> None:
    for (m1, m2), c in coeffs.items():
        for s1 in (1, -1):
            for s2 in (1, -1):
                for a, b in ((m1, m2), (m2, m1)):
                    partner = coeffs.get((s1 * a, s2 * b), 0.0)
                    if abs(partner - c) > tol * max(1.0, abs(c)):
                        raise ConfigError(
                            f"interaction coefficients not invariant under the square "
                            f"lattice point group at mode {(m1, m2)}"
                        )


def potential_coefficients(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    """Fourier coefficients ``c_m`` laid out in FFT order on ``grid``."""
    n = grid.size
    C = np.zeros((n, n), dtype=complex)
    if spec.family == "zero":
        return C
    if spec.family == "cosine":
        for m in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            C[m[0] % n, m[1] % n] = 0.5 * spec.v0
        return C
    if spec.family == "gaussian_periodic":
        M1, M2 = grid.wavenumbers()
        k2 = (2.0 * math.pi / grid.L) ** 2 * (M1**2 + M2**2)
        C = spec.w0 * np.exp(-0.5 * spec.sigma**2 * k2) + 0j
        # the Nyquist row/column has no Hermitian partner on the grid
        nyq = n // 2
        C[nyq, :] = 0.0
        C[:, nyq] = 0.0
        return C
    # fourier
    half = n // 2
    for (m1, m2), c in spec.coefficients.items():
        if abs(m1) >= half or abs(m2) >= half:
            raise ConfigError(f"mode {(m1, m2)} is not resolved on a {n}-point grid")
        C[m1 % n, m2 % n] = c
    return C


def synthesize_potential(spec: PotentialSpec, grid: Grid) -> GridField:
    C = potential_coefficients(spec, grid)
    vals = np.fft.ifft2(C) * (grid.size * grid.size)
    return GridField(grid, vals.real.copy())


def fourier_coefficients(f: GridField) -> np.ndarray:
    """Forward transform: coefficients ``c_m`` (FFT order) with ``f = sum c_m e_m``."""
    return np.fft.fft2(f.values) / (f.grid.size * f.grid.size)


# ---------------------------------------------------------------------------
# Smooth radial bump and the localizer profile
# ---------------------------------------------------------------------------


def bump_profile(s: np.ndarray) -> np.ndarray:
    """``exp(-1 / (1 - s^2))`` for ``|s| < 1``, zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def localizer_values(lam: float, grid: Grid) -> np.ndarray:
    """Grid samples of ``g_lambda`` centred at the origin, grid-normalized.

    Support is the ball of radius ``L / (2 lam)``; the discrete L^2 norm is 1.
    When the ball holds a single grid point the result is a discrete delta.
    """
    if lam < 1.0:
        raise ConfigError(f"localizer scale must be >= 1, got {lam}")
    r = grid.periodic_distance()
    vals = bump_profile(2.0 * lam * r / grid.L)
    norm = math.sqrt(grid.cell_area * float(np.sum(vals**2)))
    return vals / norm


def bump_norms(L: float) -> tuple[float, float]:
    """Continuum ``(||g0||^2, ||grad g0||^2)`` of the unnormalized base bump on R^2.

    ``g0(x) = exp(-1/(1 - |2x/L|^2))``; both integrals by 1D radial quadrature.
    """
    R = L / 2.0

    def g(r):
        return math.exp(-1.0 / (1.0 - (r / R) ** 2)) if r < R else 0.0

    def dg(r):
        if r >= R:
            return 0.0
        s = r / R
        return g(r) * (-2.0 * s / (1.0 - s * s) ** 2) / R

    n2, _ = _quad.quad(lambda r: g(r) ** 2 * 2.0 * math.pi * r, 0.0, R, epsabs=0, epsrel=1e-13, limit=200)
    d2, _ = _quad.quad(lambda r: dg(r) ** 2 * 2.0 * math.pi * r, 0.0, R, epsabs=0, epsrel=1e-13, limit=200)
    return n2, d2


def bump_gradient_norm_sq(L: float) -> float:
    """``||grad g||^2`` for the L^2-normalized base bump ``g``."""
    n2, d2 = bump_norms(L)
    return d2 / n2


def mollification_error(spec: PotentialSpec, lam: float, grid: Grid) -> float:
    """``||g_lam^2 * V - V||_{L^2}``, or the two-body analogue for interactions.

    For an interaction the two-body mollifier acts on ``w(x - y)`` as a
    convolution of ``w`` with ``g^2 * g^2`` (g is even), and the norm is taken
    on Omega^2, which is ``L`` times the norm of the reduced one-variable
    function.
    """
    V = potential_coefficients(spec, grid)
    G = np.fft.fft2(localizer_values(lam, grid) ** 2) * grid.cell_area
    mult = G * G if spec.interaction else G
    diff = np.fft.ifft2((mult - 1.0) * V) * (grid.size * grid.size)
    err = math.sqrt(grid.cell_area * float(np.sum(np.abs(diff) ** 2)))
    if spec.interaction:
        err *= grid.L
    return err
