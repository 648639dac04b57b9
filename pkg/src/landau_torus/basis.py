"""Landau-gauge eigenbasis of the magnetic Laplacian on the torus.

Orbitals ``psi_{nl}`` are evaluated from two independent lattice series: the
direct Gaussian-Hermite series in ``y`` and its Poisson-resummed form in
``x``.  All infinite sums are truncated with a certified Gaussian tail bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import hermite as _herm

from .core import ConfigError, Grid, GridField, TorusConfig

MAX_LEVEL = 12
DEFAULT_TOL = 1e-14
DEFAULT_K_MAX = 4096


class TruncationError(RuntimeError):
    """A lattice sum cannot be certified to the requested tolerance."""


class ValidationError(RuntimeError):
    """An orbital-set diagnostic exceeded its tolerance."""


# ---------------------------------------------------------------------------
# Hermite polynomials and functions
# ---------------------------------------------------------------------------


def hermite(n: int, x, form: str = "polynomial"):
    """Physicists' Hermite polynomial ``H_n`` or function ``h_n = H_n e^{-x^2/2}``.

    Uses the three-term recurrence ``H_{n+1} = 2x H_n - 2n H_{n-1}``.
    """
    if n < 0:
        raise ValueError("Hermite index must be non-negative")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if n == 0:
        h = h_prev
    else:
        h = 2.0 * x
        for k in range(1, n):
            h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
    if form == "polynomial":
        return h
    if form == "function":
        return h * np.exp(-0.5 * x * x)
    raise ValueError(f"unknown form {form!r}")


def hermite_norm_sq(n: int) -> float:
    """``||h_n||^2 = sqrt(pi) 2^n n!``."""
    return math.sqrt(math.pi) * 2.0**n * math.factorial(n)


def c_direct(n: int) -> complex:
    """Normalization of the direct series: ``(-i/sqrt 2)^n / (pi^{1/4} sqrt(n!))``."""
    return (-1j / math.sqrt(2.0)) ** n / (math.pi**0.25 * math.sqrt(math.factorial(n)))


def c_poisson(n: int) -> float:
    """Normalization of the Poisson-resummed series.

    Equal to ``c_n sqrt(2 pi) i^n``; the ``i^n`` (not ``(-i)^n``) comes from
    the parity ``H_n(-u) = (-1)^n H_n(u)`` used when flipping the lattice
    index, so no ``(-1)^n`` sign survives.
    """
    return math.pi**0.25 * 2.0 ** ((1.0 - n) / 2.0) / math.sqrt(math.factorial(n))


# ---------------------------------------------------------------------------
# Certified Gaussian tails
# ---------------------------------------------------------------------------


def _monomial_majorant(herm_coeffs: np.ndarray) -> tuple[float, int]:
    """``(C, p)`` with ``|P(u)| <= C max(1, |u|)^p`` for a Hermite series P."""
    poly = _herm.herm2poly(np.asarray(herm_coeffs))
    poly = np.trim_zeros(np.atleast_1d(poly), "b")
    if poly.size == 0:
        return 0.0, 0
    return float(np.sum(np.abs(poly))), poly.size - 1


def _gaussian_integral_tail(p: int, U: float) -> float:
    """Upper bound of ``int_U^inf u^p e^{-u^2/2} du`` (needs ``U^2 > p - 1``)."""
    return U ** (p - 1) * math.exp(-0.5 * U * U) / (1.0 - (p - 1) / (U * U))


def lattice_tail_bound(C: float, p: int, U: float, spacing: float) -> float:
    """Bound on ``sum_{|u_k| > U} C max(1,|u_k|)^p e^{-u_k^2/2}`` over any
    lattice ``u_k = u_0 + k * spacing``; both sides included.

    Valid once ``U >= max(1, sqrt(p))`` where the majorant is decreasing.
    """
    if C == 0.0:
        return 0.0
    one_side = U**p * math.exp(-0.5 * U * U) + _gaussian_integral_tail(p, U) / spacing
    return 2.0 * C * one_side


def lattice_sum_bound(C: float, p: int, spacing: float) -> float:
    """Bound on the full lattice sum ``sum_k C max(1,|u_k|)^p e^{-u_k^2/2}``."""
    if C == 0.0:
        return 0.0
    peak = max(1.0, (p ** (p / 2.0)) * math.exp(-p / 2.0) if p > 0 else 1.0)
    integral = math.sqrt(2.0 * math.pi) + 2.0 ** ((p + 1) / 2.0) * math.gamma((p + 1) / 2.0)
    return C * (4.0 * peak + integral / spacing)


@dataclass(frozen=True)
class TruncationPolicy:
    """Half-width ``K`` of a lattice sum together with its certified tail.

    ``cutoff`` is the Gaussian argument beyond which terms are dropped.
    """

    K: int
    tail_bound: float
    cutoff: float
    spacing: float

    @classmethod
    def certify(
        cls,
        C: float,
        p: int,
        spacing: float,
        tol: float,
        prefactor: float = 1.0,
        K_max: int = DEFAULT_K_MAX,
    ) -> "TruncationPolicy":
        U = max(1.0, math.sqrt(p) + 0.5, math.sqrt(max(p - 1, 0)) + 1.0)
        while True:
            tail = prefactor * lattice_tail_bound(C, p, U, spacing)
            if tail <= tol:
                break
            U += 0.125
            if U > 60.0:
                raise TruncationError(f"cannot reach tail {tol:g} for degree {p}")
        K = int(math.ceil(U / spacing)) + 1
        if K > K_max:
            raise TruncationError(
                f"lattice half-width K={K} exceeds budget {K_max} "
                f"(spacing {spacing:g}, tolerance {tol:g})"
            )
        return cls(K=K, tail_bound=tail, cutoff=U, spacing=spacing)


# ---------------------------------------------------------------------------
# Theta function
# ---------------------------------------------------------------------------


def theta_with_tail(z, tau: complex, tol: float = 1e-16) -> tuple[np.ndarray, float]:
    """``theta(z, tau) = sum_k exp(i pi tau k^2 + 2 i pi k z)`` and its tail bound.

    The tail is relative to the largest term ``exp(pi t s^2)`` where
    ``t = Im tau`` and ``s = Im z / t``; returned as the worst absolute tail
    over the inputs.
    """
    tau = complex(tau)
    t = tau.imag
    if not t > 0:
        raise ValueError(f"theta needs Im(tau) > 0, got {tau}")
    z = np.asarray(z, dtype=complex)
    s = z.imag / t
    K = 1
    while 2.0 * math.exp(-math.pi * t * K * K) * (1.0 + 1.0 / (2.0 * math.pi * t * K)) > tol:
        K += 1
    k0 = -np.rint(s)
    total = np.zeros_like(z)
    for j in range(-K - 1, K + 2):
        k = k0 + j
        total += np.exp(1j * math.pi * tau * k * k + 2j * math.pi * k * z)
    scale = float(np.max(np.exp(math.pi * t * s * s))) if z.size else 1.0
    tail = 2.0 * math.exp(-math.pi * t * K * K) * (1.0 + 1.0 / (2.0 * math.pi * t * K)) * scale
    return total, tail


def theta(z, tau: complex, tol: float = 1e-16):
    return theta_with_tail(z, tau, tol)[0]


# ---------------------------------------------------------------------------
# Orbital evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitalIndex:
    n: int
    l: int

    def check(self, cfg: TorusConfig, n_max: int | None = None) -> None:
        if self.n < 0 or self.n > MAX_LEVEL:
            raise ValueError(f"level {self.n} outside supported range [0, {MAX_LEVEL}]")
        if n_max is not None and self.n > n_max:
            raise ValueError(f"level {self.n} exceeds n_max={n_max}")
        if not 0 <= self.l < cfg.d:
            raise ValueError(f"intra-level index {self.l} outside [0, {cfg.d - 1}]")


def _as_xy(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return z.real.astype(float), z.imag.astype(float)
    if z.shape and z.shape[-1] == 2:
        return z[..., 0].astype(float), z[..., 1].astype(float)
    return z.astype(float), np.zeros_like(z, dtype=float)


def direct_policy(n: int, cfg: TorusConfig, tol: float = DEFAULT_TOL, K_max: int = DEFAULT_K_MAX) -> TruncationPolicy:
    C, p = _monomial_majorant(np.eye(n + 1)[n])
    pref = abs(c_direct(n)) / math.sqrt(cfg.L * cfg.l_b)
    return TruncationPolicy.certify(C, p, cfg.L / cfg.l_b, tol, pref, K_max)


def poisson_policy(n: int, cfg: TorusConfig, tol: float = DEFAULT_TOL, K_max: int = DEFAULT_K_MAX) -> TruncationPolicy:
    C, p = _monomial_majorant(np.eye(n + 1)[n])
    pref = c_poisson(n) * math.sqrt(cfg.l_b) / cfg.L**1.5
    return TruncationPolicy.certify(C, p, cfg.L / (cfg.d * cfg.l_b), tol, pref, K_max)


def _eval_direct(n: int, l: int, x, y, cfg: TorusConfig, policy: TruncationPolicy):
    L, d, lb = cfg.L, cfg.d, cfg.l_b
    y_shift = y + l * L / d
    k0 = -np.rint(y_shift / L)
    total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
    for j in range(-policy.K, policy.K + 1):
        k = k0 + j
        u = (y_shift + k * L) / lb
        total += hermite(n, u, "function") * np.exp(2j * math.pi * k * d * x / L)
    return c_direct(n) / math.sqrt(L * lb) * np.exp(2j * math.pi * l * x / L) * total


def _eval_poisson(n: int, l: int, x, y, cfg: TorusConfig, policy: TruncationPolicy):
    L, d, lb = cfg.L, cfg.d, cfg.l_b
    k0 = -np.rint(x * d / L)
    total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
    for j in range(-policy.K, policy.K + 1):
        k = k0 + j
        u = (x + k * L / d) / lb
        total += hermite(n, u, "function") * np.exp(-2j * math.pi * k * (y / L + l / d))
    pref = c_poisson(n) * math.sqrt(lb) / L**1.5
    return pref * np.exp(-1j * x * y / (lb * lb)) * total


def eigenfunction(
    idx: OrbitalIndex | tuple[int, int],
    z,
    cfg: TorusConfig,
    policy: TruncationPolicy | None = None,
    method: str = "direct",
    tol: float = DEFAULT_TOL,
):
    """``psi_{nl}(z)`` in Landau gauge, ``A = (-y, 0)``.

    ``z`` is complex (``x + iy``) or an array of ``(x, y)`` pairs.  ``method``
    selects the direct series in ``y`` or the Poisson-resummed series in ``x``.
    """
    idx = OrbitalIndex(*idx) if not isinstance(idx, OrbitalIndex) else idx
    idx.check(cfg)
    x, y = _as_xy(z)
    if method == "direct":
        policy = policy or direct_policy(idx.n, cfg, tol)
        out = _eval_direct(idx.n, idx.l, x, y, cfg, policy)
    elif method == "poisson":
        policy = policy or poisson_policy(idx.n, cfg, tol)
        out = _eval_poisson(idx.n, idx.l, x, y, cfg, policy)
    else:
        raise ValueError(f"unknown method {method!r}")
    if policy.tail_bound > max(tol, 1e-14) * 1.0000001:
        raise TruncationError(f"policy tail {policy.tail_bound:g} exceeds tolerance {tol:g}")
    return out


def lll_theta_form(l: int, z, cfg: TorusConfig):
    """Lowest-level orbital through the Jacobi theta function (cross-check only)."""
    x, y = _as_xy(z)
    zc = x + 1j * y
    L, d, lb = cfg.L, cfg.d, cfg.l_b
    pref = math.pi**-0.25 / math.sqrt(L * lb)
    th, _ = theta_with_tail(d * zc / L + 1j * l, 1j * d)
    return pref * np.exp(-math.pi * l * l / d - y * y / (2 * lb * lb) + 2j * math.pi * l * zc / L) * th


# ---------------------------------------------------------------------------
# Ladder operators, applied to each summand of the direct series
# ---------------------------------------------------------------------------
#
# A summand is exp(i kappa_k x) P_k(u) exp(-u^2/2) with u = (y + y_k) / l_b.
# For a summand, i hbar d/dx = -hbar kappa_k and i hbar d/dy acts on P as
# (i hbar / l_b)(P' - u P).  The gauge term -b y = -b (l_b u - y_k) leaves a
# per-summand constant s_k = b y_k - hbar kappa_k, carried symbolically:
# P_k = sum_j s_k^j Q_j(u), with each Q_j a Hermite series.


def _hmulx(c: np.ndarray) -> np.ndarray:
    return _herm.hermmulx(c) if c.size else c


def _hder(c: np.ndarray) -> np.ndarray:
    return _herm.hermder(c) if c.size > 1 else np.zeros(1, dtype=c.dtype)


def _padd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = max(a.size, b.size)
    out = np.zeros(n, dtype=complex)
    out[: a.size] += a
    out[: b.size] += b
    return out


def _pi_x(Q: list[np.ndarray], cfg: TorusConfig) -> list[np.ndarray]:
    out: list[np.ndarray] = [np.zeros(1, dtype=complex) for _ in range(len(Q) + 1)]
    for j, c in enumerate(Q):
        out[j] = _padd(out[j], -cfg.b * cfg.l_b * _hmulx(c))
        out[j + 1] = _padd(out[j + 1], c)
    return out


def _pi_y(Q: list[np.ndarray], cfg: TorusConfig) -> list[np.ndarray]:
    coef = 1j * cfg.hbar / cfg.l_b
    return [coef * _padd(_hder(c), -_hmulx(c)) for c in Q]


def _ladder(Q: list[np.ndarray], cfg: TorusConfig, which: str) -> list[np.ndarray]:
    px = _pi_x(Q, cfg)
    py = _pi_y(Q, cfg)
    py = py + [np.zeros(1, dtype=complex)] * (len(px) - len(py))
    sign = -1j if which == "lower" else 1j
    norm = math.sqrt(2.0 * cfg.hbar_b)
    return [(_padd(a, sign * c)) / norm for a, c in zip(py, px)]


_OPERATORS = ("raise", "lower", "pi_x", "pi_y")


def _apply_symbolic(Q: list[np.ndarray], cfg: TorusConfig, op: str) -> list[np.ndarray]:
    if op == "pi_x":
        return _pi_x(Q, cfg)
    if op == "pi_y":
        return _pi_y(Q, cfg)
    return _ladder(Q, cfg, op)


def apply_operators(
    idx: OrbitalIndex | tuple[int, int],
    z,
    cfg: TorusConfig,
    ops: Sequence[str],
    tol: float = DEFAULT_TOL,
):
    """Apply a word in ``a``, ``a^dagger``, ``pi_x``, ``pi_y`` to ``psi_{nl}`` at ``z``.

    Operators act right-to-left, each differentiating the Gaussian-Hermite
    summands of the direct series in closed form.
    """
    idx = OrbitalIndex(*idx) if not isinstance(idx, OrbitalIndex) else idx
    idx.check(cfg)
    ops = list(ops)
    for op in ops:
        if op not in _OPERATORS:
            raise ValueError(f"unknown operator {op!r}")
    n, l = idx.n, idx.l
    L, d, lb = cfg.L, cfg.d, cfg.l_b
    Q = [np.eye(n + 1, dtype=complex)[n]]
    for op in reversed(ops):
        Q = _apply_symbolic(Q, cfg, op)

    # tail certification with the largest plausible |s_k| folded into C
    x, y = _as_xy(z)
    pref = abs(c_direct(n)) / math.sqrt(L * lb)
    K_guess = direct_policy(n + len(ops), cfg, tol).K + 2
    s_scale = 1.0 + abs(cfg.b) * (K_guess + 1) * L
    C, p = 0.0, 0
    for j, c in enumerate(Q):
        Cj, pj = _monomial_majorant(c)
        C += Cj * s_scale**j
        p = max(p, pj)
    policy = TruncationPolicy.certify(C, p, L / lb, tol, pref)

    y_shift = y + l * L / d
    k0 = -np.rint(y_shift / L)
    total = np.zeros(np.broadcast(x, y).shape, dtype=complex)
    for jk in range(-policy.K, policy.K + 1):
        k = k0 + jk
        y_k = k * L + l * L / d
        kappa = 2.0 * math.pi * (l + k * d) / L
        s_k = cfg.b * y_k - cfg.hbar * kappa
        u = (y + y_k) / lb
        P = np.zeros_like(u, dtype=complex)
        for j, c in enumerate(Q):
            P += s_k**j * _herm.hermval(u, c)
        total += P * np.exp(-0.5 * u * u) * np.exp(1j * kappa * x)
    return c_direct(n) / math.sqrt(L * lb) * total


def apply_ladder(
    idx: OrbitalIndex | tuple[int, int],
    z,
    cfg: TorusConfig,
    which: str | Sequence[str] = "raise",
    tol: float = DEFAULT_TOL,
):
    """Evaluate ``a psi_{nl}``, ``a^dagger psi_{nl}`` or a composition at ``z``.

    ``which`` is ``"raise"``, ``"lower"`` or a sequence of these applied
    right-to-left (``["lower", "raise"]`` means ``a a^dagger``).
    """
    ops = [which] if isinstance(which, str) else list(which)
    for op in ops:
        if op not in ("raise", "lower"):
            raise ValueError(f"unknown ladder operation {op!r}")
    return apply_operators(idx, z, cfg, ops, tol)


def apply_momentum(idx: OrbitalIndex | tuple[int, int], z, cfg: TorusConfig, tol: float = DEFAULT_TOL):
    """Kinetic momentum ``(pi_x, pi_y) psi_{nl}`` at ``z``, stacked on a leading axis."""
    return np.stack([apply_operators(idx, z, cfg, ["pi_x"], tol), apply_operators(idx, z, cfg, ["pi_y"], tol)])


def kinetic_expectation(orbitals: "OrbitalSet", n: int, l: int) -> float:
    """``<psi|L|psi>`` through ``L = 2 hbar b (a^dagger a + 1/2)`` and grid quadrature."""
    cfg = orbitals.config
    a_psi = apply_ladder((n, l), orbitals.grid.points(), cfg, "lower")
    psi = orbitals.samples[orbitals.index(n, l)]
    h2 = orbitals.grid.cell_area
    return 2.0 * cfg.hbar_b * (h2 * float(np.sum(np.abs(a_psi) ** 2)) + 0.5 * h2 * float(np.sum(np.abs(psi) ** 2)))


# ---------------------------------------------------------------------------
# Magnetic translations
# ---------------------------------------------------------------------------


def _gauge_phase(y0: float, x: np.ndarray, cfg: TorusConfig) -> np.ndarray:
    return np.exp(-1j * y0 * x / cfg.l_b_sq)


def magnetic_translate(f: GridField, z0: complex, cfg: TorusConfig, interpolate: bool = False) -> GridField:
    """``tau_{z0} f = exp(i phi_{z0}) f(. - z0)`` with ``phi_{z0} = -y0 x / l_b^2``.

    ``f`` must satisfy the magnetic-periodic conditions; values outside the
    fundamental cell are reconstructed from them.  Off-grid shifts need
    ``interpolate=True`` (band-limited Fourier shift).
    """
    grid = f.grid
    if abs(grid.L - cfg.L) > 1e-12 * cfg.L:
        raise ValueError("field grid period differs from the torus side")
    z0 = complex(z0)
    x0, y0 = z0.real, z0.imag
    h = grid.spacing
    n = grid.size
    x = grid.coords
    i0f, j0f = x0 / h, y0 / h
    on_grid = abs(i0f - round(i0f)) < 1e-9 and abs(j0f - round(j0f)) < 1e-9
    vals = np.asarray(f.values, dtype=complex)
    if on_grid:
        i0, j0 = int(round(i0f)), int(round(j0f))
        src_i = (np.arange(n) - i0) % n
        jj = np.arange(n) - j0
        wraps = np.floor_divide(jj, n)
        src_j = jj - wraps * n
        shifted = vals[np.ix_(src_i, src_j)]
        xs = x[src_i]
        shifted = shifted * np.exp(-1j * wraps[None, :] * cfg.L * xs[:, None] / cfg.l_b_sq)
    elif interpolate:
        Y = x[None, :]
        X = x[:, None]
        g = vals * np.exp(1j * X * Y / cfg.l_b_sq)
        ky = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
        g = np.fft.ifft(np.fft.fft(g, axis=1) * np.exp(-1j * ky * y0)[None, :], axis=1)
        shifted = g * np.exp(-1j * X * (Y - y0) / cfg.l_b_sq)
        kx = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
        shifted = np.fft.ifft(np.fft.fft(shifted, axis=0) * np.exp(-1j * kx * x0)[:, None], axis=0)
    else:
        raise ValueError(f"translation {z0} is not a grid multiple; pass interpolate=True")
    out = shifted * _gauge_phase(y0, x, cfg)[:, None]
    return GridField(grid, out)


# ---------------------------------------------------------------------------
# Orbital sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitalSet:
    """Grid samples of ``psi_{nl}`` for ``n <= n_max``, ordered ``n * d + l``."""

    config: TorusConfig
    n_max: int
    grid: Grid
    samples: np.ndarray = field(repr=False)
    policies: tuple[TruncationPolicy, ...]
    c_n: tuple[complex, ...]
    c_tilde_n: tuple[float, ...]
    report: dict = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return (self.n_max + 1) * self.config.d

    def index(self, n: int, l: int) -> int:
        return n * self.config.d + l

    def level_of(self, a: int) -> int:
        return a // self.config.d

    def levels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_max + 1), self.config.d)

    def orbital(self, n: int, l: int) -> GridField:
        return GridField(self.grid, self.samples[self.index(n, l)])

    def level_samples(self, n: int) -> np.ndarray:
        d = self.config.d
        return self.samples[n * d : (n + 1) * d]

    def flat(self) -> np.ndarray:
        return self.samples.reshape(self.size, -1)

    def gram(self) -> np.ndarray:
        F = self.flat()
        return self.grid.cell_area * (np.conj(F) @ F.T)

    def truncated(self, n_max: int) -> "OrbitalSet":
        if not 0 <= n_max <= self.n_max:
            raise ValueError(f"cannot truncate levels 0..{self.n_max} to {n_max}")
        samples = self.samples[: (n_max + 1) * self.config.d]
        return OrbitalSet(
            self.config, n_max, self.grid, samples, self.policies[: n_max + 1],
            self.c_n[: n_max + 1], self.c_tilde_n[: n_max + 1], dict(self.report),
        )


def _sample_orbitals(cfg: TorusConfig, n_max: int, grid: Grid, tol: float):
    X, Y = grid.mesh()
    d = cfg.d
    samples = np.empty(((n_max + 1) * d, grid.size, grid.size), dtype=complex)
    policies = []
    for n in range(n_max + 1):
        pol = direct_policy(n, cfg, tol)
        policies.append(pol)
        for l in range(d):
            samples[n * d + l] = _eval_direct(n, l, X, Y, cfg, pol)
    samples.flags.writeable = False
    return samples, tuple(policies)


def edge_points(cfg: TorusConfig, count: int = 64) -> np.ndarray:
    return (np.arange(count) + 0.5) * cfg.L / count


def boundary_residual(n: int, l: int, cfg: TorusConfig, count: int = 64, tol: float = DEFAULT_TOL) -> float:
    """Max residual of the Landau-gauge magnetic-periodic conditions at edge points."""
    t = edge_points(cfg, count)
    L = cfg.L
    left = eigenfunction((n, l), 1j * t, cfg, tol=tol)
    right = eigenfunction((n, l), L + 1j * t, cfg, tol=tol)
    bottom = eigenfunction((n, l), t + 0j, cfg, tol=tol)
    top = eigenfunction((n, l), t + 1j * L, cfg, tol=tol)
    r1 = np.max(np.abs(right - left))
    r2 = np.max(np.abs(top - np.exp(-1j * L * t / cfg.l_b_sq) * bottom))
    return float(max(r1, r2))


def build_orbital_set(
    cfg: TorusConfig,
    n_max: int,
    grid: Grid,
    tol: float = 1e-8,
    series_tol: float = DEFAULT_TOL,
    validate: bool = True,
    edge_samples: int = 64,
) -> OrbitalSet:
    """Sample all ``(n_max + 1) d`` orbitals and attach a validation report.

    Diagnostics: Gram deviation (``tol``), boundary residual and ladder residual
    (``max(tol, 1e-10)`` and ``tol``).  Any excess raises ValidationError.
    """
    if n_max < 0 or n_max > MAX_LEVEL:
        raise ConfigError(f"n_max must lie in [0, {MAX_LEVEL}]")
    if abs(grid.L - cfg.L) > 1e-12 * cfg.L:
        raise ConfigError("grid period must equal the torus side L")
    samples, policies = _sample_orbitals(cfg, n_max, grid, series_tol)
    orb = OrbitalSet(
        config=cfg,
        n_max=n_max,
        grid=grid,
        samples=samples,
        policies=policies,
        c_n=tuple(c_direct(n) for n in range(n_max + 1)),
        c_tilde_n=tuple(c_poisson(n) for n in range(n_max + 1)),
    )
    report = {"series_tail": max(p.tail_bound for p in policies)}
    if validate:
        report.update(validate_orbital_set(orb, edge_samples=edge_samples))
        limits = {
            "gram_deviation": tol,
            "boundary_residual": max(tol, 1e-10),
            "ladder_residual": tol,
        }
        for key, lim in limits.items():
            if report[key] > lim:
                raise ValidationError(f"{key} = {report[key]:.3e} exceeds {lim:.1e}")
    object.__setattr__(orb, "report", report)
    return orb


def validate_orbital_set(orb: OrbitalSet, edge_samples: int = 64) -> dict:
    cfg = orb.config
    gram = orb.gram()
    gram_dev = float(np.max(np.abs(gram - np.eye(orb.size))))
    bc = 0.0
    for n in range(orb.n_max + 1):
        for l in range(cfg.d):
            bc = max(bc, boundary_residual(n, l, cfg, edge_samples))
    ladder = 0.0
    pts = orb.grid.points()
    for n in range(orb.n_max):
        for l in range(cfg.d):
            up = apply_ladder((n, l), pts, cfg, "raise")
            ladder = max(ladder, float(np.max(np.abs(up - math.sqrt(n + 1) * orb.samples[orb.index(n + 1, l)]))))
    for l in range(cfg.d):
        ladder = max(ladder, float(np.max(np.abs(apply_ladder((0, l), pts, cfg, "lower")))))
    return {
        "gram_deviation": gram_dev,
        "boundary_residual": bc,
        "ladder_residual": ladder,
        "orbitals_per_level": cfg.d,
    }


def x_period_residual(n: int, l: int, cfg: TorusConfig, points) -> float:
    """Max of ``| |psi(z + L/d)| - |psi(z)| |`` over ``points``."""
    z = np.asarray(points, dtype=complex)
    a = np.abs(eigenfunction((n, l), z, cfg))
    b = np.abs(eigenfunction((n, l), z + cfg.L / cfg.d, cfg))
    return float(np.max(np.abs(a - b)))
