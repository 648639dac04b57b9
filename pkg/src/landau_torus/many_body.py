"""Exact diagonalization of the N-fermion Hamiltonian on a truncated Landau basis."""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from itertools import combinations

import numba
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import LinearOperator, eigsh

from .basis import OrbitalSet
from .core import GridField, TorusConfig

DEFAULT_BUDGET = 100_000
DENSE_LIMIT = 2000
SPARSE_LIMIT = 60_000_000


class DimensionBudgetError(RuntimeError):
    pass


class NonConvergenceError(RuntimeError):
    pass


def configure_threads() -> int:
    """Apply ``LANDAU_TORUS_THREADS`` to numba's worker pool; returns the count in use."""
    # the bundled TBB is often too old and numba warns while probing it
    if "NUMBA_THREADING_LAYER" not in os.environ and numba.config.THREADING_LAYER == "default":
        try:
            from numba.np.ufunc import omppool  # noqa: F401

            numba.config.THREADING_LAYER = "omp"
        except ImportError:
            numba.config.THREADING_LAYER = "workqueue"
    env = os.environ.get("LANDAU_TORUS_THREADS")
    if env:
        n = max(1, min(int(env), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
    return numba.get_num_threads()


# ---------------------------------------------------------------------------
# One- and two-body matrix elements
# ---------------------------------------------------------------------------


def one_body_matrix(V: GridField, orbitals: OrbitalSet, tol: float = 1e-10) -> np.ndarray:
    """``<psi_a|V|psi_b>`` by quadrature; Hermitian part returned after a defect check."""
    if V.grid != orbitals.grid:
        raise ValueError("potential and orbitals live on different grids")
    F = orbitals.flat()
    A = orbitals.grid.cell_area * (np.conj(F) @ (V.values.ravel()[None, :] * F).T)
    scale = max(1.0, float(np.max(np.abs(A))))
    defect = float(np.max(np.abs(A - A.conj().T)))
    if defect > tol * scale:
        raise RuntimeError(f"one-body matrix Hermiticity defect {defect:.3e}")
    return 0.5 * (A + A.conj().T)


@dataclass(frozen=True)
class TwoBodyTensor:
    """``W[a, b, c, d] = <psi_a psi_b | w | psi_c psi_d>``."""

    W: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.W.shape[0]

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.W - np.conj(self.W.transpose(2, 3, 0, 1)))))

    def exchange_defect(self) -> float:
        return float(np.max(np.abs(self.W - self.W.transpose(1, 0, 3, 2))))

    def symmetry_flags(self, tol: float = 1e-10) -> dict:
        return {"hermitian": self.hermiticity_defect() <= tol, "exchange": self.exchange_defect() <= tol}


def two_body_tensor(w: GridField, orbitals: OrbitalSet) -> TwoBodyTensor:
    """Pair densities ``conj(psi_a) psi_c`` contracted against ``w`` in Fourier space."""
    if w.grid != orbitals.grid:
        raise ValueError("interaction and orbitals live on different grids")
    M = orbitals.size
    grid = orbitals.grid
    Ng = grid.size * grid.size
    F = orbitals.samples
    w_hat = np.fft.fft2(w.values).ravel()
    # rho_ac = conj(psi_a) psi_c ; P[ac] = fft(rho_ac), Q[ac] = fft(conj(rho_ac))
    P = np.empty((M * M, Ng), dtype=complex)
    Qc = np.empty((M * M, Ng), dtype=complex)
    for a in range(M):
        rho = np.conj(F[a])[None] * F
        P[a * M : (a + 1) * M] = np.fft.fft2(rho, axes=(1, 2)).reshape(M, Ng)
        Qc[a * M : (a + 1) * M] = np.conj(np.fft.fft2(np.conj(rho), axes=(1, 2)).reshape(M, Ng))
    h4 = grid.cell_area**2
    # int rho_ac(x) (w * rho_bd)(x) dx = (h^4 / Ng) sum_k conj(fft(conj rho_ac)) w_hat fft(rho_bd)
    G = (Qc * w_hat[None]) @ P.T * (h4 / Ng)
    W = G.reshape(M, M, M, M).transpose(0, 2, 1, 3)
    return TwoBodyTensor(np.ascontiguousarray(W))


def two_body_tensor_bruteforce(w: GridField, orbitals: OrbitalSet) -> TwoBodyTensor:
    """``O(M^4 n^4)`` double quadrature (small grids only)."""
    grid = orbitals.grid
    n = grid.size
    M = orbitals.size
    F = orbitals.samples.reshape(M, -1)
    idx = np.arange(n)
    dx = (idx[:, None] - idx[None, :]) % n
    wxy = w.values[dx[:, None, :, None], dx[None, :, None, :]].reshape(n * n, n * n)
    h4 = grid.cell_area**2
    W = np.einsum("ax,by,xy,cx,dy->abcd", np.conj(F), np.conj(F), wxy, F, F, optimize=True) * h4
    return TwoBodyTensor(W)


# ---------------------------------------------------------------------------
# Fock space
# ---------------------------------------------------------------------------


def _binomial_table(M: int) -> np.ndarray:
    B = np.zeros((M + 1, M + 2), dtype=np.int64)
    for n in range(M + 1):
        for k in range(min(n, M + 1) + 1):
            B[n, k] = math.comb(n, k)
    return B


@numba.njit(cache=True)
def _rank(mask, binom):
    r = 0
    i = 0
    pos = 0
    while mask:
        if mask & 1:
            i += 1
            r += binom[pos, i]
        mask >>= 1
        pos += 1
    return r


_POP16 = np.array([bin(i).count("1") & 1 for i in range(1 << 16)], dtype=np.int8)


@numba.njit(cache=True)
def _sign_below(mask, j, pop16):
    """``(-1)`` to the number of occupied orbitals below ``j``."""
    below = mask & ((np.int64(1) << j) - 1)
    par = 0
    while below:
        par ^= pop16[below & 0xFFFF]
        below >>= 16
    return 1.0 - 2.0 * par


@numba.njit(cache=True)
def _lookup(mask, binom, table):
    if table.size > 1:
        return np.int64(table[mask])
    return _rank(mask, binom)


RANK_TABLE_MAX_M = 24


def _rank_table(states: np.ndarray, M: int) -> np.ndarray:
    if M > RANK_TABLE_MAX_M:
        return np.zeros(1, dtype=np.int32)
    table = np.full(1 << M, -1, dtype=np.int32)
    table[states] = np.arange(states.size, dtype=np.int32)
    return table


@dataclass(frozen=True)
class FockBasis:
    """All ``N``-subsets of ``M`` orbitals as bitmasks, in increasing integer order."""

    M: int
    N: int
    states: np.ndarray = field(repr=False)
    binom: np.ndarray = field(repr=False)
    # mask -> index for M <= 24, otherwise a dummy and ranks are computed
    table: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.states.size

    def rank(self, mask: int) -> int:
        return int(_rank(np.int64(mask), self.binom))

    def occupations(self, i: int) -> list[int]:
        m = int(self.states[i])
        return [j for j in range(self.M) if m >> j & 1]


def fock_dimension(M: int, N: int) -> int:
    return math.comb(M, N)


def build_fock_basis(M: int, N: int, budget: int = DEFAULT_BUDGET) -> FockBasis:
    if not 1 <= N <= M:
        raise ValueError(f"need 1 <= N <= M, got N={N}, M={M}")
    if M > 62:
        raise ValueError("at most 62 orbitals fit the bitmask representation")
    dim = math.comb(M, N)
    if dim > budget:
        raise DimensionBudgetError(f"C({M},{N}) = {dim} exceeds the budget {budget}")
    states = np.fromiter((sum(1 << j for j in c) for c in combinations(range(M), N)), dtype=np.int64, count=dim)
    states.sort()
    return FockBasis(M, N, states, _binomial_table(M), _rank_table(states, M))


@dataclass(frozen=True)
class FockVector:
    basis: FockBasis
    coefficients: np.ndarray = field(repr=False)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))


def slater_state(basis: FockBasis, U: np.ndarray) -> FockVector:
    """Determinant of the orbitals given by the columns of ``U`` (shape ``M x N``)."""
    if U.shape != (basis.M, basis.N):
        raise ValueError(f"orbital coefficients must have shape {(basis.M, basis.N)}")
    gram = U.conj().T @ U
    if np.max(np.abs(gram - np.eye(basis.N))) > 1e-12:
        raise ValueError("determinant orbitals must be orthonormal")
    coeffs = np.empty(basis.dim, dtype=complex)
    for i in range(basis.dim):
        occ = basis.occupations(i)
        coeffs[i] = np.linalg.det(U[occ, :])
    return FockVector(basis, coeffs)


def occupation_state(basis: FockBasis, occupied) -> FockVector:
    mask = sum(1 << j for j in occupied)
    c = np.zeros(basis.dim, dtype=complex)
    c[basis.rank(mask)] = 1.0
    return FockVector(basis, c)


# ---------------------------------------------------------------------------
# Hamiltonian kernels
# ---------------------------------------------------------------------------


def _pair_tables(M: int):
    pa, pb = np.triu_indices(M, 1)
    index = -np.ones((M, M), dtype=np.int64)
    index[pa, pb] = np.arange(pa.size)
    return pa.astype(np.int64), pb.astype(np.int64), index


@numba.njit(cache=True)
def _diagonal(states, M, h1, A, pair_index):
    dim = states.size
    out = np.zeros(dim)
    for s in range(dim):
        S = states[s]
        acc = 0.0
        for a in range(M):
            if S >> a & 1:
                acc += h1[a, a].real
                for b in range(a + 1, M):
                    if S >> b & 1:
                        p = pair_index[a, b]
                        acc += A[p, p].real
        out[s] = acc
    return out


@numba.njit(cache=True)
def _column_terms(S, M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, targets, amps):
    """All off-diagonal ``(rank(S'), <S'|H|S>)`` generated from state ``S``."""
    n = 0
    # one-body hops c_a^dagger c_b, a != b
    for b in range(M):
        if not (S >> b & 1):
            continue
        s1 = _sign_below(S, b, pop16)
        T = S ^ (np.int64(1) << b)
        for a in range(M):
            if a == b or (T >> a & 1):
                continue
            h = h1[a, b]
            if h == 0:
                continue
            s2 = _sign_below(T, a, pop16)
            targets[n] = _lookup(T | (np.int64(1) << a), binom, table)
            amps[n] = h * s1 * s2
            n += 1
    # two-body c_a^dagger c_b^dagger c_d c_c with a < b, c < d, (a, b) != (c, d)
    for c in range(M):
        if not (S >> c & 1):
            continue
        sc = _sign_below(S, c, pop16)
        T1 = S ^ (np.int64(1) << c)
        for d in range(c + 1, M):
            if not (T1 >> d & 1):
                continue
            sd = _sign_below(T1, d, pop16)
            T2 = T1 ^ (np.int64(1) << d)
            q = c * M + d
            for k in range(pair_ptr[q], pair_ptr[q + 1]):
                p = pair_target[k]
                a = pair_a[p]
                b = pair_b[p]
                if (T2 >> a & 1) or (T2 >> b & 1):
                    continue
                if a == c and b == d:
                    continue
                sb = _sign_below(T2, b, pop16)
                T3 = T2 | (np.int64(1) << b)
                sa = _sign_below(T3, a, pop16)
                targets[n] = _lookup(T3 | (np.int64(1) << a), binom, table)
                amps[n] = pair_amp[k] * sc * sd * sb * sa
                n += 1
    return n


@numba.njit(cache=True, parallel=True)
def _matvec(states, x, diag, M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, cap):
    dim = states.size
    y = np.empty(dim, dtype=np.complex128)
    chunk = 256
    for blk in numba.prange((dim + chunk - 1) // chunk):
        targets = np.empty(cap, dtype=np.int64)
        amps = np.empty(cap, dtype=np.complex128)
        for s in range(blk * chunk, min(dim, (blk + 1) * chunk)):
            n = _column_terms(states[s], M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, targets, amps)
            acc = diag[s] * x[s]
            # gather: (Hx)[s] = sum_t conj(<t|H|s>) x[t]
            for i in range(n):
                acc += np.conj(amps[i]) * x[targets[i]]
            y[s] = acc
    return y


@numba.njit(cache=True, parallel=True)
def _row_counts(states, M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, cap):
    dim = states.size
    counts = np.empty(dim, dtype=np.int64)
    chunk = 256
    for blk in numba.prange((dim + chunk - 1) // chunk):
        targets = np.empty(cap, dtype=np.int64)
        amps = np.empty(cap, dtype=np.complex128)
        for s in range(blk * chunk, min(dim, (blk + 1) * chunk)):
            counts[s] = 1 + _column_terms(states[s], M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, targets, amps)
    return counts


@numba.njit(cache=True, parallel=True)
def _fill_rows(states, diag, indptr, indices, data, M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, cap):
    dim = states.size
    chunk = 256
    for blk in numba.prange((dim + chunk - 1) // chunk):
        targets = np.empty(cap, dtype=np.int64)
        amps = np.empty(cap, dtype=np.complex128)
        for s in range(blk * chunk, min(dim, (blk + 1) * chunk)):
            n = _column_terms(states[s], M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, targets, amps)
            k = indptr[s]
            indices[k] = s
            data[k] = diag[s]
            for i in range(n):
                indices[k + 1 + i] = targets[i]
                data[k + 1 + i] = np.conj(amps[i])


@numba.njit(cache=True)
def _dense(states, diag, M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, cap):
    dim = states.size
    H = np.zeros((dim, dim), dtype=np.complex128)
    targets = np.empty(cap, dtype=np.int64)
    amps = np.empty(cap, dtype=np.complex128)
    for s in range(dim):
        H[s, s] += diag[s]
        n = _column_terms(states[s], M, h1, pair_ptr, pair_target, pair_amp, pair_a, pair_b, binom, table, pop16, targets, amps)
        for i in range(n):
            H[targets[i], s] += amps[i]
    return H


@dataclass(frozen=True)
class Hamiltonian:
    """``sum E_n(a) n_a + sum V_ab c_a^+ c_b + 2/(N-1) * 1/2 sum W_abcd c_a^+ c_b^+ c_d c_c``."""

    basis: FockBasis
    h1: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    pair_index: np.ndarray = field(repr=False)
    diag: np.ndarray = field(repr=False)
    coupling: float
    # pair amplitudes by source pair ``c * M + d``, entries below ``drop_tol * max|A|`` omitted
    pair_ptr: np.ndarray = field(repr=False)
    pair_target: np.ndarray = field(repr=False)
    pair_amp: np.ndarray = field(repr=False)
    dropped: float = 0.0

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def _cap(self) -> int:
        M, N = self.basis.M, self.basis.N
        return max(1, N * (M - N + 1) + math.comb(N, 2) * math.comb(M - N + 2, 2))

    def _kernel_args(self):
        pa, pb, _ = _pair_tables(self.basis.M)
        return (self.basis.M, self.h1, self.pair_ptr, self.pair_target, self.pair_amp, pa, pb, self.basis.binom, self.basis.table, _POP16, self._cap)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.complex128).ravel()
        return _matvec(self.basis.states, x, self.diag, *self._kernel_args())

    def dense(self) -> np.ndarray:
        return _dense(self.basis.states, self.diag, *self._kernel_args())

    def sparse(self, max_entries: int = SPARSE_LIMIT):
        """Row-wise CSR assembly; ``None`` when the entry count exceeds ``max_entries``."""
        args = self._kernel_args()
        counts = _row_counts(self.basis.states, *args)
        total = int(counts.sum())
        if total > max_entries:
            return None
        indptr = np.zeros(self.dim + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.empty(total, dtype=np.int64)
        data = np.empty(total, dtype=np.complex128)
        _fill_rows(self.basis.states, self.diag, indptr, indices, data, *args)
        mat = csr_matrix((data, indices, indptr), shape=(self.dim, self.dim))
        mat.sum_duplicates()
        return mat

    def operator(self) -> LinearOperator:
        return LinearOperator((self.dim, self.dim), matvec=self.matvec, dtype=np.complex128)

    def norm_proxy(self) -> float:
        """A lower bound of ``||H||`` (largest diagonal magnitude)."""
        return float(np.max(np.abs(self.diag)))

    def expectation(self, psi: FockVector) -> float:
        c = psi.coefficients
        return float(np.real(np.vdot(c, self.matvec(c))) / np.vdot(c, c).real)


def kinetic_diagonal(cfg: TorusConfig, M: int) -> np.ndarray:
    levels = np.arange(M) // cfg.d
    return cfg.level_energy(levels)


def build_hamiltonian(
    cfg: TorusConfig,
    n_max: int,
    V_matrix: np.ndarray | None,
    W: TwoBodyTensor | None,
    N: int | None = None,
    budget: int = DEFAULT_BUDGET,
    drop_tol: float = 1e-14,
) -> Hamiltonian:
    N = cfg.N if N is None else N
    M = (n_max + 1) * cfg.d
    basis = build_fock_basis(M, N, budget)
    h1 = np.diag(kinetic_diagonal(cfg, M)).astype(complex)
    if V_matrix is not None:
        if V_matrix.shape != (M, M):
            raise ValueError("one-body matrix has the wrong size")
        h1 = h1 + V_matrix
    pa, pb, pair_index = _pair_tables(M)
    coupling = 2.0 / (N - 1) if N > 1 else 0.0
    if W is not None and N > 1:
        if W.M != M:
            raise ValueError("two-body tensor has the wrong size")
        Wt = W.W
        r, s = pa[:, None], pb[:, None]
        u, v = pa[None, :], pb[None, :]
        A = np.ascontiguousarray(coupling * (Wt[r, s, u, v] - Wt[r, s, v, u]))
    else:
        A = np.zeros((pa.size, pa.size), dtype=complex)
    h1 = np.ascontiguousarray(h1)
    diag = _diagonal(basis.states, M, h1, A, pair_index)
    ptr, target, amp, dropped = _sparse_pairs(A, pa, pb, M, drop_tol)
    return Hamiltonian(basis, h1, A, pair_index, diag, coupling, ptr, target, amp, dropped)


def _sparse_pairs(A: np.ndarray, pa, pb, M: int, drop_tol: float):
    """Columns of ``A`` keyed by ``c * M + d``; returns the largest dropped magnitude too."""
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    keep = np.abs(A) > drop_tol * scale
    ptr = np.zeros(M * M + 1, dtype=np.int64)
    targets, amps = [], []
    for q in range(A.shape[1]):
        rows = np.nonzero(keep[:, q])[0]
        ptr[pa[q] * M + pb[q] + 1] = rows.size
        targets.append(rows)
        amps.append(A[rows, q])
    # pairs are ordered lexicographically, matching c * M + d
    ptr = np.cumsum(ptr)
    target = np.concatenate(targets).astype(np.int64) if targets else np.zeros(0, np.int64)
    amp = np.concatenate(amps).astype(complex) if amps else np.zeros(0, complex)
    dropped = float(np.max(np.abs(A[~keep]))) if (~keep).any() else 0.0
    return ptr, target, np.ascontiguousarray(amp), dropped


def ground_state(
    H: Hamiltonian,
    tol: float = 1e-10,
    dense_limit: int = DENSE_LIMIT,
    seed: int = 7,
    ncv: int = 40,
    lanczos_tol: float = 1e-13,
    max_iter: int = 2000,
) -> tuple[float, FockVector]:
    """Lowest eigenpair; dense below ``dense_limit``, implicitly restarted Lanczos above.

    The residual ``||H v - E v||`` is checked against ``tol * max(1, max|diag H|)``
    whatever the route.
    """
    if H.dim <= dense_limit:
        evals, evecs = np.linalg.eigh(H.dense())
        E, v = float(evals[0]), evecs[:, 0]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.normal(size=H.dim) + 1j * rng.normal(size=H.dim)
        mat = H.sparse()
        op = mat if mat is not None else H.operator()
        try:
            evals, evecs = eigsh(op, k=1, which="SA", v0=v0, ncv=ncv, tol=lanczos_tol, maxiter=max_iter)
        except Exception as exc:  # ARPACK no-convergence
            raise NonConvergenceError(str(exc)) from exc
        E, v = float(evals[0]), evecs[:, 0]
    v = v / np.linalg.norm(v)
    # fix the global phase deterministically
    k = int(np.argmax(np.abs(v)))
    v = v * (abs(v[k]) / v[k])
    resid = float(np.linalg.norm(H.matvec(v) - E * v))
    if resid > tol * max(1.0, H.norm_proxy()):
        raise NonConvergenceError(f"eigen-residual {resid:.3e} above tolerance")
    return E, FockVector(H.basis, v)


# ---------------------------------------------------------------------------
# Reduced densities
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _one_body_correlator(states, psi, M, binom, table, pop16):
    """``D[c, a] = <c_c^dagger c_a>``."""
    D = np.zeros((M, M), dtype=np.complex128)
    for s in range(states.size):
        S = states[s]
        x = psi[s]
        if x == 0:
            continue
        for a in range(M):
            if not (S >> a & 1):
                continue
            sa = _sign_below(S, a, pop16)
            T = S ^ (np.int64(1) << a)
            for c in range(M):
                if T >> c & 1:
                    continue
                sc = _sign_below(T, c, pop16)
                t = _lookup(T | (np.int64(1) << c), binom, table)
                D[c, a] += np.conj(psi[t]) * x * sa * sc
    return D


@numba.njit(cache=True)
def _two_body_correlator(states, psi, M, binom, table, pop16):
    """``D[c, d, a, b] = <c_c^dagger c_d^dagger c_b c_a>`` for all index values."""
    D = np.zeros((M, M, M, M), dtype=np.complex128)
    for s in range(states.size):
        S = states[s]
        x = psi[s]
        if x == 0:
            continue
        for a in range(M):
            if not (S >> a & 1):
                continue
            sa = _sign_below(S, a, pop16)
            T1 = S ^ (np.int64(1) << a)
            for b in range(M):
                if not (T1 >> b & 1):
                    continue
                sb = _sign_below(T1, b, pop16)
                T2 = T1 ^ (np.int64(1) << b)
                for d in range(M):
                    if T2 >> d & 1:
                        continue
                    sd = _sign_below(T2, d, pop16)
                    T3 = T2 | (np.int64(1) << d)
                    for c in range(M):
                        if T3 >> c & 1:
                            continue
                        sc = _sign_below(T3, c, pop16)
                        t = _lookup(T3 | (np.int64(1) << c), binom, table)
                        D[c, d, a, b] += np.conj(psi[t]) * x * sa * sb * sd * sc
    return D


def reduced_density(psi: FockVector, k: int, orbitals: OrbitalSet | None = None):
    """``gamma^(1)[a, c] = <c_c^+ c_a>/N`` or ``gamma^(2)[a,b,c,d] = <c_c^+ c_d^+ c_b c_a>/(N(N-1))``.

    Returns a ``DensityMatrix`` when ``orbitals`` is given, else the array.
    """
    basis = psi.basis
    N = basis.N
    c = np.ascontiguousarray(psi.coefficients, dtype=np.complex128)
    nrm = np.vdot(c, c).real
    if abs(nrm - 1.0) > 1e-10:
        raise ValueError("state must be normalized")
    if k == 1:
        D = _one_body_correlator(basis.states, c, basis.M, basis.binom, basis.table, _POP16)
        mat = D.T / N
    elif k == 2:
        if N < 2:
            raise ValueError("two-body density needs N >= 2")
        D = _two_body_correlator(basis.states, c, basis.M, basis.binom, basis.table, _POP16)
        # D[c, d, a, b] -> gamma[a, b, c, d]
        mat = D.transpose(2, 3, 0, 1) / (N * (N - 1))
    else:
        raise ValueError("k must be 1 or 2")
    if orbitals is None:
        return mat
    from .husimi import DensityMatrix

    return DensityMatrix(orbitals, mat, k)


def partial_trace(gamma2: np.ndarray) -> np.ndarray:
    return np.einsum("abcb->ac", gamma2)


def pauli_bound(N: int, k: int) -> float:
    return math.factorial(k) * math.factorial(N - k) / math.factorial(N)


# ---------------------------------------------------------------------------
# Hartree-Fock and Wick
# ---------------------------------------------------------------------------


def hartree_fock_pair(gamma: np.ndarray, N: int) -> np.ndarray:
    """``N/(N-1) (1 - Ex) gamma (x) gamma`` as ``[a, b, c, d]``."""
    direct = np.einsum("ac,bd->abcd", gamma, gamma)
    exchange = np.einsum("ad,bc->abcd", gamma, gamma)
    return N / (N - 1) * (direct - exchange)


def exchange_trace(gamma: np.ndarray) -> complex:
    """``Tr[Ex gamma (x) gamma]`` by explicit construction of the swapped tensor."""
    M = gamma.shape[0]
    prod = np.einsum("ac,bd->abcd", gamma, gamma)
    swapped = prod.transpose(1, 0, 2, 3)  # Ex acting on the left (bra) factors
    return complex(np.trace(swapped.reshape(M * M, M * M)))


def one_body_energy(gamma: np.ndarray, cfg: TorusConfig, V_matrix: np.ndarray | None) -> float:
    M = gamma.shape[0]
    h1 = np.diag(kinetic_diagonal(cfg, M)).astype(complex)
    if V_matrix is not None:
        h1 = h1 + V_matrix
    return float(np.real(np.trace(h1 @ gamma)))


def interaction_energy(gamma2: np.ndarray, W: TwoBodyTensor | None) -> float:
    """``Tr[w gamma2] = sum W[a,b,c,d] gamma2[c,d,a,b]``."""
    if W is None:
        return 0.0
    return float(np.real(np.einsum("abcd,cdab->", W.W, gamma2)))


def hartree_fock_energy(
    gamma: np.ndarray,
    cfg: TorusConfig,
    V_matrix: np.ndarray | None,
    W: TwoBodyTensor | None,
    N: int,
    tol: float = 1e-10,
) -> float:
    tr = np.trace(gamma).real
    if abs(tr - 1.0) > tol:
        raise ValueError(f"HF density must have unit trace, got {tr}")
    ev = np.linalg.eigvalsh(0.5 * (gamma + gamma.conj().T))
    if ev.min() < -tol or ev.max() > 1.0 / N + tol:
        raise ValueError("HF density violates 0 <= gamma <= 1/N")
    e = one_body_energy(gamma, cfg, V_matrix)
    if W is not None and N > 1:
        e += interaction_energy(hartree_fock_pair(gamma, N), W)
    return e


def wick_check(U: np.ndarray, M: int | None = None) -> float:
    """Max entry gap between the correlator two-body density of a determinant
    and ``N/(N-1)(1 - Ex) gamma^(x2)``.
    """
    M = U.shape[0] if M is None else M
    N = U.shape[1]
    if N < 2:
        raise ValueError("Wick check needs N >= 2")
    basis = build_fock_basis(M, N)
    psi = slater_state(basis, U)
    g1 = reduced_density(psi, 1)
    g2 = reduced_density(psi, 2)
    return float(np.max(np.abs(g2 - hartree_fock_pair(g1, N))))


def random_orthonormal(M: int, N: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.normal(size=(M, N)) + 1j * rng.normal(size=(M, N))
    Q, _ = np.linalg.qr(X)
    return Q


# ---------------------------------------------------------------------------
# Ground-state persistence
# ---------------------------------------------------------------------------

_MAGIC = b"LTGS"
_HEADER = struct.Struct("<4sIIIQ32s")


def orbital_order_hash(d: int, n_max: int) -> bytes:
    text = f"index=n*d+l;d={d};n_max={n_max};states=colex"
    return hashlib.sha256(text.encode()).digest()


def ground_state_bytes(psi: FockVector, d: int, n_max: int) -> bytes:
    """Header ``<magic, version, M, N, dim, sha256(orbital order)>`` then complex128 LE."""
    b = psi.basis
    header = _HEADER.pack(_MAGIC, 1, b.M, b.N, b.dim, orbital_order_hash(d, n_max))
    return header + np.ascontiguousarray(psi.coefficients, dtype="<c16").tobytes()


def write_ground_state(path, psi: FockVector, d: int, n_max: int) -> None:
    with open(path, "wb") as fh:
        fh.write(ground_state_bytes(psi, d, n_max))


def read_ground_state(path, d: int, n_max: int) -> FockVector:
    with open(path, "rb") as fh:
        magic, version, M, N, dim, digest = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != 1:
            raise ValueError("not a ground-state file")
        if digest != orbital_order_hash(d, n_max):
            raise ValueError("orbital order of the file differs from the requested basis")
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != dim:
        raise ValueError("truncated ground-state payload")
    basis = build_fock_basis(M, N, budget=max(dim, DEFAULT_BUDGET))
    return FockVector(basis, data.astype(complex))


# ---------------------------------------------------------------------------
# Mean-field trend study
# ---------------------------------------------------------------------------


def _fitting_levels(d: int, N: int, n_max: int, q: int, budget: int) -> int:
    n = n_max
    while n > q and math.comb((n + 1) * d, N) > budget:
        n -= 1
    if math.comb((n + 1) * d, N) > budget:
        raise DimensionBudgetError(f"(d={d}, N={N}) does not fit the budget even with n_max={n}")
    return n


def _ground_energy(cfg, n_max, orbitals, V, w, budget):
    sub = orbitals.truncated(n_max)
    Vm = one_body_matrix(V, sub)
    W = two_body_tensor(w, sub)
    H = build_hamiltonian(cfg, n_max, Vm, W, budget=budget)
    E, psi = ground_state(H)
    return E, psi, Vm, W


def energy_asymptotics_study(
    sweep,
    q: int,
    V_spec,
    w_spec,
    n_max: int | None = None,
    L: float = 1.0,
    hbar: float = 1.0,
    grid_size: int = 64,
    budget: int = DEFAULT_BUDGET,
    husimi_levels: int | None = None,
    lam: float = 1.0,
    qll_tol: float = 1e-10,
) -> list[dict]:
    """Ground energy per particle against the filled-level plus qLL prediction.

    ``n_max`` is lowered when ``C((n_max+1) d, N)`` exceeds ``budget``; the
    truncation bias ``(E(n_max) - E(n_max - 1))/N`` is reported for every row.
    """
    from fractions import Fraction

    from .core import Grid, synthesize_potential
    from .basis import build_orbital_set
    from .husimi import DensityMatrix, lower_symbol
    from .projectors import build_localizer
    from .qll import build_qll_problem, filled_level_constants, minimize_qll

    n_max = q + 2 if n_max is None else n_max
    husimi_levels = q + 2 if husimi_levels is None else husimi_levels
    rs = {Fraction(N, d) - q for d, N in sweep}
    if len(rs) != 1:
        raise ValueError(f"sweep mixes fillings: r in {sorted(rs)}")
    grid = Grid(grid_size, L)
    V = synthesize_potential(V_spec, grid)
    w = synthesize_potential(w_spec, grid)
    loc = build_localizer(lam, grid)
    rows = []
    qll_cache = None
    for d, N in sweep:
        cfg = _study_config(L, d, hbar, q, N)
        n_used = _fitting_levels(d, N, n_max, q, budget)
        orbitals = build_orbital_set(cfg, max(n_used, husimi_levels), grid)
        E, psi, Vm, W = _ground_energy(cfg, n_used, orbitals, V, w, budget)
        if n_used - 1 >= q and N <= n_used * d:
            E_low = _ground_energy(cfg, n_used - 1, orbitals, V, w, budget)[0]
            bias = (E - E_low) / N
        else:
            bias = float("nan")
        E_qr, EV, Ew = filled_level_constants(cfg, V, w)
        if qll_cache is None:
            prob = build_qll_problem(cfg, V, w)
            sol = minimize_qll(prob, tol=qll_tol)
            if not sol.converged:
                raise NonConvergenceError(f"qLL solver stopped at residual {sol.residual:.3e}")
            qll_cache = sol
        rho_star = qll_cache.rho
        prediction = cfg.hbar_b * E_qr + EV + Ew + qll_cache.energy
        g1 = reduced_density(psi, 1)
        gamma = DensityMatrix(orbitals, g1, 1)
        rho1 = gamma.density().values
        target = q / (L * L * (q + cfg.r)) + rho_star.values
        l1 = grid.cell_area * float(np.sum(np.abs(rho1 - target)))
        masses = lower_symbol(gamma, loc, husimi_levels).level_masses()
        occ = np.array([np.real(np.trace(g1[n * d : (n + 1) * d, n * d : (n + 1) * d])) for n in range(n_used + 1)])
        row = {
            "d": d,
            "N": N,
            "n_max": n_used,
            "dim": math.comb((n_used + 1) * d, N),
            "l_b": cfg.l_b,
            "hbar_b": cfg.hbar_b,
            "energy_per_particle": E / N,
            "prediction": prediction,
            "gap": E / N - prediction,
            "abs_gap": abs(E / N - prediction),
            "truncation_bias": bias,
            "E_qr": E_qr,
            "E_V": EV,
            "E_w": Ew,
            "E_qLL": qll_cache.energy,
            "density_l1": l1,
            "V_sup_over_hbar_b": float(np.max(np.abs(V.values))) / cfg.hbar_b,
            "w_sup_over_hbar_b": float(np.max(np.abs(w.values))) / cfg.hbar_b,
            "filled_target": q / (q + cfg.r),
            "husimi_filled": float(np.sum(masses[:q])),
            "husimi_partial": float(masses[q]),
            "husimi_above": float(np.sum(masses[q + 1 :])),
            "occupation_filled": float(np.sum(occ[:q])),
            "occupation_above": float(np.sum(occ[q + 1 :])),
        }
        for n, m in enumerate(masses):
            row[f"husimi_level_{n}"] = float(m)
        rows.append(row)
    return rows


def _study_config(L, d, hbar, q, N):
    from .core import build_config

    return build_config(L, d, hbar, q, N)
