"""Exact quench dynamics in the fixed-N sector of a small open chain.

The Fock basis is ordered descending-lexicographically, e.g. ``(2,0), (1,1),
(0,2)`` for two bosons on two sites.  Time evolution uses Lanczos
exponentiation with adaptive subspace size and sub-stepping.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import CapacityError, ConvergenceError, DomainError
from .maps import CorrelationMap
from .model import INFINITE, BoseHubbardParams, QuenchProtocol, validate

__all__ = [
    "FockBasis",
    "SparseHamiltonian",
    "basis_dimension",
    "build_basis",
    "build_hamiltonian",
    "ground_state",
    "product_state",
    "evolve",
    "expm_krylov",
    "reference_pairs",
    "measure_correlations",
    "QuenchResult",
    "run_quench_ed",
]

DEFAULT_MAX_DIM = 2_000_000


@lru_cache(maxsize=None)
def basis_dimension(M: int, N: int, n_max: int) -> int:
    """Number of occupation vectors of ``N`` bosons on ``M`` sites with ``n_i <= n_max``."""
    if M == 0:
        return 1 if N == 0 else 0
    return sum(basis_dimension(M - 1, N - n, n_max) for n in range(min(N, n_max) + 1))


@dataclass(frozen=True)
class FockBasis:
    M: int
    N: int
    n_max: int
    configs: np.ndarray = field(repr=False)
    _keys_asc: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.configs.shape[0]

    def encode(self, configs) -> np.ndarray:
        configs = np.atleast_2d(np.asarray(configs, dtype=np.int64))
        weights = (self.n_max + 1) ** np.arange(self.M - 1, -1, -1, dtype=np.int64)
        return configs @ weights

    def indices(self, configs) -> np.ndarray:
        """Ordinals of ``configs``; -1 where a configuration is absent."""
        keys = self.encode(configs)
        pos = np.searchsorted(self._keys_asc, keys)
        pos_c = np.minimum(pos, self.dim - 1)
        found = self._keys_asc[pos_c] == keys
        return np.where(found, self.dim - 1 - pos_c, -1)

    def index(self, config) -> int:
        i = int(self.indices([config])[0])
        if i < 0:
            raise KeyError(tuple(config))
        return i


def build_basis(params: BoseHubbardParams) -> FockBasis:
    """Enumerate the truncated fixed-N Fock space."""
    M, N, n_max = params.M, params.N, params.n_max
    if N > M * n_max:
        raise CapacityError(f"N={N} bosons do not fit in M={M} sites with n_max={n_max}")
    rows = np.zeros((1, 0), dtype=np.int16)
    left = np.array([N])
    for site in range(M):
        rest = M - site - 1
        parts, rems = [], []
        for n in range(min(N, n_max) + 1):
            ok = (left >= n) & (left - n <= rest * n_max)
            if np.any(ok):
                sel = rows[ok]
                parts.append(np.hstack([sel, np.full((sel.shape[0], 1), n, dtype=np.int16)]))
                rems.append(left[ok] - n)
        rows = np.vstack(parts)
        left = np.concatenate(rems)
    weights = (n_max + 1) ** np.arange(M - 1, -1, -1, dtype=np.int64)
    keys = rows.astype(np.int64) @ weights
    order = np.argsort(keys)
    keys_asc = keys[order]
    configs = rows[order[::-1]]
    configs.setflags(write=False)
    keys_asc.setflags(write=False)
    return FockBasis(M, N, n_max, configs, keys_asc)


def _hop_map(basis: FockBasis, i: int, j: int):
    """Sources, targets and amplitudes of ``a_i^dagger a_j`` (i != j)."""
    c = basis.configs
    src = np.flatnonzero((c[:, j] > 0) & (c[:, i] < basis.n_max))
    new = c[src].astype(np.int64)
    amp = np.sqrt((new[:, i] + 1.0) * new[:, j])
    new[:, i] += 1
    new[:, j] -= 1
    tgt = basis.indices(new)
    return src, tgt, amp


@dataclass(frozen=True)
class SparseHamiltonian:
    """``H = -J * hopping + U * interaction`` stored as CSR blocks."""

    basis: FockBasis
    J: float
    U: float
    hopping: sp.csr_matrix = field(repr=False)
    interaction: sp.csr_matrix = field(repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def matrix(self) -> sp.csr_matrix:
        return (-self.J * self.hopping + self.U * self.interaction).tocsr()

    def with_U(self, U: float) -> "SparseHamiltonian":
        return SparseHamiltonian(self.basis, self.J, U, self.hopping, self.interaction)

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.matrix @ psi)))


def build_hamiltonian(params: BoseHubbardParams, basis: FockBasis | None = None) -> SparseHamiltonian:
    """Bose-Hubbard Hamiltonian with open boundaries in ``basis``."""
    validate(params)
    if basis is None:
        basis = build_basis(params)
    dim = basis.dim
    rows, cols, vals = [], [], []
    for s in range(params.M - 1):
        src, tgt, amp = _hop_map(basis, s, s + 1)
        rows += [tgt, src]
        cols += [src, tgt]
        vals += [amp, amp]
    if rows:
        hop = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(dim, dim))
    else:
        hop = sp.csr_matrix((dim, dim))
    n = basis.configs.astype(float)
    inter = sp.diags(0.5 * np.sum(n * (n - 1), axis=1), format="csr")
    return SparseHamiltonian(basis, params.J, params.U, hop.tocsr(), inter)


def ground_state(H: SparseHamiltonian, tol: float = 1e-10, maxiter: int = 10_000):
    """Lowest eigenpair ``(E0, psi0)``; the phase makes the largest entry positive.

    Raises
    ------
    ConvergenceError
        If the Lanczos eigensolver does not converge within ``maxiter`` restarts
        or the residual exceeds ``tol``.
    """
    A = H.matrix
    if H.dim <= 400:
        w, v = np.linalg.eigh(A.toarray())
        E, psi = w[0], v[:, 0].astype(complex)
    else:
        v0 = np.random.default_rng(12345).standard_normal(H.dim)
        try:
            w, v = eigsh(A, k=1, which="SA", v0=v0, tol=0, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise ConvergenceError(f"ground state not converged in {maxiter} iterations") from exc
        E, psi = w[0], v[:, 0].astype(complex)
    psi /= np.linalg.norm(psi)
    k = int(np.argmax(np.abs(psi)))
    psi *= np.exp(-1j * np.angle(psi[k]))
    res = np.linalg.norm(A @ psi - E * psi)
    if res > tol * max(1.0, abs(E)):
        raise ConvergenceError(f"ground-state residual {res:.2e} exceeds {tol:.0e}")
    return float(E), psi


def product_state(basis: FockBasis, occupation: int) -> np.ndarray:
    """Fock state with ``occupation`` bosons on every site."""
    if basis.N != occupation * basis.M:
        raise DomainError(f"N={basis.N} is not {occupation} x M={basis.M}")
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index([occupation] * basis.M)] = 1.0
    return psi


def expm_krylov(matvec, psi: np.ndarray, dt: float, tol: float = 1e-12, m_max: int = 40,
                max_substeps: int = 4096):
    """``exp(-i A dt) psi`` for Hermitian ``A`` by Lanczos projection.

    The Krylov space grows until the a-posteriori error estimate drops below
    ``tol``; if ``m_max`` vectors do not suffice the step is halved.

    Raises
    ------
    ConvergenceError
        If more than ``max_substeps`` sub-steps would be needed.
    """
    if dt == 0:
        return psi.copy()
    out = np.asarray(psi, dtype=complex)
    remaining, h, substeps = float(dt), float(dt), 0
    while remaining > 0:
        h = min(h, remaining)
        step = _lanczos_step(matvec, out, h, tol, m_max)
        if step is None:
            h *= 0.5
            substeps += 1
            if substeps > max_substeps:
                raise ConvergenceError("Krylov sub-step cap exceeded")
            continue
        out = step
        remaining -= h
        if remaining < 1e-15 * abs(dt):
            break
    return out


def _lanczos_step(matvec, psi, h, tol, m_max):
    beta0 = np.linalg.norm(psi)
    if beta0 == 0:
        return psi.copy()
    V = [psi / beta0]
    alpha, beta = [], []
    for m in range(1, m_max + 1):
        w = matvec(V[-1])
        a = np.vdot(V[-1], w).real
        w = w - a * V[-1] - (beta[-1] * V[-2] if beta else 0)
        # full reorthogonalisation keeps the projected propagator unitary
        for v in V:
            w -= np.vdot(v, w) * v
        b = np.linalg.norm(w)
        alpha.append(a)
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        ev, U = sla.eigh(T)
        coef = U @ (np.exp(-1j * h * ev) * U[0].conj())
        err = b * abs(coef[-1])
        if b < 1e-14 * max(1.0, abs(a)) or err < tol:
            return beta0 * (np.array(V).T @ coef)
        beta.append(b)
        V.append(w / b)
    return None


def evolve(H: SparseHamiltonian, psi: np.ndarray, dt: float, tol: float = 1e-12) -> np.ndarray:
    """``exp(-i H dt) psi``."""
    A = H.matrix
    return expm_krylov(lambda v: A @ v, psi, dt, tol=tol)


def reference_pairs(M: int, R: int, policy: str = "symmetric") -> list[tuple[int, int]]:
    """Site pairs ``(i, i+R)`` placed symmetrically about the chain centre.

    ``symmetric`` returns the left pair and its mirror image (one pair when
    they coincide); ``left``/``right`` return one of them.
    """
    if not 1 <= R <= M - 1:
        raise DomainError(f"R={R} outside 1..{M - 1}")
    i = (M - 1 - R) // 2
    left = (i, i + R)
    right = (M - 1 - (i + R), M - 1 - i)
    if policy == "left":
        return [left]
    if policy == "right":
        return [right]
    if policy == "symmetric":
        return [left] if left == right else [left, right]
    raise ValueError(f"unknown reference policy {policy!r}")


class _Observables:
    """Pre-computed index maps for the correlators of one basis."""

    def __init__(self, basis: FockBasis, policy: str):
        self.basis = basis
        self.policy = policy
        self.n = basis.configs.astype(float)
        self.R_values = np.arange(1, basis.M)
        self.pairs = {R: reference_pairs(basis.M, R, policy) for R in self.R_values}
        self._hops = {}

    def hop(self, i, j):
        if (i, j) not in self._hops:
            src, tgt, amp = _hop_map(self.basis, i, j)
            self._hops[(i, j)] = (src, tgt, amp)
        return self._hops[(i, j)]

    def one_body(self, psi, i, j) -> complex:
        """``<a_i^dagger a_j>``."""
        src, tgt, amp = self.hop(i, j)
        return complex(np.sum(np.conj(psi[tgt]) * amp * psi[src]))

    def g1(self, psi):
        """Per R: ``<a^dagger_{c+R} a_c>`` for each pair, mirror pairs reflected."""
        M = self.basis.M
        out = []
        for R in self.R_values:
            vals = []
            for i, j in self.pairs[R]:
                if (i, j) == reference_pairs(M, R, "left")[0]:
                    vals.append(self.one_body(psi, j, i))
                else:
                    # mirror image of <a_j^dagger a_i> is <a_{M-1-j}^dagger a_{M-1-i}>
                    vals.append(self.one_body(psi, i, j))
            out.append(vals)
        return out

    def density(self, psi):
        p = np.abs(psi) ** 2
        return p @ self.n, p

    def g2(self, psi):
        nbar, p = self.density(psi)
        out = []
        for R in self.R_values:
            out.append([float(p @ (self.n[:, i] * self.n[:, j]) - nbar[i] * nbar[j])
                        for i, j in self.pairs[R]])
        return out


def measure_correlations(psi: np.ndarray, basis: FockBasis, kind: str,
                         reference_policy: str = "symmetric") -> tuple[np.ndarray, np.ndarray]:
    """Equal-time connected correlator for ``R = 1 .. M-1`` (not yet t=0 subtracted).

    Returns the pair-averaged values and, per R, the largest discrepancy between
    the mirror pairs.
    """
    obs = _Observables(basis, reference_policy)
    vals = obs.g1(psi) if kind == "G1" else obs.g2(psi)
    return _reduce_pairs(vals)


def _reduce_pairs(vals):
    mean = np.array([np.mean(v) for v in vals])
    spread = np.array([np.max(np.abs(np.asarray(v) - np.mean(v))) for v in vals])
    return mean, spread


@dataclass
class QuenchResult:
    """Maps produced by one engine run plus conservation diagnostics."""

    maps: dict
    diagnostics: dict
    manifest: dict


def run_quench_ed(protocol: QuenchProtocol, params: BoseHubbardParams,
                  reference_policy: str = "symmetric", max_dim: int = DEFAULT_MAX_DIM,
                  tol: float = 1e-12) -> QuenchResult:
    """Sudden quench ``u0 -> u1`` evolved exactly; samples at ``protocol.sample_times()``.

    ``params`` fixes the lattice (``M``, ``N``, ``n_max``, ``J``); its ``U`` is
    ignored in favour of ``protocol.u0`` and ``protocol.u1``.
    """
    t_wall = time.perf_counter()
    validate(params)
    dim = basis_dimension(params.M, params.N, params.n_max)
    if dim > max_dim:
        raise CapacityError(f"ED basis dimension {dim} exceeds the cap {max_dim}; "
                            "reduce M or n_max, or use the TEBD engine")
    basis = build_basis(params)
    H = build_hamiltonian(params, basis)
    H1 = H.with_U(protocol.u1 * params.J)
    if protocol.u0 is INFINITE:
        psi = product_state(basis, int(round(protocol.nbar)))
    else:
        _, psi = ground_state(H.with_U(protocol.u0 * params.J))
    obs = _Observables(basis, reference_policy)
    want = protocol.observables
    ref = {}
    if "G1" in want:
        ref["G1"] = _reduce_pairs(obs.g1(psi))[0]
    if "G2" in want:
        ref["G2"] = _reduce_pairs(obs.g2(psi))[0]
    times = protocol.sample_times()
    raw = {k: np.zeros((params.M - 1, times.size), dtype=complex) for k in want}
    spread = {k: 0.0 for k in want}
    E0 = H1.expectation(psi)
    energies, numbers, norms = [], [], []
    A1 = H1.matrix
    t_prev = 0.0
    for it, t in enumerate(times):
        try:
            psi = expm_krylov(lambda v: A1 @ v, psi, t - t_prev, tol=tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"ED evolution failed at step {it + 1} (t={t:.4g}): {exc}") \
                from exc
        t_prev = t
        for k in want:
            vals = obs.g1(psi) if k == "G1" else obs.g2(psi)
            mean, spr = _reduce_pairs(vals)
            raw[k][:, it] = mean
            spread[k] = max(spread[k], float(np.max(spr)))
        nb, _ = obs.density(psi)
        numbers.append(float(np.sum(nb)))
        norms.append(float(np.linalg.norm(psi)))
        energies.append(float(np.real(np.vdot(psi, A1 @ psi))))
    diagnostics = {
        "energy_initial": E0,
        "energy_drift": float(np.max(np.abs(np.array(energies) - E0))) if energies else 0.0,
        "number_drift": float(np.max(np.abs(np.array(numbers) - params.N))),
        "norm_drift": float(np.max(np.abs(np.array(norms) - 1.0))),
        "pair_discrepancy": spread,
    }
    meta = {
        "engine": "ed",
        "params": params.as_dict(),
        "protocol": protocol.as_dict(),
        "basis_dimension": basis.dim,
        "krylov_tol": tol,
        "reference_policy": reference_policy,
        "boundary": "open",
    }
    maps = {}
    R = obs.R_values
    for k in want:
        sub = raw[k] - ref[k][:, None]
        m = dict(meta, kind=k, pair_discrepancy=spread[k])
        if k == "G1":
            maps[k] = CorrelationMap("G1", R, times, sub.real, m, magnitude=np.abs(sub),
                                     raw=raw[k].real)
        else:
            maps[k] = CorrelationMap("G2", R, times, sub.real, m, raw=raw[k].real)
    manifest = dict(meta, diagnostics=diagnostics,
                    wall_time_s=round(time.perf_counter() - t_wall, 3))
    return QuenchResult(maps=maps, diagnostics=diagnostics, manifest=manifest)
