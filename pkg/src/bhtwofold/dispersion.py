"""Excitation spectra of the Bose-Hubbard chain and their characteristic velocities.

Four branches are available:

``FREE``
    tight-binding particle, ``eps_k = 4 J sin^2(k/2)``.
``BOGOLIUBOV``
    weakly interacting superfluid, ``E_k = sqrt(eps_k (eps_k + 2 nbar U))``.
``DOUBLON_HOLON_PAIR``
    Mott-phase pair energy ``2E_k = sqrt([U - 2J(2nbar+1) cos k]^2 + 16 J^2 nbar(nbar+1) sin^2 k)``.
``EFFECTIVE_STRONG_COUPLING``
    the pair energy with the Mott gap removed, ``2E~_k = -2(2nbar+1) J cos k``.

The two pair kinds evaluate (and differentiate) the *pair* energy ``2E_k``;
the single-particle kinds evaluate ``E_k``.  :func:`velocity_set` converts
both to the single-quasiparticle velocities ``V_g*`` and ``V_phi*`` so that
the predicted correlation-edge and extrema velocities are always
``2 V_g*`` and ``2 V_phi*``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError
from .model import BoseHubbardParams

__all__ = [
    "Kind",
    "DispersionRelation",
    "VelocitySet",
    "LiebLinigerParams",
    "energy",
    "group_velocity",
    "curvature",
    "velocity_set",
    "sound_velocity_weak",
    "sound_velocity_strong",
    "lieb_liniger_map",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Kind(str, enum.Enum):
    FREE = "free"
    BOGOLIUBOV = "bogoliubov"
    DOUBLON_HOLON_PAIR = "pair"
    EFFECTIVE_STRONG_COUPLING = "effective"

    @property
    def is_pair(self) -> bool:
        return self in (Kind.DOUBLON_HOLON_PAIR, Kind.EFFECTIVE_STRONG_COUPLING)

    @classmethod
    def parse(cls, text) -> "Kind":
        if isinstance(text, cls):
            return text
        low = str(text).strip().lower()
        for kind in cls:
            if low in (kind.value, kind.name.lower()):
                return kind
        raise ValueError(f"unknown dispersion kind {text!r}")


@dataclass(frozen=True)
class DispersionRelation:
    kind: Kind
    J: float = 1.0
    U: float = 0.0
    nbar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if not self.J > 0 or not self.U >= 0 or not self.nbar >= 0:
            raise DomainError(f"J > 0, U >= 0, nbar >= 0 required, got {self}")

    @classmethod
    def from_params(cls, kind, params: BoseHubbardParams) -> "DispersionRelation":
        return cls(kind, J=params.J, U=params.U, nbar=params.nbar)

    def scaled(self, lam: float) -> "DispersionRelation":
        return DispersionRelation(self.kind, J=lam * self.J, U=lam * self.U, nbar=self.nbar)


@dataclass(frozen=True)
class VelocitySet:
    """Characteristic velocities of one dispersion branch.

    ``V_g_star`` and ``V_phi_star`` are single-quasiparticle velocities; for
    pair kinds they are half the pair-energy slope and half the pair energy
    over momentum at ``k_star``.
    """

    k_star: float
    V_g_star: float
    V_phi_star: float

    @property
    def V_CE_pred(self) -> float:
        return 2.0 * self.V_g_star

    @property
    def V_m_pred(self) -> float:
        return 2.0 * self.V_phi_star

    def as_dict(self) -> dict:
        return {
            "k_star": self.k_star,
            "V_g_star": self.V_g_star,
            "V_phi_star": self.V_phi_star,
            "V_CE_pred": self.V_CE_pred,
            "V_m_pred": self.V_m_pred,
        }


@dataclass(frozen=True)
class LiebLinigerParams:
    gamma: float
    c: float
    rho: float
    m: float
    a: float = 1.0


def _check_k(k, closed: bool = True):
    k = np.asarray(k, dtype=float)
    lim = math.pi * (1 + 1e-12)
    bad = np.abs(k) > lim if closed else np.abs(k) >= math.pi
    if np.any(bad) or np.any(~np.isfinite(k)):
        rng = "[-pi, pi]" if closed else "(-pi, pi)"
        raise DomainError(f"quasimomentum outside {rng}: {k[bad] if k.ndim else k}")
    return k


def _scalar(x, like):
    return float(x) if np.ndim(like) == 0 else x


def energy(d: DispersionRelation, k):
    """Branch energy at quasimomentum ``k`` (pair energy for pair kinds)."""
    k = _check_k(k)
    J, U, n = d.J, d.U, d.nbar
    if d.kind is Kind.FREE:
        out = 4.0 * J * np.sin(k / 2) ** 2
    elif d.kind is Kind.BOGOLIUBOV:
        eps = 4.0 * J * np.sin(k / 2) ** 2
        out = np.sqrt(eps * (eps + 2.0 * n * U))
    elif d.kind is Kind.DOUBLON_HOLON_PAIR:
        out = np.sqrt((U - 2 * J * (2 * n + 1) * np.cos(k)) ** 2
                      + 16 * J**2 * n * (n + 1) * np.sin(k) ** 2)
    else:
        out = -2.0 * (2 * n + 1) * J * np.cos(k)
    return _scalar(out, k)


def group_velocity(d: DispersionRelation, k):
    """Analytic ``dE/dk`` of the evaluated branch (``d(2E)/dk`` for pair kinds).

    At the Bogoliubov zone centre the one-sided slopes are ``+-sqrt(2 nbar U J)``;
    the symmetric value 0 is returned there.
    """
    k = _check_k(k, closed=False)
    J, U, n = d.J, d.U, d.nbar
    if d.kind is Kind.FREE:
        out = 2.0 * J * np.sin(k)
    elif d.kind is Kind.BOGOLIUBOV:
        eps = 4.0 * J * np.sin(k / 2) ** 2
        E = np.sqrt(eps * (eps + 2.0 * n * U))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(E > 0, (eps + n * U) * 2.0 * J * np.sin(k) / E, 0.0)
    elif d.kind is Kind.DOUBLON_HOLON_PAIR:
        a = 2 * J * (2 * n + 1)
        b = 16 * J**2 * n * (n + 1)
        f = (U - a * np.cos(k)) ** 2 + b * np.sin(k) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(f > 0, np.sin(k) * (a * (U - a * np.cos(k)) + b * np.cos(k))
                           / np.sqrt(f), 0.0)
    else:
        out = 2.0 * (2 * n + 1) * J * np.sin(k)
    return _scalar(out, k)


def curvature(d: DispersionRelation, k):
    """Analytic second derivative of the evaluated branch."""
    k = _check_k(k, closed=False)
    J, U, n = d.J, d.U, d.nbar
    if d.kind is Kind.FREE:
        out = 2.0 * J * np.cos(k)
    elif d.kind is Kind.BOGOLIUBOV:
        eps = 4.0 * J * np.sin(k / 2) ** 2
        d1 = 2.0 * J * np.sin(k)
        d2 = 2.0 * J * np.cos(k)
        E = np.sqrt(eps * (eps + 2.0 * n * U))
        # E^2 = eps^2 + 2nU eps  =>  E E'' + E'^2 = (eps + nU) eps'' + eps'^2
        with np.errstate(invalid="ignore", divide="ignore"):
            Ep = (eps + n * U) * d1 / E
            out = np.where(E > 0, ((eps + n * U) * d2 + d1**2 - Ep**2) / E, np.nan)
    elif d.kind is Kind.DOUBLON_HOLON_PAIR:
        a = 2 * J * (2 * n + 1)
        b = 16 * J**2 * n * (n + 1)
        s, c = np.sin(k), np.cos(k)
        f = (U - a * c) ** 2 + b * s**2
        g = s * (a * (U - a * c) + b * c)           # f'/2
        gp = c * (a * (U - a * c) + b * c) + s * (a * a * s - b * s)
        root = np.sqrt(f)
        out = gp / root - g**2 / root**3
    else:
        out = 2.0 * (2 * n + 1) * J * np.cos(k)
    return _scalar(out, k)


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + _GOLDEN * (b - a)
            fe = f(e)
    return 0.5 * (a + b)


def velocity_set(d: DispersionRelation, n_grid: int = 4096, tol: float = 1e-9) -> VelocitySet:
    """Maximum group velocity, its momentum and the phase velocity there.

    ``k_star`` maximises the group velocity over ``(0, pi]``: a uniform scan of
    ``n_grid`` points followed by golden-section refinement of the bracketing
    cell, polished by a root solve on the analytic curvature when it changes
    sign there.
    """
    ks = math.pi * np.arange(1, n_grid + 1) / n_grid
    vg = group_velocity(d, np.minimum(ks, math.pi * (1 - 1e-15)))
    i = int(np.argmax(vg))
    lo = ks[i - 1] if i > 0 else 0.5 * ks[0] * 1e-6
    hi = ks[i + 1] if i + 1 < n_grid else math.pi * (1 - 1e-15)

    def vg_at(k):
        return group_velocity(d, min(k, math.pi * (1 - 1e-15)))

    k_star = _golden_max(vg_at, lo, hi, tol)
    if vg_at(ks[i]) > vg_at(k_star):
        k_star = float(ks[i])
    # comparisons of a flat maximum stall near sqrt(eps); polish on the curvature root
    a, b = max(lo, k_star - 1e-6), min(hi, k_star + 1e-6)
    ca, cb = curvature(d, a), curvature(d, b)
    if np.isfinite(ca) and np.isfinite(cb) and ca > 0 > cb:
        k_star = optimize.brentq(lambda k: curvature(d, k), a, b, xtol=1e-15)
    scale = 0.5 if d.kind.is_pair else 1.0
    V_g = scale * vg_at(k_star)
    V_phi = scale * energy(d, k_star) / k_star
    return VelocitySet(k_star=float(k_star), V_g_star=float(V_g), V_phi_star=float(V_phi))


def sound_velocity_weak(gamma: float, nbar: float, J: float = 1.0) -> float:
    """Sound velocity to lowest order beyond meanfield in the Lieb-Liniger parameter."""
    if gamma < 0:
        raise DomainError(f"gamma >= 0 required (gamma={gamma})")
    g = math.sqrt(gamma)
    return 2.0 * J * nbar * g * (1.0 - g / (4.0 * math.pi))


def sound_velocity_strong(u_over_j: float, nbar: float, J: float = 1.0) -> float:
    """Twice the strong-coupling sound velocity, ``4J sin(pi n)[1 - (8J/U) cos(pi n)]``."""
    if not u_over_j > 0:
        raise DomainError(f"U/J > 0 required (U/J={u_over_j})")
    return 4.0 * J * math.sin(math.pi * nbar) * (1.0 - 8.0 / u_over_j * math.cos(math.pi * nbar))


def lieb_liniger_map(params: BoseHubbardParams) -> LiebLinigerParams:
    """Continuum parameters with ``J = 1/(2m)``, ``U = c/m`` and ``rho = nbar``."""
    if params.nbar == 0:
        raise DomainError("Lieb-Liniger mapping needs nbar > 0")
    m = 1.0 / (2.0 * params.J)
    c = params.U * m
    rho = params.nbar
    return LiebLinigerParams(gamma=c / rho, c=c, rho=rho, m=m)
