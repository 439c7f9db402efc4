"""Strong-coupling predictions for the density correlations after a Mott quench.

Deep in the Mott phase the connected density correlator is

    G2(R, t) ~ -2 (|g2(R, t)|^2 + |g2bar(R, t)|^2)

with two oscillatory k-integrals over the doublon-holon pair energy ``2E_k``.
Overall proportionality constants are set to 1; only the space-time structure
is meaningful.  The integrands are smooth and 2pi-periodic, so the uniform
(trapezoid) rule converges exponentially.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dispersion import DispersionRelation, Kind, curvature, energy, group_velocity, velocity_set
from .errors import DomainError, NoStationaryPoint, SingularCurvature
from .maps import CorrelationMap
from .model import BoseHubbardParams

__all__ = [
    "Variant",
    "AnalyticMapSpec",
    "g2_integral",
    "g2bar_integral",
    "stationary_phase_g2",
    "stationary_phase_g2bar",
    "asymptotic_g2",
    "predict_map",
]


class Variant(str, enum.Enum):
    G2_FULL = "full"                      # -2(|g2|^2 + g2bar^2)
    G2_LEADING = "leading"                # -2|g2|^2
    G2_SUBLEADING = "subleading"          # -2 g2bar^2
    LEADING_REAL = "leading_real"         # -2 Re^2 g2
    LEADING_IMAG = "leading_imag"         # -2 Im^2 g2
    STATIONARY_PHASE_LEADING = "sp_leading"
    STATIONARY_PHASE_SUBLEADING = "sp_subleading"

    @classmethod
    def parse(cls, text) -> "Variant":
        if isinstance(text, cls):
            return text
        low = str(text).strip().lower()
        for v in cls:
            if low in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown map variant {text!r}")


_PAIR_KINDS = {"pair": Kind.DOUBLON_HOLON_PAIR, "effective": Kind.EFFECTIVE_STRONG_COUPLING}


def _pair_dispersion(params: BoseHubbardParams, dispersion: str = "pair") -> DispersionRelation:
    if params.U <= 0:
        raise DomainError("strong-coupling amplitudes need U > 0")
    try:
        kind = _PAIR_KINDS[dispersion]
    except KeyError:
        raise ValueError(f"dispersion must be 'pair' or 'effective', got {dispersion!r}") from None
    return DispersionRelation(kind, J=params.J, U=params.U, nbar=params.nbar)


def _k_grid(N_k: int) -> np.ndarray:
    if N_k < 2 or N_k % 2:
        raise DomainError(f"N_k must be even and >= 2 (N_k={N_k})")
    return -math.pi + 2 * math.pi * np.arange(N_k) / N_k


def _check_rt(R, t):
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("t > 0 required: the R/t prefactor is singular at t = 0")
    if np.any(R < 0):
        raise DomainError("R >= 0 required")
    return R, t


def _amplitudes(params, R, t, N_k, dispersion, which):
    """Quadrature of g2 (complex) or g2bar (real) on the outer grid R x t."""
    R, t = _check_rt(R, t)
    d = _pair_dispersion(params, dispersion)
    k = _k_grid(N_k)
    E2 = energy(d, k)
    cosR = np.cos(np.outer(np.atleast_1d(R), k))
    ts = np.atleast_1d(t)
    JU = params.J / params.U
    if which == "g2":
        # e^{i(2Et + kR)} + e^{i(2Et - kR)} = 2 e^{i 2Et} cos kR
        phase = np.exp(1j * np.outer(E2, ts))
        out = (2.0 / N_k) * (cosR @ phase)
        out *= JU * np.outer(np.atleast_1d(R), 1.0 / ts)
    else:
        # e^{i(2Et - kR)} + e^{-i(2Et + kR)} = 2 cos(2Et) e^{-ikR}; the odd part cancels
        w = np.sin(k) ** 2
        out = (2.0 / N_k) * (cosR @ (w[:, None] * np.cos(np.outer(E2, ts))))
        out *= JU**2
    return out


def g2_integral(params: BoseHubbardParams, R, t, N_k: int = 4096, dispersion: str = "pair"):
    """Leading strong-coupling amplitude ``(J/U)(R/t) int dk/2pi [e^{i(2Et+kR)} + e^{i(2Et-kR)}]``.

    ``dispersion='effective'`` drops the Mott gap from the pair energy, which
    only removes a global phase ``e^{iUt}``.  Scalars in, scalar out; arrays
    ``R`` and ``t`` give the outer-product grid.
    """
    out = _amplitudes(params, R, t, N_k, dispersion, "g2")
    return complex(out[0, 0]) if np.ndim(R) == 0 and np.ndim(t) == 0 else out


def g2bar_integral(params: BoseHubbardParams, R, t, N_k: int = 4096, dispersion: str = "pair"):
    """Sub-leading amplitude ``(J/U)^2 int dk/2pi sin^2 k [e^{i(2Et-kR)} + e^{-i(2Et+kR)}]``.

    The integral is real; it is returned as a float (or real array).
    """
    out = _amplitudes(params, R, t, N_k, dispersion, "g2bar")
    return float(out[0, 0]) if np.ndim(R) == 0 and np.ndim(t) == 0 else out


def _solve_stationary(d: DispersionRelation, v, k_hi: float, tol: float = 1e-10):
    """Vectorised bisection of ``d(2E)/dk = v`` on the rising branch ``(0, k_hi]``."""
    v = np.asarray(v, dtype=float)
    lo = np.zeros_like(v)
    hi = np.full_like(v, k_hi)
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        below = group_velocity(d, mid) < v
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _stationary_phase(params, R, t, dispersion, curvature_tol):
    """Stationary point, pair energy, velocity and curvature along rays ``R/t``.

    Returns arrays plus masks ``inside`` (a stationary point exists) and
    ``singular`` (vanishing curvature).
    """
    R, t = _check_rt(R, t)
    d = _pair_dispersion(params, dispersion)
    vs = velocity_set(d)
    v_max = 2.0 * vs.V_g_star
    ratio = np.broadcast_to(R / t, np.broadcast_shapes(R.shape, t.shape))
    inside = ratio < v_max
    k_sp = _solve_stationary(d, np.where(inside, ratio, 0.0), vs.k_star)
    k_safe = np.clip(k_sp, 0.0, math.pi * (1 - 1e-15))
    curv = np.where(inside, curvature(d, k_safe), np.nan)
    scale = 2.0 * (2 * params.nbar + 1) * params.J
    singular = inside & (np.abs(curv) < curvature_tol * scale)
    return d, k_sp, curv, inside, singular


def stationary_phase_g2(params: BoseHubbardParams, R, t, curvature_tol: float = 1e-9):
    """Single-branch stationary-phase form of ``g2`` with the gap-free pair energy.

    ``k_sp`` in ``(0, k*]`` solves ``d(2E~)/dk = R/t``; the amplitude is
    ``(J/U) V~_g(k_sp) / sqrt(|d^2(2E~)/dk^2| t)`` with phase
    ``2E~ t - k_sp R + sigma pi/4``.

    Raises
    ------
    NoStationaryPoint
        When ``R/t`` reaches the maximal pair group velocity.
    SingularCurvature
        At the cone edge, where the curvature vanishes.
    """
    d, k_sp, curv, inside, singular = _stationary_phase(params, R, t, "effective", curvature_tol)
    if not np.all(inside):
        raise NoStationaryPoint(f"R/t >= {2 * velocity_set(d).V_g_star:.6g}")
    if np.any(singular):
        raise SingularCurvature("vanishing curvature at the stationary point")
    return _sp_g2_values(params, d, R, t, k_sp, curv)


def _sp_g2_values(params, d, R, t, k_sp, curv):
    R, t = np.asarray(R, float), np.asarray(t, float)
    Vg = 0.5 * group_velocity(d, k_sp)
    phase = energy(d, k_sp) * t - k_sp * R + np.sign(curv) * math.pi / 4
    amp = params.J / params.U * Vg / np.sqrt(np.abs(curv) * t)
    out = amp * np.exp(1j * phase)
    return complex(out) if np.ndim(out) == 0 else out


def stationary_phase_g2bar(params: BoseHubbardParams, R, t, curvature_tol: float = 1e-9):
    """Stationary-phase form of ``g2bar`` on the full pair dispersion (real).

    ``(J/U)^2 sin^2(k_sp) / sqrt(|d^2(2E)/dk^2| t) cos(2E t - k_sp R + sigma' pi/4)``.
    """
    d, k_sp, curv, inside, singular = _stationary_phase(params, R, t, "pair", curvature_tol)
    if not np.all(inside):
        raise NoStationaryPoint(f"R/t >= {2 * velocity_set(d).V_g_star:.6g}")
    if np.any(singular):
        raise SingularCurvature("vanishing curvature at the stationary point")
    return _sp_g2bar_values(params, d, R, t, k_sp, curv)


def _sp_g2bar_values(params, d, R, t, k_sp, curv):
    R, t = np.asarray(R, float), np.asarray(t, float)
    phase = energy(d, k_sp) * t - k_sp * R + np.sign(curv) * math.pi / 4
    out = (params.J / params.U) ** 2 * np.sin(k_sp) ** 2 / np.sqrt(np.abs(curv) * t) \
        * np.cos(phase)
    return float(out) if np.ndim(out) == 0 else out


def asymptotic_g2(params: BoseHubbardParams, R: float, t: float) -> complex:
    """Leading large-t asymptote of ``g2_integral(..., dispersion='effective')``.

    Unlike :func:`stationary_phase_g2` it keeps both stationary points
    ``k_sp`` and ``pi - k_sp`` and the ``1/sqrt(2 pi)`` normalisation, so the
    two agree up to ``O(t^{-3/2})``.
    """
    R, t = float(R), float(t)
    d, k1, curv1, inside, singular = _stationary_phase(params, R, t, "effective", 1e-9)
    if not inside:
        raise NoStationaryPoint(f"R/t >= {2 * velocity_set(d).V_g_star:.6g}")
    if singular:
        raise SingularCurvature("vanishing curvature at the stationary point")
    total = 0.0j
    for k in (float(k1), math.pi - float(k1)):
        c = curvature(d, k)
        phase = energy(d, k) * t - k * R + math.copysign(math.pi / 4, c)
        total += np.exp(1j * phase) / math.sqrt(2 * math.pi * t * abs(c))
    return complex(params.J / params.U * (R / t) * 2.0 * total)


@dataclass(frozen=True)
class AnalyticMapSpec:
    """Grid and variant of a predicted map.

    ``R`` runs over ``0..R_max`` and ``t`` over ``dt, 2dt, ..., t_max``.
    ``dispersion`` selects the pair energy used by the quadrature variants:
    ``pair`` (gapped) or ``effective`` (gap removed).
    """

    params: BoseHubbardParams
    R_max: int
    t_max: float
    dt: float
    N_k: int = 4096
    variant: Variant = Variant.G2_FULL
    dispersion: str = "pair"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.N_k < 256 or self.N_k % 2:
            raise DomainError(f"N_k must be even and >= 256 (N_k={self.N_k})")
        if not self.dt > 0:
            raise DomainError(f"dt > 0 required (dt={self.dt})")
        if int(self.R_max) != self.R_max or self.R_max < 1:
            raise DomainError(f"R_max >= 1 required (R_max={self.R_max})")
        if not self.t_max >= self.dt * (1 - 1e-12):
            raise DomainError("t_max must be at least dt")
        if self.dispersion not in _PAIR_KINDS:
            raise DomainError(f"dispersion must be 'pair' or 'effective' ({self.dispersion!r})")

    def grids(self):
        R = np.arange(0, int(self.R_max) + 1)
        n = max(1, int(math.floor(self.t_max / self.dt + 1e-9)))
        t = self.dt * np.arange(1, n + 1)
        return R, t


def predict_map(spec: AnalyticMapSpec, t_chunk: int = 256) -> CorrelationMap:
    """Fill a predicted ``G2`` map.

    Stationary-phase variants are zero outside their cone; points with a
    singular curvature become NaN (missing) instead of aborting the map.
    """
    p = spec.params
    R, t = spec.grids()
    v = spec.variant
    values = np.empty((R.size, t.size))
    for start in range(0, t.size, t_chunk):
        ts = t[start:start + t_chunk]
        values[:, start:start + t_chunk] = _fill(spec, R, ts)
    meta = dict(spec.meta)
    meta.update({
        "engine": "analytic",
        "variant": v.value,
        "dispersion": spec.dispersion,
        "N_k": spec.N_k,
        "params": p.as_dict(),
        "R_max": int(spec.R_max),
        "t_max": spec.t_max,
        "dt": spec.dt,
        "missing": int(np.isnan(values).sum()),
    })
    return CorrelationMap("G2", R, t, values, meta)


def _fill(spec: AnalyticMapSpec, R, ts):
    p, v = spec.params, spec.variant
    if v in (Variant.STATIONARY_PHASE_LEADING, Variant.STATIONARY_PHASE_SUBLEADING):
        disp = "effective" if v is Variant.STATIONARY_PHASE_LEADING else "pair"
        RR, TT = np.meshgrid(R.astype(float), ts, indexing="ij")
        d, k_sp, curv, inside, singular = _stationary_phase(p, RR, TT, disp, 1e-9)
        out = np.zeros(RR.shape)
        ok = inside & ~singular
        with np.errstate(divide="ignore", invalid="ignore"):
            if v is Variant.STATIONARY_PHASE_LEADING:
                amp = _sp_g2_values(p, d, RR, TT, k_sp, curv)
                vals = -2.0 * np.abs(amp) ** 2
            else:
                amp = _sp_g2bar_values(p, d, RR, TT, k_sp, curv)
                vals = -2.0 * amp**2
        out[ok] = vals[ok]
        out[singular] = np.nan
        return out
    if v in (Variant.G2_FULL, Variant.G2_LEADING, Variant.LEADING_REAL, Variant.LEADING_IMAG):
        g = _amplitudes(p, R, ts, spec.N_k, spec.dispersion, "g2")
    if v in (Variant.G2_FULL, Variant.G2_SUBLEADING):
        gb = _amplitudes(p, R, ts, spec.N_k, spec.dispersion, "g2bar")
    if v is Variant.G2_FULL:
        return -2.0 * (np.abs(g) ** 2 + gb**2)
    if v is Variant.G2_LEADING:
        return -2.0 * np.abs(g) ** 2
    if v is Variant.G2_SUBLEADING:
        return -2.0 * gb**2
    if v is Variant.LEADING_REAL:
        return -2.0 * g.real**2
    return -2.0 * g.imag**2
