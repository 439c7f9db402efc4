"""Velocity extraction from space-time correlation maps.

Two features are measured.  The correlation edge (CE) comes from per-R
activation times, and the extrema velocity from ridges of local extrema.
Every detector normalises per row (or per column), so results do not change
when a map is multiplied by a positive constant.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dispersion import VelocitySet
from .errors import EmptySignal, InsufficientPoints
from .maps import CorrelationMap, to_jsonable

__all__ = [
    "Method",
    "VelocityFit",
    "Ridge",
    "TwofoldReport",
    "activation_times",
    "extrema_ridges",
    "fit_velocity",
    "default_window",
    "twofold_report",
]

#: Rows whose largest |G| falls below this are treated as empty.
NOISE_FLOOR = 1e-10


class Method(str, enum.Enum):
    ACTIVATION = "ACTIVATION"
    RIDGE = "RIDGE"


@dataclass(frozen=True)
class VelocityFit:
    """Least-squares fit ``R = velocity * t + intercept``."""

    velocity: float
    intercept: float
    stderr: float
    n_points: int
    residual_rms: float
    method: Method
    window: tuple[float, float]

    def as_dict(self) -> dict:
        return {"velocity": self.velocity, "intercept": self.intercept, "stderr": self.stderr,
                "n_points": self.n_points, "residual_rms": self.residual_rms,
                "method": self.method.value, "window": list(self.window)}


@dataclass(frozen=True)
class Ridge:
    """Chain of linked extrema; ``points`` is an ``(n, 2)`` array of ``(R, t)``."""

    points: np.ndarray
    polarity: str  # "max" or "min"

    def __len__(self) -> int:
        return len(self.points)


def _check_eta(eta):
    if not 0 < eta < 1:
        raise ValueError(f"0 < eta < 1 required (eta={eta})")


def activation_times(cmap: CorrelationMap, eta: float = 0.1,
                     noise_floor: float = NOISE_FLOOR) -> np.ndarray:
    """Per-R activation times ``t*(R)`` as an ``(n, 2)`` array of ``(R, t*)``.

    ``t*`` is where ``|G(R, t)|`` first reaches ``eta * max_t |G(R, t)|``,
    linearly interpolated between the bracketing samples.  Missing samples
    are ignored.

    Raises
    ------
    EmptySignal
        If no row rises above ``noise_floor``.
    """
    _check_eta(eta)
    t = cmap.t_values
    out = []
    for R, row in zip(cmap.R_values, cmap.values):
        ok = ~np.isnan(row)
        a = np.abs(row[ok])
        ts = t[ok]
        if a.size == 0:
            continue
        top = a.max()
        if not top > noise_floor:
            continue
        thr = eta * top
        i = int(np.argmax(a >= thr))
        if i == 0:
            # already above threshold at the first sample; G -> 0 as t -> 0
            t_star = ts[0] * thr / a[0]
        else:
            t0, t1, a0, a1 = ts[i - 1], ts[i], a[i - 1], a[i]
            t_star = t0 + (thr - a0) / (a1 - a0) * (t1 - t0)
        out.append((float(R), float(t_star)))
    if not out:
        raise EmptySignal("no row of the map exceeds the noise floor")
    return np.array(out)


_SILENT = 1e-12


def _line_extrema(pos, vals, polarity, rel_floor):
    """Refined extrema of one line: list of ``(position, sign)``."""
    found = []
    ok = ~np.isnan(vals)
    if ok.sum() < 3:
        return found
    top = np.nanmax(np.abs(vals))
    for i in range(1, len(vals) - 1):
        v0, v1, v2 = vals[i - 1], vals[i], vals[i + 1]
        if np.isnan(v0) or np.isnan(v1) or np.isnan(v2):
            continue
        if abs(v1) < rel_floor * top:
            continue
        # one silent neighbour means a hard edge, not an extremum; a sample
        # between two silent ones is a resolved stripe and is kept
        if (abs(v0) <= _SILENT * top) != (abs(v2) <= _SILENT * top):
            continue
        if v1 > v0 and v1 >= v2:
            sign = "max"
        elif v1 < v0 and v1 <= v2:
            sign = "min"
        else:
            continue
        if polarity != "both" and polarity != sign:
            continue
        # vertex of the parabola through the three samples
        x0, x1, x2 = pos[i - 1], pos[i], pos[i + 1]
        d01 = (v1 - v0) / (x1 - x0)
        d12 = (v2 - v1) / (x2 - x1)
        curv = (d12 - d01) / (x2 - x0)
        if curv == 0:
            x = x1
        else:
            x = 0.5 * (x0 + x1) - d01 / (2 * curv)
            x = min(max(x, x0), x2)
        found.append((float(x), sign))
    return found


def extrema_ridges(cmap: CorrelationMap, axis: str = "t", polarity: str = "both",
                   gate: float | None = None, min_points: int = 5,
                   rel_floor: float = 1e-2, noise_floor: float = NOISE_FLOOR) -> list[Ridge]:
    """Ridges of local extrema.

    With ``axis='t'`` extrema are located along ``t`` in each row ``R`` and
    linked across adjacent rows; ``axis='R'`` locates them along ``R`` at each
    time and links across adjacent times, which is the right choice for
    ridges that barely move in ``R``.  Linking picks the nearest same-polarity
    extremum to the ridge's extrapolated position within ``gate`` (default
    half the median spacing between neighbouring extrema).  Extrema weaker
    than ``rel_floor`` times their line maximum are ignored.
    """
    if axis not in ("t", "R"):
        raise ValueError(f"axis must be 't' or 'R', got {axis!r}")
    if polarity not in ("both", "max", "min"):
        raise ValueError(f"polarity must be both, max or min, got {polarity!r}")
    if cmap.t_values.size < 3:
        raise InsufficientPoints("extrema need at least 3 time samples")
    if axis == "t":
        lines, pos, A = cmap.R_values.astype(float), cmap.t_values, cmap.values
    else:
        lines, pos, A = cmap.t_values, cmap.R_values.astype(float), cmap.values.T

    per_line = []
    for u, vals in zip(lines, A):
        if not np.nanmax(np.abs(vals), initial=0.0) > noise_floor:
            per_line.append((u, []))
            continue
        per_line.append((u, _line_extrema(pos, vals, polarity, rel_floor)))

    if gate is None:
        gaps = [np.diff(sorted(x for x, _ in ex)) for _, ex in per_line if len(ex) > 1]
        gaps = np.concatenate(gaps) if gaps else np.array([])
        gate = 0.5 * float(np.median(gaps)) if gaps.size else float(np.ptp(pos))

    finished, active = [], []
    prev_u = None
    for u, ex in per_line:
        if not ex:
            finished += active
            active, prev_u = [], None
            continue
        next_active = []
        taken = set()
        if prev_u is not None:
            cands = []
            for ri, r in enumerate(active):
                pred = r["x"][-1]
                if len(r["x"]) >= 2:
                    pred += (r["x"][-1] - r["x"][-2]) / (r["u"][-1] - r["u"][-2]) * (u - r["u"][-1])
                for ei, (x, s) in enumerate(ex):
                    if s == r["sign"] and abs(x - pred) <= gate:
                        cands.append((abs(x - pred), ri, ei))
            used = set()
            for _, ri, ei in sorted(cands):
                if ri in used or ei in taken:
                    continue
                used.add(ri)
                taken.add(ei)
                active[ri]["u"].append(u)
                active[ri]["x"].append(ex[ei][0])
                next_active.append(active[ri])
            finished += [r for i, r in enumerate(active) if i not in used]
        for ei, (x, s) in enumerate(ex):
            if ei not in taken:
                next_active.append({"u": [u], "x": [x], "sign": s})
        active, prev_u = next_active, u
    finished += active

    ridges = []
    for r in finished:
        if len(r["u"]) < min_points:
            continue
        if axis == "t":
            pts = np.column_stack([r["u"], r["x"]])
        else:
            pts = np.column_stack([r["x"], r["u"]])
        ridges.append(Ridge(points=pts, polarity=r["sign"]))
    ridges.sort(key=lambda r: (r.points[0, 0], r.points[0, 1]))
    return ridges


def default_window(cmap: CorrelationMap) -> tuple[float, float]:
    """Boundary exclusion window for engine maps, the full R range otherwise.

    For pairs centred in an open chain of ``M`` sites the first reflected
    signal arrives near ``t = M / V_CE`` whatever ``R``, while the front
    reaches ``R`` at ``R / V_CE``; rows up to ``M - q`` with ``q = M // 4``
    are activated before that.  Rows below ``min(4, q)`` are dominated by
    the initial transient.
    """
    M = cmap.metadata.get("params", {}).get("M") if isinstance(cmap.metadata, dict) else None
    engine = cmap.metadata.get("engine", "")
    if engine in ("ed", "tebd") and M:
        q = max(1, int(M) // 4)
        return (float(min(4, q)), float(M - q))
    return (float(cmap.R_values.min()), float(cmap.R_values.max()))


def fit_velocity(points, window: tuple[float, float] | None = None,
                 method: Method = Method.ACTIVATION) -> VelocityFit:
    """Ordinary least squares of ``R`` on ``t`` over points inside ``window``.

    Raises
    ------
    InsufficientPoints
        Fewer than 3 points in the window, or no spread in ``t``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if window is None:
        window = (-math.inf, math.inf)
    lo, hi = window
    pts = pts[(pts[:, 0] >= lo) & (pts[:, 0] <= hi)]
    if len(pts) < 3:
        raise InsufficientPoints(f"{len(pts)} points inside window {window}; need 3")
    R, t = pts[:, 0], pts[:, 1]
    if np.ptp(t) == 0:
        raise InsufficientPoints("all points share one time; slope undefined")
    res = stats.linregress(t, R)
    resid = R - (res.slope * t + res.intercept)
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return VelocityFit(velocity=float(res.slope), intercept=float(res.intercept),
                       stderr=max(stderr, 0.0), n_points=len(pts),
                       residual_rms=float(np.sqrt(np.mean(resid**2))),
                       method=Method(method), window=(float(lo), float(hi)))


@dataclass
class TwofoldReport:
    kind: str
    eta: float
    window: tuple[float, float]
    ce: VelocityFit
    ridge_fits: list = field(default_factory=list)   # dicts: polarity, delay, fit
    used_ridges: list = field(default_factory=list)
    V_m: float | None = None
    V_m_err: float | None = None
    prediction: VelocitySet | None = None
    flags: list = field(default_factory=list)
    eta_scan: list = field(default_factory=list)
    ridge_axis: str = "t"

    @property
    def V_CE(self) -> float:
        return self.ce.velocity

    @property
    def single_cone(self) -> bool:
        return "SINGLE_CONE" in self.flags

    def deviations(self) -> dict:
        if self.prediction is None:
            return {}
        out = {"V_CE": self.V_CE / self.prediction.V_CE_pred - 1.0}
        if self.V_m is not None and self.prediction.V_m_pred != 0:
            out["V_m"] = self.V_m / self.prediction.V_m_pred - 1.0
        elif self.V_m is not None:
            out["V_m_abs"] = self.V_m
        return out

    def as_dict(self) -> dict:
        return to_jsonable({
            "kind": self.kind,
            "eta": self.eta,
            "ridge_axis": self.ridge_axis,
            "window": list(self.window),
            "V_CE": self.V_CE,
            "V_CE_err": self.ce.stderr,
            "V_m": self.V_m,
            "V_m_err": self.V_m_err,
            "ce_fit": self.ce.as_dict(),
            "ridges": [dict(r, fit=r["fit"].as_dict()) for r in self.ridge_fits],
            "used_ridges": self.used_ridges,
            "predictions": None if self.prediction is None else self.prediction.as_dict(),
            "relative_deviations": self.deviations(),
            "flags": self.flags,
            "eta_scan": self.eta_scan,
        })

    def to_text(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def twofold_report(cmap: CorrelationMap, eta: float = 0.1,
                   prediction: VelocitySet | None = None,
                   window: tuple[float, float] | None = None,
                   ridge_axis: str = "t", polarity: str = "both",
                   n_ridges: int = 2, noise_floor: float = NOISE_FLOOR,
                   eta_scan=None, **ridge_kw) -> TwofoldReport:
    """CE velocity, extrema velocity and their comparison with predictions.

    ``V_m`` is the inverse-variance weighted mean slope of the ``n_ridges``
    ridges closest to the front (mean delay behind the fitted CE).  The
    ``SINGLE_CONE`` flag is raised when no ridge can be fitted or when
    ``|V_m - V_CE| / V_CE < 0.1``.
    """
    if window is None:
        window = default_window(cmap)
    act = activation_times(cmap, eta, noise_floor)
    ce = fit_velocity(act, window, Method.ACTIVATION)
    report = TwofoldReport(kind=cmap.kind, eta=eta, window=tuple(window), ce=ce,
                           prediction=prediction, ridge_axis=ridge_axis)

    ridges = extrema_ridges(cmap, axis=ridge_axis, polarity=polarity,
                            noise_floor=noise_floor, **ridge_kw)
    for r in ridges:
        try:
            fit = fit_velocity(r.points, window, Method.RIDGE)
        except InsufficientPoints:
            continue
        R, t = r.points[:, 0], r.points[:, 1]
        inside = (R >= window[0]) & (R <= window[1])
        t_front = (R[inside] - ce.intercept) / ce.velocity
        delay = float(np.mean(t[inside] - t_front))
        report.ridge_fits.append({"polarity": r.polarity, "delay": delay,
                                  "n_points": int(inside.sum()), "fit": fit})
    # ridges running ahead of the fitted front live in the sub-threshold tail
    lead_tol = 2.0 * float(np.median(np.diff(cmap.t_values))) if cmap.t_values.size > 1 else 0.0
    behind = [i for i, r in enumerate(report.ridge_fits) if r["delay"] >= -lead_tol]
    behind.sort(key=lambda i: abs(report.ridge_fits[i]["delay"]))
    chosen = behind[:n_ridges]
    report.used_ridges = chosen
    if chosen:
        v = np.array([report.ridge_fits[i]["fit"].velocity for i in chosen])
        e = np.array([report.ridge_fits[i]["fit"].stderr for i in chosen])
        e = np.maximum(e, 1e-9 * (1 + np.abs(v)))
        w = 1.0 / e**2
        report.V_m = float(np.sum(w * v) / np.sum(w))
        report.V_m_err = float(1.0 / math.sqrt(np.sum(w)))
    if report.V_m is None or abs(report.V_m - ce.velocity) < 0.1 * abs(ce.velocity):
        report.flags.append("SINGLE_CONE")
    if eta_scan:
        for e_ in eta_scan:
            try:
                f = fit_velocity(activation_times(cmap, e_, noise_floor), window)
                report.eta_scan.append({"eta": e_, "V_CE": f.velocity, "stderr": f.stderr})
            except (EmptySignal, InsufficientPoints) as exc:
                report.eta_scan.append({"eta": e_, "error": str(exc)})
    return report
