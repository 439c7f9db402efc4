"""Physical parameterization and quench protocol of the Bose-Hubbard chain.

Units are fixed throughout the package: hbar = 1, lattice spacing a = 1,
energies in units of the hopping J, times in hbar/J and velocities in
J a / hbar.
"""
from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .errors import CapacityError, InvalidParameter

__all__ = [
    "INFINITE",
    "BoseHubbardParams",
    "QuenchProtocol",
    "validate",
    "poisson_cutoff",
    "load_quench_config",
    "QuenchConfig",
]


class _Infinite(enum.Enum):
    INFINITE = "infinite"

    def __repr__(self) -> str:
        return "INFINITE"

    def __str__(self) -> str:
        return "inf"


#: Pre-quench interaction ratio of the unit-density Fock product state.
INFINITE = _Infinite.INFINITE

OBSERVABLES = ("G1", "G2")


@dataclass(frozen=True)
class BoseHubbardParams:
    """Couplings, filling and geometry of a finite open chain.

    Parameters
    ----------
    J : float
        Hopping energy (energy unit).
    U : float
        On-site interaction energy.
    nbar : float
        Mean filling.
    M : int
        Number of lattice sites.
    N : int
        Total particle number.
    n_max : int
        Local occupation cutoff.
    """

    J: float = 1.0
    U: float = 0.0
    nbar: float = 1.0
    M: int = 2
    N: int = 2
    n_max: int = 2

    def __post_init__(self):
        _check_params(self)

    @classmethod
    def from_filling(cls, nbar: float, M: int, U: float = 0.0, J: float = 1.0,
                     n_max: int | None = None) -> "BoseHubbardParams":
        """Canonical construction with ``N = round(nbar * M)``."""
        N = int(math.floor(nbar * M + 0.5))
        if n_max is None:
            n_max = max(1, poisson_cutoff(nbar, 0.01)) if nbar > 0 else 1
        return cls(J=J, U=U, nbar=nbar, M=M, N=N, n_max=n_max)

    @property
    def local_dim(self) -> int:
        return self.n_max + 1

    def with_U(self, U: float) -> "BoseHubbardParams":
        return replace(self, U=U)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_params(p: BoseHubbardParams) -> None:
    if not p.J > 0:
        raise InvalidParameter(f"J > 0 violated (J={p.J})")
    if not p.U >= 0:
        raise InvalidParameter(f"U >= 0 violated (U={p.U})")
    if not p.nbar >= 0:
        raise InvalidParameter(f"nbar >= 0 violated (nbar={p.nbar})")
    if int(p.M) != p.M or p.M < 2:
        raise InvalidParameter(f"M >= 2 violated (M={p.M})")
    if int(p.N) != p.N or p.N < 0:
        raise InvalidParameter(f"N >= 0 integer violated (N={p.N})")
    if int(p.n_max) != p.n_max or p.n_max < 1:
        raise InvalidParameter(f"n_max >= 1 violated (n_max={p.n_max})")
    if abs(p.N / p.M - p.nbar) > 0.5 / p.M + 1e-12:
        raise InvalidParameter(
            f"|N/M - nbar| <= 1/(2M) violated (N={p.N}, M={p.M}, nbar={p.nbar})")
    if p.N > p.M * p.n_max:
        raise CapacityError(
            f"N <= M*n_max violated (N={p.N}, M={p.M}, n_max={p.n_max})")


def validate(params: BoseHubbardParams) -> BoseHubbardParams:
    """Return ``params`` unchanged if every invariant holds.

    Raises
    ------
    InvalidParameter
        Naming the violated invariant.
    """
    _check_params(params)
    return params


def poisson_cutoff(nbar: float, tail_tol: float) -> int:
    """Smallest ``n`` whose Poisson tail ``1 - sum_{m<=n} P(m)`` is ``<= tail_tol``.

    For ``nbar = 5`` and ``tail_tol = 0.01`` the strict criterion gives 11;
    a more conservative rounding gives 12.
    """
    if not nbar > 0:
        raise InvalidParameter(f"nbar > 0 required (nbar={nbar})")
    if not 0 < tail_tol < 1:
        raise InvalidParameter(f"0 < tail_tol < 1 required (tail_tol={tail_tol})")
    n = 0
    while poisson.sf(n, nbar) > tail_tol:
        n += 1
    return n


@dataclass(frozen=True)
class QuenchProtocol:
    """Sudden global quench ``u0 -> u1`` at fixed filling.

    ``u0`` is either a positive float or :data:`INFINITE`; the latter means the
    evolution starts from the Fock product state with ``nbar`` bosons per site.
    Samples are taken at ``dt_sample, 2*dt_sample, ...`` up to ``T``.
    """

    u0: float | _Infinite
    u1: float
    nbar: float
    T: float
    dt_sample: float
    observables: tuple[str, ...] = ("G1", "G2")

    def __post_init__(self):
        obs = tuple(sorted(set(self.observables)))
        object.__setattr__(self, "observables", obs)
        if not obs or any(o not in OBSERVABLES for o in obs):
            raise InvalidParameter(f"observables must be a non-empty subset of {OBSERVABLES}")
        if self.u0 is INFINITE:
            if not (self.nbar > 0 and float(self.nbar).is_integer()):
                raise InvalidParameter(
                    f"u0 = INFINITE requires a positive integer filling (nbar={self.nbar})")
        elif not (isinstance(self.u0, (int, float)) and self.u0 > 0 and math.isfinite(self.u0)):
            raise InvalidParameter(f"u0 > 0 or INFINITE required (u0={self.u0!r})")
        if not self.u1 >= 0:
            raise InvalidParameter(f"u1 >= 0 violated (u1={self.u1})")
        if not self.T > 0:
            raise InvalidParameter(f"T > 0 violated (T={self.T})")
        if not 0 < self.dt_sample <= self.T * (1 + 1e-12):
            raise InvalidParameter(
                f"0 < dt_sample <= T violated (dt_sample={self.dt_sample}, T={self.T})")

    @property
    def n_samples(self) -> int:
        return max(1, int(math.floor(self.T / self.dt_sample + 1e-9)))

    def sample_times(self) -> np.ndarray:
        return self.dt_sample * np.arange(1, self.n_samples + 1)

    def as_dict(self) -> dict:
        return {
            "u0": "inf" if self.u0 is INFINITE else self.u0,
            "u1": self.u1,
            "nbar": self.nbar,
            "T": self.T,
            "dt_sample": self.dt_sample,
            "observables": list(self.observables),
        }


def parse_u0(text) -> float | _Infinite:
    if text is INFINITE:
        return INFINITE
    if isinstance(text, str) and text.strip().lower() in ("inf", "infinite", "infinity"):
        return INFINITE
    value = float(text)
    if math.isinf(value):
        return INFINITE
    return value


@dataclass(frozen=True)
class QuenchConfig:
    """Contents of one quench configuration file."""

    protocol: QuenchProtocol
    params: BoseHubbardParams
    engine: str
    knobs: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)


_ENGINES = ("ed", "tebd", "analytic")


def load_quench_config(path: str | Path) -> QuenchConfig:
    """Read a key-value quench configuration file.

    The file has a mandatory ``[quench]`` section and optional ``[ed]``,
    ``[tebd]``, ``[analytic]`` and ``[analysis]`` sections::

        [quench]
        engine = tebd          # ed | tebd | analytic
        u0 = inf               # float or inf
        u1 = 24
        nbar = 1
        M = 8
        n_max = 3
        J = 1                  # optional, default 1
        T = 4
        dt_sample = 0.1
        observables = G1, G2

        [tebd]
        chi = 64
        dt = 0.01
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    read = cp.read(str(path))
    if not read:
        raise InvalidParameter(f"cannot read config file {path}")
    if "quench" not in cp:
        raise InvalidParameter(f"{path}: missing [quench] section")
    q = cp["quench"]
    try:
        engine = q.get("engine", "ed").strip().lower()
        if engine not in _ENGINES:
            raise InvalidParameter(f"{path}: engine must be one of {_ENGINES}, got {engine!r}")
        nbar = float(q["nbar"])
        M = int(q["M"])
        J = float(q.get("J", "1"))
        u1 = float(q["u1"])
        observables = tuple(s.strip() for s in q.get("observables", "G1, G2").split(",") if s.strip())
        protocol = QuenchProtocol(
            u0=parse_u0(q["u0"]), u1=u1, nbar=nbar, T=float(q["T"]),
            dt_sample=float(q["dt_sample"]), observables=observables)
        n_max = int(q["n_max"]) if "n_max" in q else None
        params = BoseHubbardParams.from_filling(nbar, M, U=u1 * J, J=J, n_max=n_max)
    except KeyError as exc:
        raise InvalidParameter(f"{path}: missing required key {exc.args[0]!r} in [quench]") from None
    except ValueError as exc:
        if isinstance(exc, InvalidParameter):
            raise
        raise InvalidParameter(f"{path}: {exc}") from None
    knobs = {k: _auto(v) for k, v in cp[engine].items()} if engine in cp else {}
    analysis = {k: _auto(v) for k, v in cp["analysis"].items()} if "analysis" in cp else {}
    return QuenchConfig(protocol=protocol, params=params, engine=engine, knobs=knobs,
                        analysis=analysis)


def _auto(text: str):
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip()
