"""Space-time correlation maps and their on-disk format.

A map file is a comma-separated table with header ``R,t,value`` (one row per
grid point, R-major, missing values written as ``nan``).  G1 maps produced by
the engines carry two optional trailing columns, ``magnitude`` (``|G1|``) and
``raw`` (the correlator before the t=0 subtraction).  Metadata lives in a JSON
sidecar with the same basename and suffix ``.json``.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import MapFormatError

__all__ = ["CorrelationMap", "write_map", "read_map", "sidecar_path", "atomic_write_text",
           "to_jsonable"]

_OPTIONAL_COLUMNS = ("magnitude", "raw")


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CorrelationMap:
    """Discrete correlation field ``G(R, t)``.

    ``values`` has shape ``(len(R_values), len(t_values))``; NaN marks a
    missing point.  For G1 the real part is stored in ``values`` and the
    modulus in ``magnitude``.
    """

    kind: str
    R_values: np.ndarray
    t_values: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    magnitude: np.ndarray | None = None
    raw: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("G1", "G2"):
            raise ValueError(f"kind must be G1 or G2, got {self.kind!r}")
        R = _frozen(self.R_values, int)
        t = _frozen(self.t_values, float)
        if R.ndim != 1 or t.ndim != 1 or R.size == 0 or t.size == 0:
            raise ValueError("grids must be non-empty 1D arrays")
        if np.any(np.diff(R) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("grids must be strictly increasing")
        object.__setattr__(self, "R_values", R)
        object.__setattr__(self, "t_values", t)
        for name in ("values",) + _OPTIONAL_COLUMNS:
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = _frozen(arr, float)
            if arr.shape != (R.size, t.size):
                raise ValueError(f"{name} shape {arr.shape} does not match grids "
                                 f"({R.size}, {t.size})")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def row(self, R: int) -> np.ndarray:
        idx = np.flatnonzero(self.R_values == R)
        if idx.size == 0:
            raise KeyError(R)
        return self.values[idx[0]]

    def scaled(self, lam: float) -> "CorrelationMap":
        return replace(
            self, values=lam * self.values,
            magnitude=None if self.magnitude is None else abs(lam) * self.magnitude,
            raw=None if self.raw is None else lam * self.raw)

    def shifted(self, dt: float) -> "CorrelationMap":
        return replace(self, t_values=self.t_values + dt)

    def select(self, quantity: str = "value") -> "CorrelationMap":
        """Map whose ``values`` are one of ``value``, ``magnitude`` or ``raw``."""
        if quantity == "value":
            return self
        arr = getattr(self, quantity, None)
        if arr is None:
            raise KeyError(f"map carries no {quantity!r} column")
        meta = dict(self.metadata, quantity=quantity)
        return CorrelationMap(self.kind, self.R_values, self.t_values, arr, meta)

    def subsample_t(self, step: int) -> "CorrelationMap":
        sl = slice(step - 1, None, step)
        return CorrelationMap(
            self.kind, self.R_values, self.t_values[sl], self.values[:, sl], self.metadata,
            None if self.magnitude is None else self.magnitude[:, sl],
            None if self.raw is None else self.raw[:, sl])


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and hasattr(obj, "name"):  # enums
        return obj.value
    return obj


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        # mkstemp creates 0600; give the file the usual umask-derived mode
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_map(cmap: CorrelationMap, path: str | Path) -> Path:
    """Write the table and its metadata sidecar; returns the table path."""
    path = Path(path)
    cols = [c for c in _OPTIONAL_COLUMNS if getattr(cmap, c) is not None]
    lines = [",".join(("R", "t", "value") + tuple(cols))]
    extra = [getattr(cmap, c) for c in cols]
    for i, R in enumerate(cmap.R_values):
        for j, t in enumerate(cmap.t_values):
            fields_ = [str(int(R)), repr(float(t)), _fmt(cmap.values[i, j])]
            fields_ += [_fmt(a[i, j]) for a in extra]
            lines.append(",".join(fields_))
    atomic_write_text(path, "\n".join(lines) + "\n")
    meta = {"kind": cmap.kind, "columns": ["R", "t", "value"] + cols,
            "shape": list(cmap.shape), "metadata": to_jsonable(cmap.metadata)}
    atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_map(path: str | Path) -> CorrelationMap:
    """Parse a map table and its sidecar.

    Raises
    ------
    MapFormatError
        With the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MapFormatError(f"{path}: {exc}") from None
    lines = text.splitlines()
    if not lines:
        raise MapFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:3] != ["R", "t", "value"] or any(h not in _OPTIONAL_COLUMNS for h in header[3:]):
        raise MapFormatError(f"{path}: line 1: bad header {lines[0]!r}")
    ncol = len(header)
    Rs, ts, cols = [], [], [[] for _ in range(ncol - 2)]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncol:
            raise MapFormatError(f"{path}: line {lineno}: expected {ncol} fields, "
                                 f"got {len(parts)}: {line!r}")
        try:
            R = float(parts[0])
            if not R.is_integer():
                raise ValueError("R must be an integer")
            Rs.append(int(R))
            ts.append(float(parts[1]))
            for c, p in zip(cols, parts[2:]):
                c.append(float(p))
        except ValueError as exc:
            raise MapFormatError(f"{path}: line {lineno}: {exc}: {line!r}") from None
    R_grid = np.unique(Rs)
    t_grid = np.unique(ts)
    n = len(Rs)
    if n != R_grid.size * t_grid.size:
        raise MapFormatError(
            f"{path}: line {n + 1}: incomplete grid, {n} rows for "
            f"{R_grid.size} x {t_grid.size} points")
    Rs_a, ts_a = np.asarray(Rs), np.asarray(ts)
    expect_R = np.repeat(R_grid, t_grid.size)
    expect_t = np.tile(t_grid, R_grid.size)
    bad = np.flatnonzero((Rs_a != expect_R) | (ts_a != expect_t))
    if bad.size:
        k = int(bad[0])
        raise MapFormatError(f"{path}: line {k + 2}: row out of R-major grid order: "
                             f"{lines[k + 1]!r}")
    arrays = [np.asarray(c).reshape(R_grid.size, t_grid.size) for c in cols]
    meta_path = sidecar_path(path)
    kind, metadata = "G2", {}
    if meta_path.exists():
        try:
            side = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MapFormatError(f"{meta_path}: line {exc.lineno}: {exc.msg}") from None
        kind = side.get("kind", kind)
        metadata = side.get("metadata", {})
    extra = dict(zip(header[3:], arrays[1:]))
    return CorrelationMap(kind, R_grid, t_grid, arrays[0], metadata,
                          magnitude=extra.get("magnitude"), raw=extra.get("raw"))
