"""Command-line entry point.

Subcommands::

    dispersion   velocity table of one dispersion branch
    predict-map  strong-coupling G2 map
    quench-ed    exact quench, writes G1/G2 maps and a manifest
    quench-tebd  MPS quench, optionally with the convergence protocol
    analyze      twofold report of one map file
    sweep        engine + analysis over a list of U/J or filling values

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.  ``BHTWOFOLD_WORKERS`` bounds the sweep worker pool.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import twofold_report
from .dispersion import (DispersionRelation, Kind, sound_velocity_strong, sound_velocity_weak,
                         velocity_set)
from .ed import DEFAULT_MAX_DIM, basis_dimension, run_quench_ed
from .errors import BHError, CapacityError, DomainError, InvalidParameter
from .maps import CorrelationMap, atomic_write_text, read_map, to_jsonable, write_map
from .model import BoseHubbardParams, QuenchConfig, load_quench_config
from .quasiparticle import AnalyticMapSpec, predict_map
from .tebd import convergence_check, run_quench_tebd

WORKERS_ENV = "BHTWOFOLD_WORKERS"
#: Rough flop budget for one TEBD run (chi^3 d^3 per bond and step).
TEBD_COST_CAP = 5e14


class UsageError(Exception):
    pass


def _parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid must be start:stop:step, got {text!r}")
        try:
            a, b, h = (float(p) for p in parts)
        except ValueError:
            raise UsageError(f"bad grid {text!r}") from None
        if h <= 0 or b < a:
            raise UsageError(f"bad grid {text!r}")
        n = int(math.floor((b - a) / h + 1e-9))
        return [round(a + i * h, 12) for i in range(n + 1)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad value list {text!r}") from None


def _kind(text: str) -> Kind:
    try:
        return Kind.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _parse_window(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        lo, hi = (float(v) for v in str(text).split(","))
    except ValueError:
        raise UsageError(f"window must be R_min,R_max, got {text!r}") from None
    if hi <= lo:
        raise UsageError(f"empty window {text!r}")
    return (lo, hi)


def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


PLOT_TEMPLATE = '''"""Render {name}; generated alongside the data."""
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np

path = sys.argv[1] if len(sys.argv) > 1 else "{name}"
rows = list(csv.DictReader(open(path)))
R = np.array(sorted({{int(r["R"]) for r in rows}}))
t = np.array(sorted({{float(r["t"]) for r in rows}}))
G = np.array([float(r["value"]) for r in rows]).reshape(R.size, t.size)
fig, ax = plt.subplots(figsize=(6, 4))
mesh = ax.pcolormesh(R, t, G.T, shading="nearest", cmap="RdBu_r")
ax.set_xlabel("R")
ax.set_ylabel("t")
fig.colorbar(mesh, ax=ax, label="{kind}")
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150, bbox_inches="tight")
'''


def _plot_script(map_path: Path, kind: str) -> Path:
    out = map_path.with_name(map_path.stem + "_plot.py")
    atomic_write_text(out, PLOT_TEMPLATE.format(name=map_path.name, kind=kind))
    return out


# -- dispersion --

def cmd_dispersion(args) -> int:
    if args.u is None and args.u_grid is None:
        raise UsageError("one of --u or --u-grid is required")
    us = [args.u] if args.u is not None else _parse_grid(args.u_grid)
    kind = _kind(args.kind)
    lines = ["U_over_J,k_star,V_g_star,V_phi_star,V_CE_pred,V_m_pred,V_s2_weak,V_s2_strong"]
    for u in us:
        d = DispersionRelation(kind, J=args.J, U=u * args.J, nbar=args.nbar)
        vs = velocity_set(d)
        weak = 2 * sound_velocity_weak(u / (2 * args.nbar), args.nbar, args.J) if args.nbar > 0 else math.nan
        # the strong-coupling expansion holds below unit filling only
        strong = (sound_velocity_strong(u, args.nbar, args.J) if u > 0 and 0 < args.nbar < 1
                  else math.nan)
        lines.append(",".join(repr(float(x)) for x in (
            u, vs.k_star, vs.V_g_star, vs.V_phi_star, vs.V_CE_pred, vs.V_m_pred, weak, strong)))
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# -- maps from engines --

def _analytic_spec(cfg: QuenchConfig) -> AnalyticMapSpec:
    k = cfg.knobs
    return AnalyticMapSpec(
        params=cfg.params, R_max=int(k.get("R_max", 40)), t_max=cfg.protocol.T,
        dt=cfg.protocol.dt_sample, N_k=int(k.get("N_k", 4096)),
        variant=k.get("variant", "full"), dispersion=k.get("dispersion", "pair"))


def _check_size(cfg: QuenchConfig) -> None:
    p = cfg.params
    if cfg.engine == "ed":
        cap = int(cfg.knobs.get("max_dim", DEFAULT_MAX_DIM))
        dim = basis_dimension(p.M, p.N, p.n_max)
        if dim > cap:
            raise CapacityError(
                f"ED basis dimension {dim} (M={p.M}, N={p.N}, n_max={p.n_max}) exceeds the cap "
                f"{cap}; lower M or n_max, raise max_dim in [ed], or switch to engine = tebd")
    elif cfg.engine == "tebd":
        chi = int(cfg.knobs.get("chi", 64))
        dt = float(cfg.knobs.get("dt", 0.01))
        steps = cfg.protocol.T / dt
        cost = 3 * chi**3 * p.local_dim**3 * p.M * steps
        cap = float(cfg.knobs.get("cost_cap", TEBD_COST_CAP))
        if cost > cap:
            raise CapacityError(
                f"TEBD cost estimate {cost:.2e} flops exceeds {cap:.1e}; "
                "lower chi, M or T, or raise cost_cap in [tebd]")


def run_engine(cfg: QuenchConfig, convergence: bool = False):
    """Maps and manifest of one configured run."""
    _check_size(cfg)
    if cfg.engine == "analytic":
        cmap = predict_map(_analytic_spec(cfg))
        manifest = {"engine": "analytic", "params": cfg.params.as_dict(),
                    "protocol": cfg.protocol.as_dict(), "knobs": cfg.knobs}
        return {"G2": cmap}, manifest
    if cfg.engine == "ed":
        kw = {k: cfg.knobs[k] for k in ("reference_policy", "tol") if k in cfg.knobs}
        res = run_quench_ed(cfg.protocol, cfg.params, **kw)
        return res.maps, dict(res.manifest, knobs=cfg.knobs)
    kw = {k: cfg.knobs[k] for k in ("chi", "dt", "cutoff", "hard_fail", "reference_policy")
          if k in cfg.knobs}
    if convergence:
        v = convergence_check(cfg.protocol, cfg.params, **kw)
        base = v.results["base"]
        if base is None:
            raise BHError("base TEBD run overflowed the truncation threshold")
        return base.maps, dict(base.manifest, knobs=cfg.knobs, convergence=v.as_dict())
    res = run_quench_tebd(cfg.protocol, cfg.params, **kw)
    return res.maps, dict(res.manifest, knobs=cfg.knobs)


def _emit(maps: dict, manifest: dict, outdir: Path, plot: bool) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, cmap in sorted(maps.items()):
        path = write_map(cmap, outdir / f"{kind}.csv")
        written += [path, path.with_suffix(".json")]
        if plot:
            written.append(_plot_script(path, kind))
    manifest = dict(manifest, status="complete", version=__version__,
                    files=sorted(p.name for p in written))
    _write_json(outdir / "manifest.json", manifest)
    return written


def _load(args, engine: str) -> QuenchConfig:
    cfg = load_quench_config(args.config)
    if cfg.engine != engine:
        # the subcommand decides; knobs come from the matching section
        raise UsageError(f"{args.config}: engine = {cfg.engine}, but subcommand runs {engine}")
    return cfg


def _run_and_write(args, engine: str, convergence: bool = False) -> int:
    cfg = _load(args, engine)
    outdir = Path(args.outdir)
    try:
        maps, manifest = run_engine(cfg, convergence)
    except CapacityError:
        raise
    except BHError as exc:
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "manifest.json", {
            "status": "failed", "error": f"{type(exc).__name__}: {exc}", "engine": engine,
            "params": cfg.params.as_dict(), "protocol": cfg.protocol.as_dict(),
            "knobs": cfg.knobs, "files": []})
        raise
    written = _emit(maps, manifest, outdir, args.plot_script)
    for p in written:
        print(f"wrote {p}")
    if convergence:
        print(f"convergence: {manifest['convergence']['verdict']}")
    return 0


def cmd_predict_map(args) -> int:
    if args.config:
        cfg = _load(args, "analytic")
        spec = _analytic_spec(cfg)
    else:
        if args.u is None:
            raise UsageError("--u is required without --config")
        p = BoseHubbardParams(J=args.J, U=args.u * args.J, nbar=args.nbar, M=2,
                              N=int(round(2 * args.nbar)), n_max=max(2, int(round(2 * args.nbar))))
        spec = AnalyticMapSpec(params=p, R_max=args.R_max, t_max=args.t_max, dt=args.dt,
                               N_k=args.N_k, variant=args.variant, dispersion=args.dispersion)
    cmap = predict_map(spec)
    out = Path(args.out)
    write_map(cmap, out)
    print(f"wrote {out}")
    if args.plot_script:
        print(f"wrote {_plot_script(out, 'G2')}")
    return 0


def cmd_quench_ed(args) -> int:
    return _run_and_write(args, "ed")


def cmd_quench_tebd(args) -> int:
    return _run_and_write(args, "tebd", convergence=args.convergence_check)


# -- analysis --

def _prediction(kind: str | None, cmap: CorrelationMap, u=None, nbar=None, J=None):
    if not kind:
        return None
    params = cmap.metadata.get("params", {}) if isinstance(cmap.metadata, dict) else {}
    J = J if J is not None else params.get("J", 1.0)
    if u is None:
        proto = cmap.metadata.get("protocol", {})
        u = proto.get("u1", params.get("U", 0.0) / J)
    nbar = nbar if nbar is not None else params.get("nbar")
    if nbar is None:
        raise UsageError("--predict needs --nbar when the map carries no parameters")
    return velocity_set(DispersionRelation(_kind(kind), J=J, U=u * J, nbar=nbar))


def _analysis_kwargs(opts: dict) -> dict:
    kw = {}
    if opts.get("eta") is not None:
        kw["eta"] = float(opts["eta"])
    if opts.get("window") is not None:
        kw["window"] = _parse_window(opts["window"])
    for key in ("ridge_axis", "polarity"):
        if opts.get(key) is not None:
            kw[key] = opts[key]
    if opts.get("n_ridges") is not None:
        kw["n_ridges"] = int(opts["n_ridges"])
    if opts.get("noise_floor") is not None:
        kw["noise_floor"] = float(opts["noise_floor"])
    return kw


def cmd_analyze(args) -> int:
    cmap = read_map(args.map)
    if args.quantity != "value":
        try:
            cmap = cmap.select(args.quantity)
        except KeyError as exc:
            raise UsageError(str(exc)) from None
    pred = _prediction(args.predict, cmap, args.u, args.nbar)
    kw = _analysis_kwargs(vars(args))
    if args.eta_scan:
        kw["eta_scan"] = _parse_grid(args.eta_scan)
    rep = twofold_report(cmap, prediction=pred, **kw)
    text = rep.to_text()
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# -- sweeps --

@dataclass(frozen=True)
class SweepSpec:
    """One engine configuration scanned along ``U_over_J`` or ``nbar``."""

    axis: str
    values: tuple
    fixed: QuenchConfig
    analysis: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in ("U_over_J", "nbar"):
            raise UsageError(f"sweep axis must be U_over_J or nbar, got {self.axis!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise UsageError("sweep values must be non-empty")
        d = np.diff(vals)
        if len(vals) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise UsageError("sweep values must be strictly monotone")
        object.__setattr__(self, "values", vals)

    def point(self, value: float) -> QuenchConfig:
        cfg = self.fixed
        proto, params = cfg.protocol, cfg.params
        if self.axis == "U_over_J":
            proto = replace(proto, u1=value)
            params = params.with_U(value * params.J)
        else:
            params = BoseHubbardParams.from_filling(value, params.M, U=params.U, J=params.J,
                                                    n_max=params.n_max)
            proto = replace(proto, nbar=value)
        return replace(cfg, protocol=proto, params=params)


def _sweep_point(job):
    spec, value, outdir, plot = job
    row = {"value": value}
    try:
        cfg = spec.point(value)
        maps, manifest = run_engine(cfg)
        _emit(maps, manifest, Path(outdir), plot)
        opts = dict(spec.analysis)
        obs = opts.pop("observable", "G2" if "G2" in maps else "G1")
        quantity = opts.pop("quantity", "value")
        predict = opts.pop("predict", "pair")
        cmap = maps[obs].select(quantity)
        pred = velocity_set(DispersionRelation(Kind.parse(predict), J=cfg.params.J,
                                               U=cfg.protocol.u1 * cfg.params.J,
                                               nbar=cfg.protocol.nbar))
        rep = twofold_report(cmap, prediction=pred, **_analysis_kwargs(opts))
        atomic_write_text(Path(outdir) / f"report_{obs}.json", rep.to_text())
        row.update(V_CE=rep.V_CE, V_CE_err=rep.ce.stderr, V_m=rep.V_m, V_m_err=rep.V_m_err,
                   V_CE_pred=pred.V_CE_pred, V_m_pred=pred.V_m_pred,
                   flags=";".join(rep.flags), error="")
    except Exception as exc:  # per-point isolation
        row["error"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return row


def _workers(n_jobs: int, override=None) -> int:
    raw = override if override is not None else os.environ.get(WORKERS_ENV, "")
    try:
        n = int(raw) if str(raw).strip() else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(n, n_jobs))


SWEEP_COLUMNS = ("value", "V_CE", "V_CE_err", "V_m", "V_m_err", "V_CE_pred", "V_m_pred",
                 "flags", "error")


def run_sweep(spec: SweepSpec, outdir: Path, workers: int = 1, plot: bool = False):
    jobs = [(spec, v, str(outdir / f"point_{i:03d}"), plot) for i, v in enumerate(spec.values)]
    if workers == 1:
        rows = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    lines = [f"{spec.axis}," + ",".join(SWEEP_COLUMNS[1:])]
    for r in rows:
        cells = []
        for c in SWEEP_COLUMNS:
            v = r.get(c)
            cells.append("" if v is None else (repr(float(v)) if isinstance(v, (int, float))
                                               else str(v)))
        lines.append(",".join(cells))
    outdir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(outdir / "sweep.csv", "\n".join(lines) + "\n")
    _write_json(outdir / "manifest.json", {
        "axis": spec.axis, "values": list(spec.values), "engine": spec.fixed.engine,
        "analysis": spec.analysis, "version": __version__,
        "files": ["sweep.csv"] + [f"point_{i:03d}" for i in range(len(spec.values))],
        "failed_points": [r["value"] for r in rows if r.get("error")]})
    return rows


def cmd_sweep(args) -> int:
    cfg = load_quench_config(args.config)
    analysis = dict(cfg.analysis)
    for key in ("eta", "window", "ridge_axis", "observable", "quantity", "predict"):
        if getattr(args, key, None) is not None:
            analysis[key] = getattr(args, key)
    values = _parse_grid(args.values) if args.values else []
    spec = SweepSpec(axis=args.axis, values=tuple(values), fixed=cfg, analysis=analysis)
    for v in spec.values:
        _check_size(spec.point(v))
    outdir = Path(args.outdir)
    rows = run_sweep(spec, outdir, _workers(len(spec.values), args.workers), args.plot_script)
    print(f"wrote {outdir / 'sweep.csv'}")
    failed = [r for r in rows if r.get("error")]
    for r in failed:
        print(f"point {r['value']}: {r['error']}", file=sys.stderr)
    return 1 if len(failed) == len(rows) else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bhtwofold", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dispersion", help="velocity table of a dispersion branch")
    p.add_argument("--kind", required=True, help="free, bogoliubov, pair or effective")
    p.add_argument("--nbar", type=float, required=True)
    p.add_argument("--u", type=float, help="single U/J value")
    p.add_argument("--u-grid", help="U/J grid, start:stop:step or comma list")
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dispersion)

    p = sub.add_parser("predict-map", help="strong-coupling G2 map")
    p.add_argument("--config")
    p.add_argument("--u", type=float)
    p.add_argument("--nbar", type=float, default=1.0)
    p.add_argument("--J", type=float, default=1.0)
    p.add_argument("--R-max", type=int, default=40)
    p.add_argument("--t-max", type=float, default=8.0)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--N-k", type=int, default=4096)
    p.add_argument("--variant", default="full")
    p.add_argument("--dispersion", default="pair", choices=("pair", "effective"))
    p.add_argument("--out", required=True)
    p.add_argument("--plot-script", action="store_true")
    p.set_defaults(func=cmd_predict_map)

    for name, func, helptext in (("quench-ed", cmd_quench_ed, "exact-diagonalization quench"),
                                 ("quench-tebd", cmd_quench_tebd, "TEBD quench")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--outdir", required=True)
        p.add_argument("--plot-script", action="store_true")
        if name == "quench-tebd":
            p.add_argument("--convergence-check", action="store_true",
                           help="rerun at 2*chi and dt/2 and record a PASS/FAIL verdict")
        p.set_defaults(func=func)

    p = sub.add_parser("analyze", help="twofold report of a map file")
    p.add_argument("map")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--eta-scan", help="eta values, comma list or start:stop:step")
    p.add_argument("--predict", help="dispersion kind for predictions")
    p.add_argument("--u", type=float, help="U/J for predictions (default: from map metadata)")
    p.add_argument("--nbar", type=float)
    p.add_argument("--window", help="R_min,R_max of the fits")
    p.add_argument("--ridge-axis", choices=("t", "R"))
    p.add_argument("--polarity", choices=("both", "max", "min"))
    p.add_argument("--n-ridges", type=int)
    p.add_argument("--noise-floor", type=float)
    p.add_argument("--quantity", default="value", choices=("value", "magnitude", "raw"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="engine and analysis over a parameter list")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=("U_over_J", "nbar"))
    p.add_argument("--values", required=True, help="comma list or start:stop:step")
    p.add_argument("--outdir", required=True)
    p.add_argument("--workers", type=int, help=f"pool size (default ${WORKERS_ENV} or CPU count)")
    p.add_argument("--eta", type=float)
    p.add_argument("--window")
    p.add_argument("--ridge-axis", choices=("t", "R"))
    p.add_argument("--observable", choices=("G1", "G2"))
    p.add_argument("--quantity", choices=("value", "magnitude"))
    p.add_argument("--predict")
    p.add_argument("--plot-script", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidParameter, DomainError) as exc:
        # CapacityError is an InvalidParameter: refused before any allocation
        ap.exit(2, f"{ap.prog} {args.command}: error: {exc}\n")
    except BHError as exc:
        print(f"{ap.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"{ap.prog} {args.command}: {exc}", file=sys.stderr)
        if os.environ.get("BHTWOFOLD_DEBUG"):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
