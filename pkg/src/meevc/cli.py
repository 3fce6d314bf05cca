"""Command-line driver: simulations, convergence studies and reversal runs.

Exit codes: 0 success, 2 usage error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import SolverError, build_operators, project_solenoidal
from .cases import get_case
from .diagnostics import CSV_FIELDS, ERROR_FIELDS, l2_error, record
from .mesh import MeshError, load_mesh, make_periodic_rect_mesh
from .spaces import project_l2
from .timestepper import (
    ConvergenceError, bootstrap, n_steps_for, run, run_reversed, step,
)

log = logging.getLogger("meevc")

MODES = ("simulate", "converge-time", "converge-space", "reverse")
EXIT_USAGE = 2
EXIT_SOLVER = 3


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "taylor-green"
    nx: int = 20
    ny: int = 20
    pattern: str = "diagonal"
    mesh_file: str | None = None
    p: int = 1
    dt: float | None = None
    t_end: float | None = None
    nu: float | None = None
    out: str = "out"
    snapshot_every: int = 0
    mode: str = "simulate"
    halvings: int = 4
    levels: list = field(default_factory=lambda: [8, 16, 32])
    degrees: list = field(default_factory=lambda: [1, 2, 4])
    dt_per_degree: dict = field(default_factory=dict)
    skip: list = field(default_factory=list)
    paper: bool = False
    plot: bool = False

    def validate(self):
        case = get_case(self.case)
        if self.mode not in MODES:
            raise UsageError(f"--mode must be one of {', '.join(MODES)}")
        if self.nu is None:
            self.nu = case.nu
        if self.nu < 0:
            raise UsageError("--nu must be >= 0")
        if self.mode == "reverse" and self.nu != 0.0:
            raise UsageError("reverse mode requires --nu 0 (reversibility is an inviscid property)")
        if self.p not in (1, 2, 3, 4):
            raise UsageError("--p must be 1, 2, 3 or 4")
        if self.mode == "converge-space":
            bad = [d for d in self.degrees if d not in (1, 2, 3, 4)]
            if bad:
                raise UsageError(f"unsupported degrees {bad}")
        missing = [name for name in ("dt", "t_end") if getattr(self, name) is None]
        if self.mode == "converge-space":
            missing = [m for m in missing
                       if not (m == "dt" and all(d in self.dt_per_degree for d in self.degrees))]
        if missing:
            raise UsageError("missing required flags: " + ", ".join(
                "--" + m.replace("_", "-") for m in missing))
        if self.dt is not None and self.dt <= 0:
            raise UsageError("--dt must be positive")
        if self.t_end < 0 or (self.t_end == 0 and self.mode != "simulate"):
            raise UsageError("--t-end must be positive (0 is allowed in simulate mode)")
        if self.nx < 1 or self.ny < 1:
            raise UsageError("--nx and --ny must be >= 1")
        if self.pattern not in ("diagonal", "crisscross"):
            raise UsageError("--pattern must be diagonal or crisscross")
        if self.snapshot_every < 0:
            raise UsageError("--snapshot-every must be >= 0")
        steps = [self.dt] if self.dt is not None else []
        if self.mode == "converge-time":
            if self.halvings < 1:
                raise UsageError("converge-time needs at least two distinct dt values (--halvings >= 1)")
            if not case.exact:
                raise UsageError(f"case {self.case} has no exact solution")
            steps = [self.dt / 2**i for i in range(self.halvings + 1)]
        if self.mode == "converge-space":
            if not case.exact:
                raise UsageError(f"case {self.case} has no exact solution")
            if len(set(self.levels)) < 2:
                raise UsageError("converge-space needs at least two distinct --levels")
            steps = [self.dt_per_degree.get(d, self.dt) for d in self.degrees]
        for dt in steps:
            try:
                n_steps_for(self.t_end, dt)
            except ValueError:
                raise UsageError(f"--t-end {self.t_end} is not an integer multiple of dt {dt}") from None
        return self


# ------------------------------------------------------------------ parsing

def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _dt_map(text):
    out = {}
    for item in str(text).split(","):
        if item.strip():
            k, v = item.split(":")
            out[int(k)] = float(v)
    return out


def build_parser():
    ap = argparse.ArgumentParser(
        prog="meevc",
        description="Mass, energy, enstrophy and vorticity conserving Navier-Stokes solver "
                    "on periodic triangular meshes.")
    ap.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    ap.add_argument("--case", choices=["taylor-green", "shear-layer"])
    ap.add_argument("--nx", type=int)
    ap.add_argument("--ny", type=int)
    ap.add_argument("--pattern", choices=["diagonal", "crisscross"])
    ap.add_argument("--mesh-file", help="plain-text mesh file (overrides --nx/--ny/--pattern)")
    ap.add_argument("--p", type=int, help="polynomial degree N of the complex (1..4)")
    ap.add_argument("--dt", type=float, help="time step (largest step in converge-time)")
    ap.add_argument("--t-end", type=float, help="final time")
    ap.add_argument("--nu", type=float, help="kinematic viscosity (default: case value)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--snapshot-every", type=int, help="VTK snapshot interval in steps (0: none)")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--halvings", type=int, help="converge-time: number of dt halvings")
    ap.add_argument("--levels", type=_int_list, help="converge-space: cells per side, e.g. 8,16,32")
    ap.add_argument("--degrees", type=_int_list, help="converge-space: degrees, e.g. 1,2,4")
    ap.add_argument("--dt-per-degree", type=_dt_map,
                    help="converge-space: per-degree dt, e.g. 1:2.5e-2,2:1e-3,4:1e-4")
    ap.add_argument("--skip", type=lambda s: [tuple(int(v) for v in item.split(":"))
                                              for item in s.split(",") if item],
                    help="converge-space: degree:level pairs to skip, e.g. 4:32")
    ap.add_argument("--paper", action="store_true", default=None,
                    help="fill unset options with the published configuration")
    ap.add_argument("--plot", action="store_true", default=None,
                    help="also render PNG figures into the output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"meevc {__version__}")
    return ap


def _paper_defaults(cfg: dict) -> dict:
    case = cfg.get("case", "taylor-green")
    mode = cfg.get("mode", "simulate")
    if case == "taylor-green":
        d = dict(nx=16, ny=16, pattern="crisscross", p=4, t_end=1.0, nu=0.01, dt=1e-4)
        if mode == "converge-time":
            d.update(dt=1.0, halvings=4)
        if mode == "converge-space":
            d.update(dt_per_degree={1: 2.5e-2, 2: 1e-3, 4: 1e-4}, degrees=[1, 2, 4])
    else:
        p = cfg.get("p", 1)
        n = 5 if p == 4 else 40
        d = dict(nx=n, ny=n, pattern="crisscross", p=p, nu=0.0, dt=1.0 if p == 4 else 0.25,
                 t_end=8.0 if mode == "reverse" else (128.0 if p == 4 else 16.0))
    return d


def parse_config(argv=None) -> RunConfig:
    """Parse flags (and an optional JSON file) into a validated :class:`RunConfig`."""
    ap = build_parser()
    ns = ap.parse_args(argv)
    known = {f.name for f in fields(RunConfig)}
    merged = {}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            ap.error(f"cannot read config {ns.config}: {exc}")
        if not isinstance(data, dict):
            ap.error("config file must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = sorted(set(data) - known)
        if unknown:
            ap.error(f"unknown config keys: {', '.join(unknown)}")
        if "dt_per_degree" in data:
            data["dt_per_degree"] = {int(k): float(v) for k, v in data["dt_per_degree"].items()}
        merged.update(data)
    for k, v in vars(ns).items():
        if k in known and v is not None:
            merged[k] = v
    if merged.get("paper"):
        for k, v in _paper_defaults(merged).items():
            merged.setdefault(k, v)
    try:
        return RunConfig(**merged).validate()
    except (UsageError, ValueError, TypeError) as exc:
        ap.error(str(exc))


# ------------------------------------------------------------------ outputs

def _fmt(v):
    return "" if v is None else format(float(v), ".17g")


class CsvWriter:
    """Line-buffered CSV so partial tables survive a solver failure."""

    def __init__(self, path, header):
        self.path = Path(path)
        self.fh = open(self.path, "w")
        self.fh.write(",".join(header) + "\n")
        self.fh.flush()

    def row(self, values):
        self.fh.write(",".join(_fmt(v) for v in values) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def write_vtk(path, omega, u, t):
    """Legacy ASCII VTK: omega at the vertices, u sampled at triangle centroids."""
    mesh = omega.space.mesh
    centroid = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    uc = u.space.values(u.coefficients, centroid)[:, 0, :]
    wv = omega.coefficients[mesh.vertex_class]
    lines = ["# vtk DataFile Version 3.0", f"meevc t={float(t)!r}", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(mesh.vertices)} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices]
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    lines += [f"POINT_DATA {len(mesh.vertices)}", "SCALARS omega double 1",
              "LOOKUP_TABLE default"]
    lines += [_fmt(v) for v in wv]
    lines += [f"CELL_DATA {nt}", "VECTORS u double"]
    lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in uc]
    Path(path).write_text("\n".join(lines) + "\n")


def _slope(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if len(np.unique(x)) < 2:
        raise UsageError("slope needs at least two distinct abscissae")
    return float(np.polyfit(x, y, 1)[0])


# ------------------------------------------------------------------ runners

def _mesh(cfg: RunConfig, n=None):
    case = get_case(cfg.case)
    if cfg.mesh_file and n is None:
        return load_mesh(cfg.mesh_file)
    nx = n or cfg.nx
    ny = n or cfg.ny
    return make_periodic_rect_mesh(nx, ny, *case.extent, pattern=cfg.pattern)


def _initial(ops, cfg, dt):
    case = get_case(cfg.case)
    u0 = project_solenoidal(ops, lambda x, y: case.velocity(x, y, 0.0, cfg.nu), time=0.0)
    w0 = project_l2(ops.W, lambda x, y: case.vorticity(x, y, 0.0, cfg.nu), time=0.0)
    return bootstrap(ops, u0, w0, dt, cfg.nu)


def _exact(cfg, t):
    case = get_case(cfg.case)
    if not case.exact:
        return None, None
    return (lambda x, y: case.velocity(x, y, t, cfg.nu),
            lambda x, y: case.vorticity(x, y, t, cfg.nu))


def _state_record(state, cfg):
    """Velocity error is measured at the velocity's own time ``t + dt/2``."""
    eu, _ = _exact(cfg, state.t_u)
    _, ew = _exact(cfg, state.t)
    return record(state.ops, state.u, state.omega, state.t, eu, ew)


def run_simulation(cfg: RunConfig, out: Path, emit=print):
    mesh = _mesh(cfg)
    ops = build_operators(mesh, cfg.p)
    exact = get_case(cfg.case).exact
    header = CSV_FIELDS + (ERROR_FIELDS if exact else ())
    csv = CsvWriter(out / "diagnostics.csv", header)
    records = []
    try:
        state, rep = _initial(ops, cfg, cfg.dt)
        emit(f"# bootstrap picard_iterations={rep.picard_iterations} update={rep.picard_update:.3e}")
        snaps = 0

        def observe(s):
            nonlocal snaps
            r = _state_record(s, cfg)
            records.append(r)
            csv.row(r.row(exact))
            if cfg.snapshot_every and s.k % cfg.snapshot_every == 0:
                write_vtk(out / f"snapshot_{s.k:06d}.vtk", s.omega, s.u, s.t)
                snaps += 1

        observe(state)
        state, _ = run(state, t_end=cfg.t_end, callbacks=[lambda s, r: observe(s)])
    finally:
        csv.close()
    K0, E0, W0 = records[0].K, records[0].E, records[0].Wtot
    summary = dict(
        steps=state.k,
        max_rel_K_drift=max(abs(r.K - K0) / K0 if K0 else abs(r.K) for r in records),
        max_rel_E_drift=max(abs(r.E - E0) / E0 if E0 else abs(r.E) for r in records),
        max_abs_W_drift=max(abs(r.Wtot - W0) for r in records),
        max_div_norm=max(r.div_norm for r in records),
    )
    if exact:
        summary.update(final_err_u=records[-1].err_u, final_err_w=records[-1].err_w)
    emit("key,value")
    for k, v in summary.items():
        emit(f"{k},{_fmt(v)}")
    if cfg.plot:
        from . import plotting
        plotting.conservation_figure(records, out / "conservation.png")
        plotting.vorticity_figure(state.omega, out / "vorticity.png")
    return summary


def run_convergence_time(cfg: RunConfig, out: Path, emit=print):
    """One row per dt: velocity errors at the final state and least-squares slopes.

    ``err_u`` compares ``u^{K+1/2}`` with the exact field at its own time
    ``t_end + dt/2``; ``err_u_tend`` compares the same field with the exact
    field at ``t_end``, a half-step offset that dominates at first order.
    """
    mesh = _mesh(cfg)
    ops = build_operators(mesh, cfg.p)
    dts = [cfg.dt / 2**i for i in range(cfg.halvings + 1)]
    csv = CsvWriter(out / "convergence_time.csv", ("dt", "err_u", "err_u_tend", "err_w"))
    rows = []
    emit("dt,err_u,err_u_tend,err_w")
    try:
        for dt in dts:
            state, _ = _initial(ops, cfg, dt)
            state, _ = run(state, t_end=cfg.t_end)
            eu, _ = _exact(cfg, state.t_u)
            eu_end, ew = _exact(cfg, cfg.t_end)
            row = (dt, l2_error(state.u, eu), l2_error(state.u, eu_end), l2_error(state.omega, ew))
            rows.append(row)
            csv.row(row)
            emit(",".join(_fmt(v) for v in row))
    finally:
        csv.close()
    arr = np.array(rows)
    summary = dict(slope_err_u=_slope(arr[:, 0], arr[:, 1]),
                   slope_err_u_tend=_slope(arr[:, 0], arr[:, 2]),
                   slope_err_w=_slope(arr[:, 0], arr[:, 3]),
                   rows=[list(map(float, r)) for r in rows])
    emit(f"slope_err_u,{_fmt(summary['slope_err_u'])}")
    emit(f"slope_err_u_tend,{_fmt(summary['slope_err_u_tend'])}")
    emit(f"slope_err_w,{_fmt(summary['slope_err_w'])}")
    if cfg.plot:
        from . import plotting
        plotting.convergence_figure(None, {
            "u at t_end + dt/2": (arr[:, 0], arr[:, 1]),
            "u against t_end": (arr[:, 0], arr[:, 2])}, out / "convergence_time.png", "dt")
    return summary


def run_convergence_space(cfg: RunConfig, out: Path, emit=print):
    """Errors on refined meshes per degree, each with its own dt; slopes per degree."""
    case = get_case(cfg.case)
    csv = CsvWriter(out / "convergence_space.csv", ("p", "n", "h", "dt", "err_u", "err_w"))
    emit("p,n,h,dt,err_u,err_w")
    table = {}
    skip = {tuple(s) for s in cfg.skip}
    try:
        for p in cfg.degrees:
            dt = cfg.dt_per_degree.get(p, cfg.dt)
            for n in cfg.levels:
                if (p, n) in skip:
                    emit(f"# skipped p={p} n={n}")
                    continue
                ops = build_operators(_mesh(cfg, n), p)
                state, _ = _initial(ops, cfg, dt)
                state, _ = run(state, t_end=cfg.t_end)
                r = _state_record(state, cfg)
                h = case.extent[0] / n
                row = (p, n, h, dt, r.err_u, r.err_w)
                table.setdefault(p, []).append(row)
                csv.row(row)
                emit(",".join(_fmt(v) for v in row))
    finally:
        csv.close()
    slopes = {}
    for p, rows in table.items():
        if len(rows) >= 2:
            arr = np.array(rows, dtype=float)
            slopes[p] = _slope(arr[:, 2], arr[:, 4])
            emit(f"slope_p{p},{_fmt(slopes[p])}")
    if cfg.plot:
        from . import plotting
        plotting.convergence_figure(None, {
            f"p = {p}": (np.array(rows)[:, 2], np.array(rows)[:, 4]) for p, rows in table.items()},
            out / "convergence_space.png", "h")
    return dict(slopes={str(k): v for k, v in slopes.items()},
                rows={str(k): [list(map(float, r)) for r in v] for k, v in table.items()})


def run_reversal(cfg: RunConfig, out: Path, emit=print):
    """Forward to ``t_end`` and back to 0; reports the vorticity and velocity recovery error."""
    mesh = _mesh(cfg)
    ops = build_operators(mesh, cfg.p)
    csv = CsvWriter(out / "diagnostics.csv", CSV_FIELDS)
    try:
        state0, _ = _initial(ops, cfg, cfg.dt)

        def observe(s, r=None):
            csv.row(record(ops, s.u, s.omega, s.t).row())

        observe(state0)
        fwd, _ = run(state0, t_end=cfg.t_end, callbacks=[observe])
        back, reps = run_reversed(fwd, t_back=0.0, callbacks=[observe])
    finally:
        csv.close()
    err_w = float(np.abs(back.omega.coefficients - state0.omega.coefficients).max())
    err_u = float(np.abs(back.u.coefficients - state0.u.coefficients).max())
    mism = [r.pressure_mismatch for r in reps if r.pressure_mismatch is not None]
    summary = dict(max_vorticity_error=err_w, max_velocity_error=err_u,
                   max_pressure_mismatch=max(mism) if mism else None)
    emit("key,value")
    for k, v in summary.items():
        emit(f"{k},{_fmt(v)}")
    if cfg.plot:
        from . import plotting
        diff = back.omega.with_coefficients(back.omega.coefficients - state0.omega.coefficients, 0.0)
        plotting.vorticity_figure(diff, out / "reversal_error.png", levels=[])
    return summary


RUNNERS = {
    "simulate": run_simulation,
    "converge-time": run_convergence_time,
    "converge-space": run_convergence_space,
    "reverse": run_reversal,
}


def main(argv=None) -> int:
    cfg = parse_config(argv)
    logging.basicConfig(level=logging.INFO if "-v" in (argv or sys.argv[1:]) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = dict(program="meevc", version=__version__, config=asdict(cfg))
        (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        result = RUNNERS[cfg.mode](cfg, out)
    except (SolverError, ConvergenceError) as exc:
        print(f"meevc: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (MeshError, OSError) as exc:
        print(f"meevc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest["result"] = result
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
