"""Command-line driver: ``bchar run``, ``bchar convergence``, ``bchar cases``, ``bchar selftest``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from bchar import io
from bchar.cases import CASE_NAMES, CaseSpec, builtin_case, custom_case
from bchar.errors import BcharError, ConfigError
from bchar.scheme import SchemeConfig, error_norms, reference_field, run

log = logging.getLogger("bchar")

# config key -> (flag, help); every flag has a config equivalent
RUN_KEYS = {
    "case": "built-in case name, or 'custom'",
    "mesh": "cells per axis, e.g. 16x16 or 16x16x16",
    "dt": "time step (accepts expressions like 2*pi/10)",
    "times": "explicit comma-separated time levels (overrides dt)",
    "balls": "balls per cell per axis, e.g. 2x2",
    "packing": "ball radius relative to the sub-cell half width",
    "rebalance_iters": "scaling iterations N per step",
    "rebalance_tol": "early-stop tolerance of the scaling iteration",
    "rebalance_fit_iters": "cap on scaling iterations when extending past N before a solve",
    "rebalance_max_iters": "hard cap on scaling iterations when the bounded solve is infeasible",
    "opt_tol": "relative residual tolerance of the mass constraints",
    "opt_max_iters": "iteration cap of the bound-constrained solver",
    "substeps": "RK4 substeps per tracking step",
    "cardinal_points": "tracked points per ball for radius estimation (2d or 2d*(d-1))",
    "estimate_radii": "re-estimate tracked radii: auto, true or false",
    "projection_samples": "samples per cell axis for initial/exact projection",
    "velocity_scale": "multiply the velocity field by this factor",
    "output": "output directory",
    "snapshots": "comma-separated snapshot times for VTK output",
    "vtk": "write VTK files of the initial, final and snapshot fields (true/false)",
    "dump_matrix": "write the last step's volume matrix as (row, col, value) triplets (true/false)",
    "plot": "write PNG figures (true/false)",
    "timing": "write per-step wall times to timing.csv (true/false)",
    "threads": "cap on BLAS/LAPACK worker threads",
    "log_level": "debug, info, warning or error",
    # custom case block
    "field": "custom velocity family: translation, rotation_stretch, solid_rotation, deformation",
    "field_params": "JSON object of family parameters, e.g. {\"speed\": [0.1, 0]}",
    "initial": "custom initial condition: box, disk, gaussian, cosine_bell, solid_body, constant",
    "initial_params": "JSON object of initial-condition parameters",
    "final_time": "custom case final time",
    "dim": "custom case dimension",
}
BOOL_KEYS = {"vtk", "dump_matrix", "plot", "timing"}
CONVERGENCE_KEYS = {"meshes": "comma-separated mesh list, e.g. 16x16,32x32", "dts": "comma-separated time steps"}


def _truthy(value, key: str) -> bool:
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"{key}: expected true or false, got {value!r}")


def _int(value, key: str) -> int:
    try:
        return int(str(value).strip())
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _num(value, key: str) -> float:
    try:
        return io.eval_number(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _json(value, key: str) -> dict:
    try:
        out = json.loads(value)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{key}: invalid JSON ({exc.msg})") from None
    if not isinstance(out, dict):
        raise ConfigError(f"{key}: expected a JSON object")
    return out


@dataclass
class RunConfig:
    case: CaseSpec
    dims: Optional[tuple]
    scheme: SchemeConfig
    output: Path
    snapshots: list = field(default_factory=list)
    vtk: bool = False
    dump_matrix: bool = False
    plot: bool = False
    timing: bool = False
    velocity_scale: float = 1.0
    threads: Optional[int] = None


def merge_settings(config_path: Optional[str], flags: dict) -> dict[str, str]:
    """File values first, then flags (flags win). Unknown keys are rejected."""
    settings = io.read_config(config_path) if config_path else {}
    settings.update({k: v for k, v in flags.items() if v is not None})
    known = set(RUN_KEYS) | set(CONVERGENCE_KEYS)
    unknown = sorted(set(settings) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return settings


def resolve_case(s: dict) -> CaseSpec:
    name = s.get("case")
    if not name:
        raise ConfigError("no case given; use --case or case= in the config file")
    if name != "custom":
        return builtin_case(name)
    for key in ("field", "initial", "final_time"):
        if key not in s:
            raise ConfigError(f"custom case needs {key}=")
    return custom_case(
        s["field"],
        _json(s.get("field_params", "{}"), "field_params"),
        s["initial"],
        _json(s.get("initial_params", "{}"), "initial_params"),
        _num(s["final_time"], "final_time"),
        dim=_int(s.get("dim", "2"), "dim"),
    )


def build_run_config(s: dict) -> RunConfig:
    case = resolve_case(s)
    dims = io.parse_dims(s["mesh"]) if "mesh" in s else None
    if dims is not None and len(dims) != case.dim:
        raise ConfigError(f"mesh {s['mesh']} has {len(dims)} axes but case {case.name} is {case.dim}D")
    kw = {}
    if "balls" in s:
        balls = io.parse_dims(s["balls"])
        if len(balls) != case.dim:
            raise ConfigError(f"balls {s['balls']} does not match the case dimension {case.dim}")
        kw["balls_per_axis"] = balls
    int_keys = ("rebalance_iters", "rebalance_fit_iters", "rebalance_max_iters", "opt_max_iters", "substeps",
                "cardinal_points", "projection_samples")
    for key in int_keys:
        if key in s:
            kw[key] = _int(s[key], key)
    for key in ("dt", "packing", "rebalance_tol", "opt_tol"):
        if key in s:
            kw[key] = _num(s[key], key)
    if "times" in s:
        kw["times"] = tuple(io.parse_float_list(s["times"]))
    if "estimate_radii" in s:
        v = str(s["estimate_radii"]).strip().lower()
        kw["estimate_radii"] = None if v == "auto" else _truthy(v, "estimate_radii")
    out = Path(s.get("output", "bchar_out"))
    threads = s.get("threads") or os.environ.get("BCHAR_THREADS")
    return RunConfig(
        case=case,
        dims=dims,
        scheme=SchemeConfig(**kw),
        output=out,
        snapshots=io.parse_float_list(s.get("snapshots", "")),
        vtk=_truthy(s.get("vtk", "false"), "vtk"),
        dump_matrix=_truthy(s.get("dump_matrix", "false"), "dump_matrix"),
        plot=_truthy(s.get("plot", "false"), "plot"),
        timing=_truthy(s.get("timing", "false"), "timing"),
        velocity_scale=_num(s.get("velocity_scale", "1"), "velocity_scale"),
        threads=_int(threads, "threads") if threads else None,
    )


def _thread_limit(n: Optional[int]):
    from threadpoolctl import threadpool_limits

    if n is not None and n < 1:
        raise ConfigError("threads must be positive")
    return threadpool_limits(limits=n)


def execute_run(rc: RunConfig, out=None) -> dict:
    """Run one simulation, write its files and print the errors; returns a summary."""
    out = sys.stdout if out is None else out
    rc.output.mkdir(parents=True, exist_ok=True)
    result = run(rc.case, rc.scheme, rc.dims, rc.snapshots, rc.velocity_scale)
    mesh = result.mesh
    io.write_diagnostics(rc.output / "diagnostics.csv", result.diagnostics)
    io.write_field(rc.output / "final_field.csv", mesh, result.final)
    if rc.timing:
        io.write_diagnostics(rc.output / "timing.csv", result.diagnostics, io.TIMING_COLUMNS)
    if rc.vtk:
        io.write_vtk(rc.output / "field_initial.vtk", mesh, result.initial, title=f"{rc.case.name} t=0")
        for k, snap in enumerate(result.snapshots):
            io.write_vtk(rc.output / f"snapshot_{k:03d}.vtk", mesh, snap, title=f"{rc.case.name} t={snap.t:.9e}")
        io.write_vtk(rc.output / "field_final.vtk", mesh, result.final, title=f"{rc.case.name} t={result.final.t:.9e}")
    if rc.dump_matrix and result.last_matrix is not None:
        m = result.last_matrix
        io.write_table(rc.output / "matrix.csv", ("row", "col", "value"),
                       ((int(r), int(c), v) for r, c, v in zip(m.rows, m.cols, m.values)))
    summary = {"steps": result.n_steps}
    if rc.velocity_scale == 0.0:
        # no motion: the exact solution is the initial projection
        ref = result.initial.values
    else:
        ref = reference_field(rc.case, mesh, rc.scheme)
    e1, e2 = error_norms(result.final, ref, mesh)
    summary.update(E1=e1, E2=e2)
    print(f"E1={e1:.2e} E2={e2:.2e}", file=out)
    if rc.plot:
        from bchar import plotting

        plotting.plot_fields(rc.output / "fields.png", mesh, [result.initial, result.final, ref],
                             ["initial", f"computed t={result.final.t:.3g}", "reference"])
        plotting.plot_diagnostics(rc.output / "diagnostics.png", result.diagnostics)
    return summary


def execute_convergence(case: CaseSpec, scheme: SchemeConfig, meshes: Sequence, dts: Sequence[float],
                        output: Path, plot: bool = False, velocity_scale: float = 1.0, out=None) -> list:
    out = sys.stdout if out is None else out
    if len(meshes) != len(dts):
        raise ConfigError(f"{len(meshes)} meshes but {len(dts)} time steps; the lists must have equal length")
    if not meshes:
        raise ConfigError("empty mesh list")
    rows = []
    for dims, dt in zip(meshes, dts):
        if len(dims) != case.dim:
            raise ConfigError(f"mesh {'x'.join(map(str, dims))} does not match the case dimension {case.dim}")
        cfg = replace(scheme, dt=dt, times=None)
        t0 = time.perf_counter()
        result = run(case, cfg, dims, velocity_scale=velocity_scale)
        wall = time.perf_counter() - t0
        e1, e2 = error_norms(result.final, reference_field(case, result.mesh, cfg), result.mesh)
        rows.append(("x".join(map(str, dims)), dt, e1, e2, wall / max(result.n_steps, 1)))
    output.mkdir(parents=True, exist_ok=True)
    io.write_table(output / "convergence.csv", ("mesh", "dt", "E1", "E2", "wall_per_step"), rows)
    header = f"{'mesh':>12} {'dt':>12} {'E1':>12} {'E2':>12} {'s/step':>10}"
    print(header, file=out)
    for m, dt, e1, e2, w in rows:
        print(f"{m:>12} {dt:12.4e} {e1:12.4e} {e2:12.4e} {w:10.3f}", file=out)
    if plot:
        from bchar import plotting

        h = [1.0 / io.parse_dims(r[0])[0] for r in rows]
        plotting.plot_convergence(output / "convergence.png", h, [r[2] for r in rows], [r[3] for r in rows], case.name)
    return rows


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="key=value config file")
    for key, text in RUN_KEYS.items():
        flag = "--" + key.replace("_", "-")
        if key in BOOL_KEYS:
            p.add_argument(flag, dest=key, action="store_const", const="true", help=text)
        else:
            p.add_argument(flag, dest=key, metavar=key.upper(), help=text)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bchar", description="Mass-conservative ball-tracking advection simulator")
    sub = p.add_subparsers(dest="verb", required=True)
    _add_run_flags(sub.add_parser("run", help="run one simulation"))
    conv = sub.add_parser("convergence", help="errors over a mesh/time-step ladder")
    _add_run_flags(conv)
    for key, text in CONVERGENCE_KEYS.items():
        conv.add_argument("--" + key, dest=key, metavar=key.upper(), help=text)
    sub.add_parser("cases", help="list built-in cases")
    st = sub.add_parser("selftest", help="run the fast property tests")
    st.add_argument("pytest_args", nargs="*", help="extra arguments passed to pytest")
    return p


def _flags(ns: argparse.Namespace, keys) -> dict:
    return {k: getattr(ns, k, None) for k in keys}


def _configure_logging(level: str) -> None:
    lvl = getattr(logging, str(level).upper(), None)
    if not isinstance(lvl, int):
        raise ConfigError(f"unknown log level {level!r}")
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _selftest(extra: list) -> int:
    try:
        import pytest
    except ImportError:
        print("error: selftest needs pytest installed", file=sys.stderr)
        return 2
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print(f"error: test directory not found at {tests}", file=sys.stderr)
        return 2
    return int(pytest.main([str(tests), "-q", "-m", "not slow", *extra]))


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = _parser().parse_args(argv)
    try:
        if ns.verb == "cases":
            for name in CASE_NAMES:
                c = builtin_case(name)
                dims = "x".join(map(str, c.default_dims))
                print(f"{name:<14} {c.dim}D  mesh {dims:<9} dt {c.default_dt:.4g}  T {c.final_time:.4g}  {c.description}")
            return 0
        if ns.verb == "selftest":
            return _selftest(ns.pytest_args)
        keys = list(RUN_KEYS) + (list(CONVERGENCE_KEYS) if ns.verb == "convergence" else [])
        s = merge_settings(ns.config, _flags(ns, keys))
        _configure_logging(s.get("log_level", "warning"))
        rc = build_run_config(s)
        with _thread_limit(rc.threads):
            if ns.verb == "run":
                execute_run(rc)
            else:
                if "meshes" not in s or "dts" not in s:
                    raise ConfigError("convergence needs --meshes and --dts")
                meshes = [io.parse_dims(m) for m in s["meshes"].split(",")]
                execute_convergence(rc.case, rc.scheme, meshes, io.parse_float_list(s["dts"]), rc.output,
                                    rc.plot, rc.velocity_scale)
        return 0
    except BcharError as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
