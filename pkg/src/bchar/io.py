"""Output files (CSV tables, legacy VTK snapshots) and the key=value run config."""
from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from bchar.errors import ConfigError
from bchar.mesh import Mesh

FLOAT_FMT = "{:.9e}"
# wall time is excluded so repeated runs write identical files; see TIMING_COLUMNS
DIAGNOSTIC_COLUMNS = (
    "step", "t", "mass", "mass_drift", "rebalance_error", "rebalance_iters", "opt_residual", "max_scale",
    "row_error", "col_error", "boundary_flux",
)
TIMING_COLUMNS = ("step", "wall_time")


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT.format(float(v))


def _open(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_diagnostics(path, diagnostics, columns: Sequence[str] = DIAGNOSTIC_COLUMNS) -> None:
    write_table(path, columns, ([getattr(d, c) for c in columns] for d in diagnostics))


def write_field(path, mesh: Mesh, values) -> None:
    """One row per cell: axis indices, cell center, value."""
    values = np.asarray(getattr(values, "values", values), dtype=float)
    axes = "ijk"[: mesh.dim]
    coords = "xyz"[: mesh.dim]
    ijk = np.stack(mesh.unravel(np.arange(mesh.n_cells)), axis=1)
    with _open(path) as fh:
        fh.write(",".join([*axes, *coords, "c"]) + "\n")
        for k in range(mesh.n_cells):
            parts = [str(int(v)) for v in ijk[k]] + [fmt(v) for v in mesh.centers[k]] + [fmt(values[k])]
            fh.write(",".join(parts) + "\n")


def write_vtk(path, mesh: Mesh, values, name: str = "c", title: str = "concentration") -> None:
    """Legacy ASCII STRUCTURED_POINTS file with one cell scalar.

    Cell data on a grid of (n+1) points per axis; 2D meshes are written as a
    single layer in z. Cell order is x fastest, as VTK expects.
    """
    values = np.asarray(getattr(values, "values", values), dtype=float)
    dims = list(mesh.dims) + [1] * (3 - mesh.dim)
    origin = list(mesh.lo) + [0.0] * (3 - mesh.dim)
    spacing = list(mesh.cell_size) + [1.0] * (3 - mesh.dim)
    with _open(path) as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS " + " ".join(str(n + 1) for n in dims) + "\n")
        fh.write("ORIGIN " + " ".join(fmt(v) for v in origin) + "\n")
        fh.write("SPACING " + " ".join(fmt(v) for v in spacing) + "\n")
        fh.write(f"CELL_DATA {mesh.n_cells}\n")
        fh.write(f"SCALARS {name} double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for v in values:
            fh.write(fmt(v) + "\n")


def read_vtk_cells(path) -> np.ndarray:
    """Cell scalars of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    start = next(i for i, s in enumerate(lines) if s.startswith("LOOKUP_TABLE")) + 1
    return np.array([float(s) for s in lines[start:] if s.strip()])


# -- run configuration --------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key.replace("-", "_")] = value
    return out


def read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config_text(text, os.fspath(path))


def parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(s) for s in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad size {text!r}; expected e.g. 16x16 or 16x16x16") from None
    if len(dims) not in (2, 3) or any(d <= 0 for d in dims):
        raise ConfigError(f"bad size {text!r}; expected 2 or 3 positive counts like 16x16")
    return dims


def parse_float_list(text: str) -> list[float]:
    text = str(text).strip()
    if not text:
        return []
    try:
        return [float(eval_number(s)) for s in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def eval_number(text: str) -> float:
    """A float, also accepting ``pi`` products and quotients such as ``2*pi/10``."""
    s = str(text).strip().lower().replace(" ", "")
    try:
        return float(s)
    except ValueError:
        pass
    allowed = set("0123456789.e+-*/()pi")
    if not s or not set(s) <= allowed:
        raise ValueError(f"not a number: {text!r}")
    try:
        return float(eval(s, {"__builtins__": {}}, {"pi": np.pi}))  # noqa: S307 - charset checked above
    except Exception:
        raise ValueError(f"not a number: {text!r}") from None
