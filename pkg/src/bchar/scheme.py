"""B-char ELLAM time stepping."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from bchar.balls import DEFAULT_PACKING, BallCloud, pack_cells
from bchar.errors import BcharError, InfeasibleError
from bchar.flow import DEFAULT_SUBSTEPS, VelocityField, track_cloud
from bchar.mesh import GhostLayout, Mesh, with_ghost_layers
from bchar.optimizer import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    apply_adjustment,
    assemble_constraints,
    equality_correction,
    solve_min_norm,
    within_bounds,
)
from bchar.volume_matrix import (
    DEFAULT_REBALANCE_ITERS,
    DEFAULT_REBALANCE_TOL,
    VolumeMatrix,
    build_initial_matrix,
    rebalance,
)

log = logging.getLogger(__name__)

DEFAULT_PROJECTION_SAMPLES = 10


@dataclass(frozen=True)
class SchemeConfig:
    balls_per_axis: Optional[tuple] = None  # default 2 per axis
    packing: float = DEFAULT_PACKING
    rebalance_iters: int = DEFAULT_REBALANCE_ITERS
    rebalance_tol: float = DEFAULT_REBALANCE_TOL
    rebalance_fit_iters: int = 200  # cap when extending past rebalance_iters before a solve
    rebalance_max_iters: int = 3200  # hard cap when the bound-constrained solve is infeasible
    opt_tol: float = DEFAULT_TOL
    opt_max_iters: int = DEFAULT_MAX_ITERS
    substeps: int = DEFAULT_SUBSTEPS
    cardinal_points: Optional[int] = None
    estimate_radii: Optional[bool] = None  # None: only when porosity varies
    dt: Optional[float] = None
    times: Optional[tuple] = None
    projection_samples: Optional[int] = None  # per axis; falls back to the case, then 10

    def time_grid(self, final_time: float) -> np.ndarray:
        """Time levels t^(0)=0 < ... < t^(N)=T."""
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            if t[0] != 0.0:
                t = np.concatenate([[0.0], t])
        elif final_time == 0:
            t = np.zeros(1)
        else:
            if self.dt is None or not self.dt > 0:
                raise BcharError("a positive time step or an explicit time list is required")
            n = int(round(final_time / self.dt))
            if n < 1 or abs(n * self.dt - final_time) > 1e-9 * max(1.0, final_time):
                n = max(int(np.ceil(final_time / self.dt - 1e-9)), 1)
            t = np.array([k * self.dt for k in range(n)] + [final_time], dtype=float)
        if np.any(np.diff(t) <= 0):
            raise BcharError("time levels must be strictly increasing")
        if abs(t[-1] - final_time) > 1e-9 * max(1.0, final_time):
            raise BcharError(f"time levels end at {t[-1]}, expected final time {final_time}")
        return t


@dataclass(frozen=True)
class ConcentrationField:
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise BcharError(f"non-finite concentration at t={self.t}")


@dataclass
class StepDiagnostics:
    step: int
    t: float
    mass: float
    mass_drift: float
    rebalance_error: float
    rebalance_iters: int
    opt_residual: float
    max_scale: float
    opt_iters: int
    n_unknowns: int
    clamped: int
    c_min: float
    c_max: float
    wall_time: float
    row_error: float = 0.0
    col_error: float = 0.0
    boundary_flux: float = 0.0  # net mass entering through the boundary this step


@dataclass
class RunResult:
    mesh: Mesh
    cloud: BallCloud
    times: np.ndarray
    initial: ConcentrationField
    final: ConcentrationField
    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    last_matrix: Optional[VolumeMatrix] = None

    @property
    def n_steps(self) -> int:
        return len(self.diagnostics)


def projection_samples(case, config: SchemeConfig) -> int:
    if config.projection_samples is not None:
        return int(config.projection_samples)
    return int(getattr(case, "projection_samples", None) or DEFAULT_PROJECTION_SAMPLES)


def total_mass(c: np.ndarray, mesh: Mesh) -> float:
    return float(np.sum(c * mesh.porous_volume))


def project_initial(mesh: Mesh, c_ini: Callable, samples_per_axis: int = DEFAULT_PROJECTION_SAMPLES) -> ConcentrationField:
    """Cell averages of ``c_ini`` by composite midpoint rule on a q^d grid per cell."""
    q = int(samples_per_axis)
    if q < 1:
        raise ValueError("samples_per_axis must be >= 1")
    frac = (np.arange(q) + 0.5) / q - 0.5
    local = np.stack(np.meshgrid(*([frac] * mesh.dim), indexing="ij"), axis=-1).reshape(-1, mesh.dim)
    local = local * mesh.cell_size
    out = np.empty(mesh.n_cells)
    chunk = max(1, 2_000_000 // local.shape[0])
    for s in range(0, mesh.n_cells, chunk):
        pts = (mesh.centers[s : s + chunk, None, :] + local[None, :, :]).reshape(-1, mesh.dim)
        out[s : s + chunk] = np.asarray(c_ini(pts), dtype=float).reshape(-1, local.shape[0]).mean(axis=1)
    return ConcentrationField(out, 0.0)


def step_matrix(
    cloud: BallCloud,
    field_: VelocityField,
    t_next: float,
    dt: float,
    config: SchemeConfig,
    ghost: Optional[GhostLayout] = None,
):
    """Volume approximation and adjustment for one step; returns (matrix, info dict)."""
    tracked = track_cloud(field_, cloud, t_next, dt, config.substeps, config.cardinal_points, config.estimate_radii)
    a0 = build_initial_matrix(cloud, tracked, ghost)
    a_n, reb_err, reb_iters = rebalance(a0, config.rebalance_iters, config.rebalance_tol)
    fit_cap = max(config.rebalance_fit_iters, config.rebalance_iters)
    hard_cap = max(config.rebalance_max_iters, fit_cap)
    if reb_err > config.rebalance_tol and reb_iters < fit_cap:
        # keep scaling until the balance error reaches the target
        a_n, reb_err, more = rebalance(a_n, fit_cap - reb_iters, config.rebalance_tol)
        reb_iters += more
    # Scaling is cheap next to a bound-constrained solve: keep scaling while
    # the least-norm correction would leave the box (a factor above 2 or a
    # nonpositive entry), then solve.
    system = assemble_constraints(a_n)
    while reb_iters < fit_cap and not within_bounds(equality_correction(system)):
        a_n, reb_err, more = rebalance(a_n, min(max(config.rebalance_iters, 1), fit_cap - reb_iters), 0.0)
        reb_iters += more
        system = assemble_constraints(a_n)
        log.debug("correction out of bounds; rebalanced to %d iterations (error %.3e)", reb_iters, reb_err)
    while True:
        try:
            x, info = solve_min_norm(system, config.opt_tol, config.opt_max_iters)
            break
        except InfeasibleError:
            # scaling drives entries that cannot be balanced towards zero; give it more room
            if reb_iters >= hard_cap:
                raise
            more_iters = min(max(reb_iters, 1), hard_cap - reb_iters)
            a_n, reb_err, more = rebalance(a_n, more_iters, 0.0)
            reb_iters += more
            system = assemble_constraints(a_n)
            log.info("bounded correction infeasible; rebalanced to %d iterations (error %.3e)", reb_iters, reb_err)
    a = apply_adjustment(a_n, x)
    return a, dict(
        rebalance_error=reb_err,
        rebalance_iters=reb_iters,
        opt=info,
        clamped=tracked.n_clamped,
        initial_error=a0.balance_error(),
    )


def advance_step(
    state: ConcentrationField,
    mesh: Mesh,
    cloud: BallCloud,
    field_: VelocityField,
    dt: float,
    config: SchemeConfig,
    step: int = 0,
    mass0: Optional[float] = None,
    ghost: Optional[GhostLayout] = None,
    exterior_value: float = 0.0,
):
    """One ELLAM step: |K|_phi c_K^(n+1) = sum_M a_KM c_M^(n).

    ``mass0`` is the mass expected before this step (initial mass plus any
    net boundary inflow so far); the reported drift compares against it
    after adding this step's inflow. With a ``ghost`` layout the exterior
    node carries the concentration ``exterior_value``.
    """
    t0 = time.perf_counter()
    t_next = state.t + dt
    try:
        a, info = step_matrix(cloud, field_, t_next, dt, config, ghost)
    except BcharError as exc:
        raise type(exc)(f"step {step}: {exc}") from exc
    n = mesh.n_cells
    c_old = state.values if ghost is None else np.append(state.values, exterior_value)
    c = a.apply(c_old)[:n] / mesh.porous_volume
    flux = 0.0
    if ghost is not None:
        g = ghost.exterior
        into = (a.cols == g) & (a.rows != g)
        out = (a.rows == g) & (a.cols != g)
        flux = float(np.sum(a.values[into]) * exterior_value - np.sum(a.values[out] * c_old[a.cols[out]]))
    new = ConcentrationField(c, t_next)
    mass = total_mass(c, mesh)
    ref = (total_mass(state.values, mesh) if mass0 is None else mass0) + flux
    rows = np.abs(a.row_sums() - a.row_target) / a.row_target
    cols = np.abs(a.col_sums() - a.col_target) / a.col_target
    diag = StepDiagnostics(
        step=step,
        t=t_next,
        mass=mass,
        mass_drift=abs(mass - ref) / abs(ref) if ref else abs(mass - ref),
        rebalance_error=info["rebalance_error"],
        rebalance_iters=info["rebalance_iters"],
        opt_residual=info["opt"].residual,
        max_scale=1.0 + info["opt"].max_abs_x,
        opt_iters=info["opt"].iterations,
        n_unknowns=info["opt"].n_unknowns,
        clamped=info["clamped"],
        c_min=float(c.min()),
        c_max=float(c.max()),
        wall_time=time.perf_counter() - t0,
        row_error=float(rows.max()),
        col_error=float(cols.max()),
        boundary_flux=flux,
    )
    log.info(
        "step %d t=%.4f mass=%.12e drift=%.2e rebalance=%.3e residual=%.2e c=[%.4f, %.4f]",
        step, t_next, mass, diag.mass_drift, diag.rebalance_error, diag.opt_residual, diag.c_min, diag.c_max,
    )
    return new, diag, a


def ghost_layers_needed(field_: VelocityField, mesh: Mesh, times: np.ndarray, margin: float = 1.25) -> int:
    """Padding depth covering one step's displacement, estimated from cell-center speeds."""
    speed = 0.0
    levels = times if field_.time_dependent else times[:1]
    for t in levels:
        u = field_(mesh.centers, float(t)) / mesh.porosity[:, None]
        speed = max(speed, float(np.max(np.linalg.norm(u, axis=1))))
    reach = margin * speed * float(np.max(np.diff(times), initial=0.0)) / float(np.min(mesh.cell_size))
    return int(np.ceil(reach)) + 2


def run(
    case,
    config: SchemeConfig,
    dims: Optional[Sequence[int]] = None,
    snapshot_times: Sequence[float] = (),
    velocity_scale: float = 1.0,
    initial: Optional[ConcentrationField] = None,
    on_step: Optional[Callable] = None,
) -> RunResult:
    """Simulate ``case`` from its projected initial data to its final time.

    ``on_step(diagnostics, matrix, ghost)`` is called after every step, so
    callers can push further fields through the same matrices.
    """
    mesh = case.mesh(dims)
    if config.dt is None and config.times is None:
        config = replace(config, dt=case.default_dt)
    if config.estimate_radii is None and getattr(case, "estimate_radii", None) is not None:
        config = replace(config, estimate_radii=case.estimate_radii)
    times = config.time_grid(case.final_time)
    field_ = case.velocity if velocity_scale == 1.0 else case.velocity.scaled(velocity_scale)
    ghost = None
    if case.boundary == "ghost":
        ghost = with_ghost_layers(mesh, ghost_layers_needed(field_, mesh, times))
        log.info("padding the mesh with %d ghost layers", ghost.layers)
    cloud = pack_cells(mesh if ghost is None else ghost.extended, config.balls_per_axis, config.packing)
    state = initial if initial is not None else project_initial(mesh, case.initial, projection_samples(case, config))
    init = state
    mass0 = total_mass(state.values, mesh)
    result = RunResult(mesh, cloud, times, init, init)
    pending = sorted(float(s) for s in snapshot_times)
    for s in [s for s in pending if s <= 0.0]:
        result.snapshots.append(init)
        pending.remove(s)
    for n in range(len(times) - 1):
        dt = times[n + 1] - times[n]
        state = ConcentrationField(state.values, times[n])
        state, diag, a = advance_step(
            state, mesh, cloud, field_, dt, config, n + 1, mass0, ghost, case.exterior_value
        )
        mass0 += diag.boundary_flux
        if on_step is not None:
            on_step(diag, a, ghost)
        result.diagnostics.append(diag)
        result.last_matrix = a
        while pending and pending[0] <= state.t + 1e-9:
            result.snapshots.append(state)
            pending.pop(0)
    result.final = state
    return result


def error_norms(computed, reference, mesh: Mesh) -> tuple[float, float]:
    """Relative discrete L1 and L2 errors of piecewise-constant fields."""
    c = getattr(computed, "values", computed)
    r = getattr(reference, "values", reference)
    w = mesh.cell_volume
    diff = np.asarray(c, float) - np.asarray(r, float)
    n1 = np.sum(np.abs(r)) * w
    n2 = np.sqrt(np.sum(r * r) * w)
    if n1 == 0:
        raise BcharError("reference field has zero norm")
    return float(np.sum(np.abs(diff)) * w / n1), float(np.sqrt(np.sum(diff * diff) * w) / n2)


def reference_field(case, mesh: Mesh, config: SchemeConfig, refine_levels: int = 2, euler_dt: float = 1e-3):
    """Reference at the final time: exact projection, benchmark, or projected initial data."""
    from bchar.cases import benchmark_reference

    if case.reference == "exact":
        return project_initial(mesh, case.exact, projection_samples(case, config)).values
    if case.reference == "benchmark":
        return benchmark_reference(case, mesh, refine_levels, euler_dt)
    return project_initial(mesh, case.initial, projection_samples(case, config)).values
