"""Velocity fields, backward characteristic tracking, and tracked balls."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from bchar.balls import Ball, BallCloud, ball_volume
from bchar.errors import TrackingError
from bchar.mesh import Mesh

DEFAULT_SUBSTEPS = 16


@dataclass(frozen=True)
class VelocityField:
    """Velocity ``evaluator(points, t) -> velocities`` for points of shape (n, d)."""

    evaluator: Callable[[np.ndarray, float], np.ndarray]
    divergence_free: bool = True
    time_dependent: bool = False
    name: str = "custom"

    def __call__(self, points, t: float = 0.0) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_2d(points), t), dtype=float)

    def scaled(self, factor: float) -> "VelocityField":
        ev = self.evaluator
        return VelocityField(
            lambda x, t: factor * np.asarray(ev(x, t), dtype=float),
            self.divergence_free,
            self.time_dependent,
            f"{self.name}*{factor:g}",
        )


@dataclass(frozen=True, eq=False)
class TrackedBall:
    center: tuple[float, ...]
    radius: float
    equiv_porosity: float
    source: tuple[int, int]


@dataclass(frozen=True, eq=False)
class TrackedCloud:
    centers: np.ndarray  # (n_b, d)
    radii: np.ndarray
    equiv_porosity: np.ndarray
    cell: np.ndarray
    slot: np.ndarray
    ball_porous_volume: np.ndarray  # rho_K * phi_hat * |B_hat| per ball
    tracked_volume: np.ndarray  # |F_{-dt}(K)|_phi per cell
    n_clamped: int = 0

    def ball(self, index: int) -> TrackedBall:
        return TrackedBall(
            tuple(self.centers[index]),
            float(self.radii[index]),
            float(self.equiv_porosity[index]),
            (int(self.cell[index]), int(self.slot[index])),
        )


def track_points(
    field: VelocityField,
    mesh: Mesh,
    points,
    t_from: float,
    t_to: float,
    substeps: int = DEFAULT_SUBSTEPS,
) -> tuple[np.ndarray, int]:
    """Integrate dX/dt = u(X, t) / phi(X) from ``t_from`` to ``t_to`` with classical RK4.

    Back-tracking uses ``t_to < t_from``. Stage points leaving the closed
    domain are clamped onto its boundary (wrapped on periodic axes); the
    number of clamping events is returned with the end points.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.array(np.atleast_2d(points), dtype=float)
    h = (t_to - t_from) / substeps
    if h == 0.0 or x.size == 0:
        return x, 0

    def rate(p, t):
        return field(p, t) / mesh.porosity_at(p)[:, None]

    clamped = 0
    t = t_from
    for _ in range(substeps):
        k1 = rate(x, t)
        p, n = mesh.confine(x + 0.5 * h * k1)
        clamped += n
        k2 = rate(p, t + 0.5 * h)
        p, n = mesh.confine(x + 0.5 * h * k2)
        clamped += n
        k3 = rate(p, t + 0.5 * h)
        p, n = mesh.confine(x + h * k3)
        clamped += n
        k4 = rate(p, t + h)
        x, n = mesh.confine(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        clamped += n
        t += h
    return x, clamped


def track_point(field, mesh, start, t_end, t_start, substeps=DEFAULT_SUBSTEPS) -> np.ndarray:
    """Foot at ``t_start`` of the characteristic through ``start`` at ``t_end``."""
    x, _ = track_points(field, mesh, np.asarray(start, float)[None, :], t_end, t_start, substeps)
    return x[0]


def cardinal_offsets(dim: int, count: int) -> np.ndarray:
    """Unit directions of the points tracked on a ball surface to estimate its radius.

    4 in 2D and 6 in 3D give the axis-aligned points; other counts spread
    points evenly (circle) or on a Fibonacci lattice (sphere).
    """
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if count == 6:
        eye = np.eye(3)
        return np.concatenate([eye, -eye])
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    theta = np.pi * (1.0 + 5**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(theta), s * np.sin(theta), z], axis=1)


def default_cardinal_points(dim: int) -> int:
    return 4 if dim == 2 else 6


def _tracked_radii(field, mesh, centers, radii, tracked_centers, t_from, t_to, substeps, count):
    dirs = cardinal_offsets(mesh.dim, count)
    pts = (centers[:, None, :] + radii[:, None, None] * dirs[None, :, :]).reshape(-1, mesh.dim)
    feet, clamped = track_points(field, mesh, pts, t_from, t_to, substeps)
    feet = feet.reshape(centers.shape[0], count, mesh.dim)
    dist = np.linalg.norm(mesh.displacement(feet, tracked_centers[:, None, :]), axis=2)
    r_hat = dist.mean(axis=1)
    collapsed = np.flatnonzero(np.max(dist, axis=1) <= 1e-14)
    return r_hat, collapsed, clamped


def track_cloud(
    field: VelocityField,
    cloud: BallCloud,
    t_next: float,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
    cardinal_points: int | None = None,
    estimate_radii: bool | None = None,
) -> TrackedCloud:
    """Track every resident ball from ``t_next`` back to ``t_next - dt``.

    Radii are re-estimated from tracked surface points when the porosity
    varies, or always when ``estimate_radii`` is true; otherwise they are
    kept.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    mesh = cloud.mesh
    t_prev = t_next - dt
    centers, clamped = track_points(field, mesh, cloud.centers, t_next, t_prev, substeps)

    phi_k = mesh.porosity[cloud.cell]
    if estimate_radii is None:
        estimate_radii = not mesh.constant_porosity
    if not estimate_radii:
        radii = np.array(cloud.radii, dtype=float)
        phi_hat = np.array(phi_k, dtype=float)
    else:
        count = default_cardinal_points(mesh.dim) if cardinal_points is None else int(cardinal_points)
        if count <= 0:
            raise TrackingError("non-constant porosity needs cardinal_points > 0 to estimate radii")
        radii, collapsed, extra = _tracked_radii(
            field, mesh, cloud.centers, cloud.radii, centers, t_next, t_prev, substeps, count
        )
        clamped += extra
        if collapsed.size:
            b = int(collapsed[0])
            raise TrackingError(
                f"tracked ball {b} (cell {cloud.cell[b]}, slot {cloud.slot[b]}) collapsed onto its center"
            )
        # porous volume of each ball is carried unchanged by a solenoidal flow
        phi_hat = phi_k * ball_volume(cloud.radii, mesh.dim) / ball_volume(radii, mesh.dim)

    rho = cloud.density[cloud.cell]
    ball_pv = rho * phi_hat * ball_volume(radii, mesh.dim)
    if field.divergence_free:
        tracked_volume = np.array(mesh.porous_volume, dtype=float)
    else:
        tracked_volume = np.bincount(cloud.cell, weights=ball_pv, minlength=mesh.n_cells)
    return TrackedCloud(
        centers=centers,
        radii=radii,
        equiv_porosity=phi_hat,
        cell=cloud.cell,
        slot=cloud.slot,
        ball_porous_volume=ball_pv,
        tracked_volume=tracked_volume,
        n_clamped=clamped,
    )


def track_ball(
    field: VelocityField,
    mesh: Mesh,
    ball: Ball,
    source: tuple[int, int],
    t_end: float,
    t_start: float,
    substeps: int = DEFAULT_SUBSTEPS,
    cardinal_points: int | None = None,
) -> TrackedBall:
    """Single-ball form of the tracking done in :func:`track_cloud`."""
    c = np.asarray(ball.center, float)[None, :]
    r = np.array([ball.radius])
    center, _ = track_points(field, mesh, c, t_end, t_start, substeps)
    phi_k = float(mesh.porosity[source[0]])
    if mesh.constant_porosity:
        return TrackedBall(tuple(center[0]), float(ball.radius), phi_k, source)
    count = default_cardinal_points(mesh.dim) if cardinal_points is None else int(cardinal_points)
    if count <= 0:
        raise TrackingError("non-constant porosity needs cardinal_points > 0 to estimate radii")
    r_hat, collapsed, _ = _tracked_radii(field, mesh, c, r, center, t_end, t_start, substeps, count)
    if collapsed.size:
        raise TrackingError(f"tracked ball from cell {source[0]}, slot {source[1]} collapsed onto its center")
    r_out = float(r_hat[0])
    phi_hat = phi_k * float(ball_volume(ball.radius, mesh.dim) / ball_volume(r_out, mesh.dim))
    return TrackedBall(tuple(center[0]), r_out, phi_hat, source)
