"""Ball packing of cells, porous densities, and ball/ball intersection volumes."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from bchar.errors import PackingError
from bchar.mesh import Mesh

DEFAULT_PACKING = 0.98


def ball_volume(radius, dim: int):
    r = np.asarray(radius, dtype=float)
    if dim == 2:
        return np.pi * r**2
    if dim == 3:
        return 4.0 / 3.0 * np.pi * r**3
    raise ValueError(f"dimension must be 2 or 3, got {dim}")


def lens_volume(ra, rb, dist, dim: int):
    """Exact measure of the intersection of two balls, vectorized.

    ``ra``, ``rb`` and ``dist`` broadcast together. Handles the disjoint,
    nested and partially overlapping cases.
    """
    ra, rb, d = np.broadcast_arrays(
        np.asarray(ra, dtype=float), np.asarray(rb, dtype=float), np.asarray(dist, dtype=float)
    )
    out = np.zeros(d.shape)
    small = np.minimum(ra, rb)
    nested = d <= np.abs(ra - rb)
    out[nested] = ball_volume(small[nested], dim)
    part = ~nested & (d < ra + rb)
    if np.any(part):
        r1, r2, dd = ra[part], rb[part], d[part]
        if dim == 2:
            c1 = np.clip((dd * dd + r1 * r1 - r2 * r2) / (2.0 * dd * r1), -1.0, 1.0)
            c2 = np.clip((dd * dd + r2 * r2 - r1 * r1) / (2.0 * dd * r2), -1.0, 1.0)
            kite = (-dd + r1 + r2) * (dd + r1 - r2) * (dd - r1 + r2) * (dd + r1 + r2)
            out[part] = (
                r1 * r1 * np.arccos(c1) + r2 * r2 * np.arccos(c2) - 0.5 * np.sqrt(np.maximum(kite, 0.0))
            )
        elif dim == 3:
            out[part] = (
                np.pi
                * (r1 + r2 - dd) ** 2
                * (dd * dd + 2 * dd * r2 - 3 * r2 * r2 + 2 * dd * r1 + 6 * r1 * r2 - 3 * r1 * r1)
                / (12.0 * dd)
            )
        else:
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
    return out


def ball_intersection_volume(a: "Ball", b: "Ball", dim: int) -> float:
    dist = float(np.linalg.norm(np.asarray(a.center, float) - np.asarray(b.center, float)))
    return float(lens_volume(a.radius, b.radius, dist, dim))


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise PackingError(f"ball radius must be positive, got {self.radius}")


@dataclass(frozen=True, eq=False)
class BallCloud:
    """Resident balls of every cell, stored flat.

    Ball ``b`` belongs to cell ``cell[b]`` with slot ``slot[b]``; the balls
    of cell ``K`` are ``start[K]:start[K+1]``.
    """

    mesh: Mesh
    centers: np.ndarray  # (n_b, d)
    radii: np.ndarray  # (n_b,)
    cell: np.ndarray  # (n_b,)
    slot: np.ndarray  # (n_b,)
    start: np.ndarray  # (n_c + 1,)
    density: np.ndarray  # rho_K, (n_c,)
    balls_per_axis: tuple[int, ...]

    @property
    def n_balls(self) -> int:
        return self.radii.shape[0]

    @property
    def volumes(self) -> np.ndarray:
        return ball_volume(self.radii, self.mesh.dim)

    @property
    def max_per_cell(self) -> int:
        return int(np.max(np.diff(self.start)))

    def ball(self, index: int) -> Ball:
        return Ball(tuple(self.centers[index]), float(self.radii[index]))

    def balls_of(self, cell: int) -> list[Ball]:
        return [self.ball(b) for b in range(self.start[cell], self.start[cell + 1])]

    def flat_index(self, cell: int, slot: int) -> int:
        return int(self.start[cell] + slot)


def _check_balls_per_axis(mesh: Mesh, balls_per_axis) -> tuple[int, ...]:
    if balls_per_axis is None:
        balls_per_axis = (2,) * mesh.dim
    elif np.isscalar(balls_per_axis):
        balls_per_axis = (int(balls_per_axis),) * mesh.dim
    m = tuple(int(v) for v in balls_per_axis)
    if len(m) != mesh.dim or any(v < 1 for v in m):
        raise PackingError(f"balls_per_axis must be {mesh.dim} positive integers, got {balls_per_axis}")
    return m


def _lattice(mesh: Mesh, m: tuple[int, ...], alpha: float):
    if not 0.0 < alpha <= 1.0:
        raise PackingError(f"packing fraction must lie in (0, 1], got {alpha}")
    sub = mesh.cell_size / np.asarray(m)
    radius = alpha * float(np.min(sub)) / 2.0
    h = mesh.cell_size
    if mesh.dim == 2:
        face_diam = float(np.min(h))
    else:
        face_diam = min(float(np.hypot(h[a], h[b])) for a, b in ((0, 1), (0, 2), (1, 2)))
    if radius > 0.25 * face_diam * (1 + 1e-12):
        raise PackingError(
            f"ball radius {radius:.3e} exceeds a quarter of the smallest face diameter "
            f"{face_diam:.3e}; use more balls per axis"
        )
    offsets = np.array(list(itertools.product(*[range(v) for v in reversed(m)])))[:, ::-1]
    return (offsets + 0.5) * sub, radius


def pack_cell(mesh: Mesh, cell: int, balls_per_axis=None, alpha: float = DEFAULT_PACKING):
    """Balls of one cell on a regular m_1 x ... x m_d sub-grid, and its porous density."""
    m = _check_balls_per_axis(mesh, balls_per_axis)
    local, radius = _lattice(mesh, m, alpha)
    lo, _ = mesh.cell_box(cell)
    balls = [Ball(tuple(lo + p), radius) for p in local]
    rho = mesh.porous_volume[cell] / (len(balls) * mesh.porosity[cell] * float(ball_volume(radius, mesh.dim)))
    return balls, float(rho)


def pack_cells(mesh: Mesh, balls_per_axis=None, alpha: float = DEFAULT_PACKING) -> BallCloud:
    """Pack every cell of ``mesh``; defaults to 2 balls per axis (4 in 2D, 8 in 3D)."""
    m = _check_balls_per_axis(mesh, balls_per_axis)
    local, radius = _lattice(mesh, m, alpha)
    n_k = local.shape[0]
    n_c = mesh.n_cells
    cell_lo = mesh.centers - 0.5 * mesh.cell_size
    centers = (cell_lo[:, None, :] + local[None, :, :]).reshape(-1, mesh.dim)
    radii = np.full(n_c * n_k, radius)
    cell = np.repeat(np.arange(n_c), n_k)
    slot = np.tile(np.arange(n_k), n_c)
    start = np.arange(n_c + 1) * n_k
    # rho_K * sum_s phi_K |B_{K,s}| = |K|_phi
    density = mesh.porous_volume / (n_k * mesh.porosity * float(ball_volume(radius, mesh.dim)))
    for arr in (centers, radii, cell, slot, start, density):
        arr.setflags(write=False)
    return BallCloud(mesh, centers, radii, cell, slot, start, density, m)


def candidate_pairs(cloud: BallCloud, centers: np.ndarray, radii: np.ndarray):
    """All (query, resident ball) pairs whose cells meet the query bounding boxes.

    Returns two index arrays, ordered by query then by resident ball. This is
    a superset of the intersecting pairs.
    """
    mesh = cloud.mesh
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.asarray(radii, dtype=float).reshape(-1)
    n = np.asarray(mesh.dims)
    first = np.floor((centers - radii[:, None] - mesh.lo) / mesh.cell_size).astype(np.int64)
    last = np.floor((centers + radii[:, None] - mesh.lo) / mesh.cell_size).astype(np.int64)
    per = np.asarray(mesh.periodic, dtype=bool) if mesh.periodic else np.zeros(mesh.dim, bool)
    first = np.where(per, first, np.clip(first, 0, n - 1))
    last = np.where(per, last, np.clip(last, 0, n - 1))
    span = np.minimum(last - first + 1, n)  # >= 1 after clipping
    q_parts, b_parts = [], []
    for off in itertools.product(*[range(int(s)) for s in span.max(axis=0)]):
        off = np.asarray(off)
        ok = np.all(off < span, axis=1)
        q = np.flatnonzero(ok)
        if q.size == 0:
            continue
        ijk = first[q] + off
        ijk = np.where(per, np.mod(ijk, n), ijk)
        cells = mesh.ravel(ijk)
        counts = cloud.start[cells + 1] - cloud.start[cells]
        qq = np.repeat(q, counts)
        base = np.repeat(cloud.start[cells], counts)
        within = np.arange(qq.size) - np.repeat(np.cumsum(counts) - counts, counts)
        q_parts.append(qq)
        b_parts.append(base + within)
    if not q_parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    q = np.concatenate(q_parts)
    b = np.concatenate(b_parts)
    order = np.lexsort((b, q))
    return q[order], b[order]


def neighbor_candidates(cloud: BallCloud, query: Ball) -> np.ndarray:
    if not query.radius > 0:
        raise PackingError("query radius must be positive")
    _, b = candidate_pairs(cloud, np.asarray(query.center, float)[None, :], np.array([query.radius]))
    return b
