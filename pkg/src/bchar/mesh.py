"""Cartesian meshes of a box with piecewise-constant porosity.

Cells are numbered lexicographically with x fastest, i.e. in 3D the cell
with axis indices ``(i, j, k)`` has flat index ``i + nx * (j + ny * k)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bchar.errors import MeshError

OUTSIDE = -1


@dataclass(frozen=True)
class Domain:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        dims = tuple(int(v) for v in self.dims)
        if not (len(lo) == len(hi) == len(dims)) or len(dims) not in (2, 3):
            raise MeshError(f"domain must be 2D or 3D with matching lo/hi/dims, got {lo}, {hi}, {dims}")
        for k, (a, b, n) in enumerate(zip(lo, hi, dims)):
            if not a < b:
                raise MeshError(f"axis {k}: lo={a} must be < hi={b}")
            if n <= 0:
                raise MeshError(f"axis {k}: cell count {n} must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return len(self.dims)

    @classmethod
    def unit(cls, dims) -> "Domain":
        d = len(dims)
        return cls((0.0,) * d, (1.0,) * d, tuple(dims))


@dataclass(frozen=True, eq=False)
class Mesh:
    domain: Domain
    cell_size: np.ndarray  # (d,)
    porosity: np.ndarray  # (n_c,)
    porous_volume: np.ndarray  # (n_c,)
    _centers: np.ndarray = field(repr=False)
    periodic: tuple[bool, ...] = ()

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.domain.dims

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.domain.dims))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.domain.lo)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.domain.hi)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def centers(self) -> np.ndarray:
        """Cell centers, shape (n_c, d)."""
        return self._centers

    @property
    def constant_porosity(self) -> bool:
        return bool(np.all(self.porosity == self.porosity[0]))

    def cell_box(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        ijk = np.asarray(self.unravel(index))
        lo = self.lo + ijk * self.cell_size
        return lo, lo + self.cell_size

    def ravel(self, ijk) -> np.ndarray:
        """Flat index from axis indices; ``ijk`` has shape (..., d)."""
        ijk = np.asarray(ijk)
        return np.ravel_multi_index(tuple(np.moveaxis(ijk, -1, 0)), self.dims, order="F")

    def unravel(self, index):
        return np.unravel_index(index, self.dims, order="F")

    def axis_index(self, points: np.ndarray) -> np.ndarray:
        """Per-axis cell indices of points, with upper-boundary closure; no outside check."""
        n = np.asarray(self.dims)
        idx = np.floor((np.asarray(points, dtype=float) - self.lo) / self.cell_size).astype(np.int64)
        return np.clip(idx, 0, n - 1)

    @property
    def any_periodic(self) -> bool:
        return any(self.periodic)

    def confine(self, points: np.ndarray) -> tuple[np.ndarray, int]:
        """Wrap periodic axes into [lo, hi), clamp the others onto the closed box.

        Returns the confined points and how many were clamped (wrapping is
        not counted).
        """
        x = np.array(points, dtype=float)
        lo, hi = self.lo, self.hi
        per = np.asarray(self.periodic, dtype=bool)
        if per.any():
            length = hi - lo
            x[:, per] = lo[per] + np.mod(x[:, per] - lo[per], length[per])
        closed = ~per
        clipped = np.clip(x[:, closed], lo[closed], hi[closed])
        n = int(np.count_nonzero(np.any(clipped != x[:, closed], axis=1)))
        x[:, closed] = clipped
        return x, n

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``a - b`` with the minimum-image convention on periodic axes."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        per = np.asarray(self.periodic, dtype=bool)
        if per.any():
            length = (self.hi - self.lo)[per]
            d[..., per] -= length * np.round(d[..., per] / length)
        return d

    def porosity_at(self, points: np.ndarray) -> np.ndarray:
        """Porosity at points (clamped into the domain)."""
        points = np.atleast_2d(points)
        if self.constant_porosity:
            return np.full(points.shape[0], self.porosity[0])
        return self.porosity[self.ravel(self.axis_index(points))]


def build_mesh(domain: Domain, porosity=1.0, periodic=None) -> Mesh:
    """Mesh of ``domain`` with a uniform or per-cell porosity.

    ``periodic`` optionally flags axes whose opposite faces are identified.
    """
    if periodic is None:
        periodic = (False,) * domain.dim
    periodic = tuple(bool(v) for v in periodic)
    if len(periodic) != domain.dim:
        raise MeshError(f"periodic flags {periodic} do not match dimension {domain.dim}")
    n_c = int(np.prod(domain.dims))
    phi = np.asarray(porosity, dtype=float)
    if phi.ndim == 0:
        phi = np.full(n_c, float(phi))
    else:
        phi = phi.reshape(-1)
        if phi.size != n_c:
            raise MeshError(f"porosity has {phi.size} values, mesh has {n_c} cells")
        phi = phi.copy()
    bad = np.flatnonzero(~(phi > 0) | ~np.isfinite(phi))
    if bad.size:
        raise MeshError(f"porosity of cell {bad[0]} is {phi[bad[0]]}, must be positive")

    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    h = (hi - lo) / np.asarray(domain.dims)
    axes = [lo[k] + (np.arange(n) + 0.5) * h[k] for k, n in enumerate(domain.dims)]
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.reshape(-1, order="F") for g in grids], axis=1)

    phi.setflags(write=False)
    vol = phi * np.prod(h)
    vol.setflags(write=False)
    h.setflags(write=False)
    centers.setflags(write=False)
    return Mesh(domain=domain, cell_size=h, porosity=phi, porous_volume=vol, _centers=centers, periodic=periodic)


def locate_cell(mesh: Mesh, point) -> int:
    """Index of the half-open cell box containing ``point``, or ``OUTSIDE`` (-1).

    Points on the domain's upper faces belong to the last cell of that axis.
    """
    p = np.asarray(point, dtype=float)
    if np.any(p < mesh.lo) or np.any(p > mesh.hi):
        return OUTSIDE
    return int(mesh.ravel(mesh.axis_index(p)))


def locate_cells(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = mesh.ravel(mesh.axis_index(points)).astype(np.int64)
    outside = np.any(points < mesh.lo, axis=1) | np.any(points > mesh.hi, axis=1)
    out[outside] = OUTSIDE
    return out


@dataclass(frozen=True, eq=False)
class GhostLayout:
    """A mesh padded with exterior cells that all stand for one exterior node.

    ``node[k]`` is the interior cell matching extended cell ``k``, or
    ``exterior`` (equal to the interior cell count) for padding cells.
    """

    interior: Mesh
    extended: Mesh
    node: np.ndarray
    layers: int

    @property
    def exterior(self) -> int:
        return self.interior.n_cells

    @property
    def n_nodes(self) -> int:
        return self.interior.n_cells + 1


def with_ghost_layers(mesh: Mesh, layers: int) -> GhostLayout:
    """Pad every non-periodic axis of ``mesh`` by ``layers`` cells on both sides.

    Padding cells copy the porosity of the nearest boundary cell.
    """
    layers = int(layers)
    if layers < 1:
        raise MeshError(f"ghost layers must be >= 1, got {layers}")
    per = np.asarray(mesh.periodic, dtype=bool)
    pad = np.where(per, 0, layers)
    h = mesh.cell_size
    domain = Domain(
        tuple(mesh.lo - pad * h), tuple(mesh.hi + pad * h), tuple(np.asarray(mesh.dims) + 2 * pad)
    )
    phi = np.pad(mesh.porosity.reshape(mesh.dims, order="F"), [(p, p) for p in pad], mode="edge")
    ext = build_mesh(domain, phi.reshape(-1, order="F"), mesh.periodic)
    ijk = np.stack(ext.unravel(np.arange(ext.n_cells)), axis=1) - pad
    inside = np.all((ijk >= 0) & (ijk < np.asarray(mesh.dims)), axis=1)
    node = np.full(ext.n_cells, mesh.n_cells, dtype=np.int64)
    node[inside] = mesh.ravel(ijk[inside])
    node.setflags(write=False)
    return GhostLayout(mesh, ext, node, layers)
