"""Tracked-cell / resident-cell porous volume matrix and its scaling iterations.

Row ``i`` of the matrix is the tracked cell ``K_i``, column ``j`` the resident
cell ``M_j``. Row targets are the tracked porous volumes, column targets the
resident porous volumes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from bchar.balls import BallCloud, candidate_pairs, lens_volume
from bchar.errors import VoidError
from bchar.flow import TrackedCloud
from bchar.mesh import GhostLayout

DEFAULT_REBALANCE_ITERS = 10
DEFAULT_REBALANCE_TOL = 0.05


@dataclass(frozen=True, eq=False)
class VolumeMatrix:
    """Sparse nonnegative n_c x n_c matrix in coordinate form, sorted by (row, col)."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    row_target: np.ndarray
    col_target: np.ndarray

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.values, minlength=self.n)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.values, minlength=self.n)

    def balance_error(self) -> float:
        """Max relative mismatch of row and column sums against their targets."""
        er = np.abs(self.row_sums() - self.row_target) / self.row_target
        ec = np.abs(self.col_sums() - self.col_target) / self.col_target
        return float(max(er.max(initial=0.0), ec.max(initial=0.0)))

    def with_values(self, values: np.ndarray) -> "VolumeMatrix":
        return replace(self, values=np.asarray(values, dtype=float))

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, (self.rows, self.cols)), shape=(self.n, self.n))

    def toarray(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = self.values
        return out

    def apply(self, c: np.ndarray) -> np.ndarray:
        """Sum_j a_ij c_j, with a fixed summation order."""
        return np.bincount(self.rows, weights=self.values * c[self.cols], minlength=self.n)

    @classmethod
    def from_dense(cls, a, row_target, col_target) -> "VolumeMatrix":
        a = np.asarray(a, dtype=float)
        rows, cols = np.nonzero(a)
        return cls(
            a.shape[0],
            rows.astype(np.int64),
            cols.astype(np.int64),
            a[rows, cols],
            np.asarray(row_target, dtype=float),
            np.asarray(col_target, dtype=float),
        )

    def write_triplets(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("row,col,value\n")
            for i, j, v in zip(self.rows, self.cols, self.values):
                fh.write(f"{i},{j},{v:.9e}\n")


def _accumulate(n: int, rows, cols, vals):
    key = rows * n + cols
    uniq, inv = np.unique(key, return_inverse=True)
    summed = np.bincount(inv, weights=vals, minlength=uniq.size)
    return uniq // n, uniq % n, summed


def build_initial_matrix(cloud: BallCloud, tracked: TrackedCloud, ghost: GhostLayout | None = None) -> VolumeMatrix:
    """Distribute each tracked ball's porous volume over the resident cells it overlaps.

    The share taken from resident ball ``B_{M,m}`` is proportional to
    ``rho_M * phi_M * |B_hat ∩ B_{M,m}|`` (resident-side density).

    With a ``ghost`` layout the cloud lives on the padded mesh and all
    padding cells are lumped into one exterior row and column, so volume
    entering or leaving through the boundary appears as ordinary entries.
    """
    mesh = cloud.mesh
    if ghost is None:
        n = mesh.n_cells
        node = np.arange(n)
    else:
        n = ghost.n_nodes
        node = ghost.node
    q, b = candidate_pairs(cloud, tracked.centers, tracked.radii)
    dist = np.linalg.norm(mesh.displacement(tracked.centers[q], cloud.centers[b]), axis=1)
    vol = lens_volume(tracked.radii[q], cloud.radii[b], dist, mesh.dim)
    hit = vol > 0
    q, b, vol = q[hit], b[hit], vol[hit]
    res_cell = cloud.cell[b]
    weight = cloud.density[res_cell] * mesh.porosity[res_cell] * vol
    total = np.bincount(q, weights=weight, minlength=tracked.radii.shape[0])

    void = np.flatnonzero(total <= 0)
    if ghost is not None:
        void = void[node[tracked.cell[void]] != ghost.exterior]
    if void.size:
        k = int(void[0])
        raise VoidError(
            f"tracked into void: tracked ball {k} (cell {tracked.cell[k]}, slot {tracked.slot[k]}) "
            f"intersects no resident ball ({void.size} such balls); use more balls per cell or a smaller time step"
        )
    contrib = tracked.ball_porous_volume[q] * weight / total[q]
    rows, cols, vals = _accumulate(n, node[tracked.cell[q]], node[res_cell], contrib)
    m = VolumeMatrix(
        n,
        rows,
        cols,
        vals,
        np.bincount(node, weights=tracked.tracked_volume, minlength=n),
        np.bincount(node, weights=mesh.porous_volume, minlength=n),
    )
    empty = np.flatnonzero(m.col_sums() <= 0)
    if empty.size:
        raise VoidError(
            f"resident cell received no mass: cell {int(empty[0])} ({empty.size} such cells); "
            "use more balls per cell or a smaller time step"
        )
    return m


def scaling_iteration(m: VolumeMatrix) -> VolumeMatrix:
    """One column pass to the resident volumes, then one row pass to the tracked volumes."""
    col = m.col_sums()
    zero = np.flatnonzero(col <= 0)
    if zero.size:
        raise VoidError(f"cannot scale: column {int(zero[0])} has zero sum")
    half = m.values * (m.col_target / col)[m.cols]
    row = np.bincount(m.rows, weights=half, minlength=m.n)
    scale = np.divide(m.row_target, row, out=np.zeros(m.n), where=row > 0)
    return m.with_values(half * scale[m.rows])


def rebalance(
    m: VolumeMatrix, max_iters: int = DEFAULT_REBALANCE_ITERS, stop_tol: float = DEFAULT_REBALANCE_TOL
) -> tuple[VolumeMatrix, float, int]:
    """Scale up to ``max_iters`` times, stopping once the balance error is <= ``stop_tol``.

    Returns the matrix, its balance error, and the number of iterations run.
    """
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    err = m.balance_error()
    done = 0
    while done < max_iters and err > stop_tol:
        m = scaling_iteration(m)
        err = m.balance_error()
        done += 1
    return m, err, done
