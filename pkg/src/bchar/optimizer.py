"""Minimal multiplicative correction of a volume matrix to exact row and column sums.

Each nonzero ``a_k`` becomes ``a_k (1 + x_k)``; ``x`` minimizes ``x.x`` subject
to the row/column constraints ``Â (1 + x) = b`` and ``0 < 1 + x_k <= 2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from bchar.errors import InfeasibleError, OptimizerError
from bchar.volume_matrix import VolumeMatrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 200
POSITIVITY_MARGIN = 1e-12


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Staggered 2n_c x n_z constraint matrix, targets, and unknown -> (row, col) map."""

    A_hat: sp.csr_matrix
    b: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    n: int

    @property
    def nnz(self) -> int:
        return self.rows.shape[0]

    @property
    def b_loc(self) -> np.ndarray:
        return self.b[: self.n]

    @property
    def b_glob(self) -> np.ndarray:
        return self.b[self.n :]


@dataclass
class SolveInfo:
    n_unknowns: int
    residual: float
    max_abs_x: float
    iterations: int
    active_bounds: int
    rank_deficiency: int
    extra: dict = field(default_factory=dict)


def assemble_constraints(m: VolumeMatrix) -> ConstraintSystem:
    """Build Â from the nonzeros of ``m`` taken row by row.

    The unknown of nonzero ``a_ij`` appears in row ``i`` (local block) and in
    row ``n_c + j`` (global block), both times with coefficient ``a_ij``, so
    ``Â @ 1`` stacks the row sums over the column sums.
    """
    order = np.lexsort((m.cols, m.rows))
    rows, cols, vals = m.rows[order], m.cols[order], m.values[order]
    nz = vals.shape[0]
    k = np.arange(nz)
    a_hat = sp.csr_matrix(
        (np.concatenate([vals, vals]), (np.concatenate([rows, m.n + cols]), np.concatenate([k, k]))),
        shape=(2 * m.n, nz),
    )
    b = np.concatenate([np.asarray(m.row_target, float), np.asarray(m.col_target, float)])
    return ConstraintSystem(a_hat, b, rows, cols, m.n)


class _AffineProjector:
    """Euclidean projection onto {x : A x = r} with A of possibly deficient row rank.

    The Gram matrix A A^T is singular by one per connected component of the
    row/column graph (total row mass equals total column mass). One
    constraint per component is dropped before factorizing.
    """

    def __init__(self, a: sp.csr_matrix, r: np.ndarray):
        self.a = a
        self.r = r
        gram = (a @ a.T).tocsr()
        n_comp, labels = connected_components(gram, directed=False)
        m = a.shape[0]
        drop = np.zeros(m, dtype=bool)
        # last node of each component (global-block rows sort after local ones)
        last = np.full(n_comp, -1)
        last[labels] = np.arange(m)
        drop[last] = True
        self.keep = np.flatnonzero(~drop)
        self.deficiency = int(n_comp)
        self.labels = labels
        g = gram[self.keep][:, self.keep].tocsc()
        try:
            self.lu = splu(g) if self.keep.size else None
        except RuntimeError as exc:  # zero pivot: an all-zero constraint row
            raise OptimizerError(f"singular constraint system: {exc}") from exc

    def multipliers(self, z: np.ndarray) -> np.ndarray:
        y = np.zeros(self.a.shape[0])
        if self.lu is not None:
            y[self.keep] = self.lu.solve((self.r - self.a @ z)[self.keep])
        return y

    def __call__(self, z: np.ndarray, refine: int = 3) -> np.ndarray:
        """Projection of ``z``, with up to ``refine`` extra passes against round-off."""
        if self.lu is None:
            return z
        x = z + self.a.T @ self.multipliers(z)
        scale = float(np.max(np.abs(self.r[self.keep]), initial=0.0)) or 1.0
        res = float(np.max(np.abs((self.a @ x - self.r)[self.keep]), initial=0.0))
        for _ in range(refine):
            if res <= 1e-14 * scale:
                break
            nxt = x + self.a.T @ self.multipliers(x)
            new = float(np.max(np.abs((self.a @ nxt - self.r)[self.keep]), initial=0.0))
            if new >= res:
                break
            x, res = nxt, new
        return x


def _rel_residual(sys: ConstraintSystem, x: np.ndarray) -> float:
    scale = float(np.max(np.abs(sys.b))) or 1.0
    return float(np.max(np.abs(sys.A_hat @ (1.0 + x) - sys.b), initial=0.0)) / scale


def _polish(
    sys: ConstraintSystem, r: np.ndarray, x: np.ndarray, lo: float, hi: float, guard: float, max_swaps: int = 50
):
    """Exact solve on the active set guessed from ``x``, refined until KKT holds.

    At the optimum ``x = clip(Â^T y, lo, hi)`` for the multipliers ``y`` of
    the equality constraints. Entries within ``guard`` of a bound start out
    fixed there. Returns None when no consistent active set is found.
    """
    at_lo = x <= lo + guard
    at_hi = x >= hi - guard
    for _ in range(max_swaps):
        fixed = at_lo | at_hi
        free = np.flatnonzero(~fixed)
        out = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
        a_free = sys.A_hat[:, free].tocsr()
        try:
            proj = _AffineProjector(a_free, r - sys.A_hat @ out)
        except OptimizerError:
            return None
        y = proj.multipliers(np.zeros(free.size))
        out[free] = a_free.T @ y
        g = sys.A_hat.T @ y
        tol = 1e-9 * max(1.0, float(np.max(np.abs(g), initial=0.0)))
        bad_lo = at_lo & (g > lo + tol)
        bad_hi = at_hi & (g < hi - tol)
        over_lo = ~fixed & (out < lo)
        over_hi = ~fixed & (out > hi)
        if not (bad_lo.any() or bad_hi.any() or over_lo.any() or over_hi.any()):
            return out
        at_lo = (at_lo & ~bad_lo) | over_lo
        at_hi = (at_hi & ~bad_hi) | over_hi
    return None


def _restore(sys: ConstraintSystem, r: np.ndarray, z: np.ndarray, lo: float, hi: float, guard: float, rounds: int = 20):
    """Nearest point to ``z`` meeting the equalities with near-bound entries held fixed.

    Used when no exact active set is found: the interior-point answer is
    optimal to solver accuracy but its equalities only hold to that accuracy.
    """
    at_lo = z <= lo + guard
    at_hi = z >= hi - guard
    for _ in range(rounds):
        fixed = at_lo | at_hi
        free = np.flatnonzero(~fixed)
        out = np.where(at_lo, lo, np.where(at_hi, hi, z))
        a_free = sys.A_hat[:, free].tocsr()
        try:
            proj = _AffineProjector(a_free, r - sys.A_hat @ np.where(fixed, out, 0.0))
        except OptimizerError:
            return None
        out[free] = proj(z[free])
        over_lo, over_hi = out < lo, out > hi
        if not (over_lo.any() or over_hi.any()):
            return out
        at_lo |= over_lo
        at_hi |= over_hi
    return None


def equality_correction(sys: ConstraintSystem) -> np.ndarray:
    """Least-norm ``x`` with ``Â (1 + x) = b``, ignoring the bounds."""
    r = sys.b - sys.A_hat @ np.ones(sys.nnz)
    return _AffineProjector(sys.A_hat, r)(np.zeros(sys.nnz))


def within_bounds(x: np.ndarray, eps: float = POSITIVITY_MARGIN) -> bool:
    return bool(np.all(x >= -1.0 + eps) and np.all(x <= 1.0))


def _interior_point(sys: ConstraintSystem, proj: _AffineProjector, r: np.ndarray, lo, hi, max_iters: int):
    """Bound-constrained least norm by Clarabel; returns (x, status name)."""
    keep = proj.keep
    scale = 1.0 / np.abs(sys.b[keep])
    a_eq = sp.diags(scale) @ sys.A_hat[keep]
    nz = sys.nnz
    eye = sp.identity(nz, format="csc")
    a = sp.vstack([a_eq, eye, -eye]).tocsc()
    rhs = np.concatenate([r[keep] * scale, np.full(nz, hi), np.full(nz, -lo)])
    cones = [clarabel.ZeroConeT(keep.size), clarabel.NonnegativeConeT(2 * nz)]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(max_iters)
    solver = clarabel.DefaultSolver(sp.identity(nz, format="csc") * 2.0, np.zeros(nz), a, rhs, cones, settings)
    sol = solver.solve()
    return np.asarray(sol.x, dtype=float), str(sol.status), int(sol.iterations)


def solve_min_norm(
    sys: ConstraintSystem,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    eps: float = POSITIVITY_MARGIN,
) -> tuple[np.ndarray, SolveInfo]:
    """Minimum-norm ``x`` with ``Â (1 + x) = b`` and ``eps <= 1 + x <= 2``.

    The equality-only minimizer is tried first. If it leaves the box, the
    bound-constrained problem goes to an interior-point QP solver, whose
    active set is then re-solved exactly so the equalities hold to round-off.
    ``max_iters`` caps the interior-point iterations.
    """
    total_loc, total_glob = float(np.sum(sys.b_loc)), float(np.sum(sys.b_glob))
    if abs(total_loc - total_glob) > 1e-10 * max(abs(total_loc), abs(total_glob)):
        raise OptimizerError(f"incompatible mass totals: local {total_loc:.12e} vs global {total_glob:.12e}")
    nz = sys.nnz
    lo, hi = -1.0 + eps, 1.0
    r = sys.b - sys.A_hat @ np.ones(nz)
    proj = _AffineProjector(sys.A_hat, r)

    # each connected block of the matrix must carry equal row and column totals
    sign = np.where(np.arange(2 * sys.n) < sys.n, 1.0, -1.0)
    gap = np.bincount(proj.labels, weights=sign * sys.b, minlength=proj.deficiency)
    size = np.bincount(proj.labels, weights=np.abs(sys.b), minlength=proj.deficiency)
    bad = np.flatnonzero(np.abs(gap) > 1e-10 * size)
    if bad.size:
        raise OptimizerError(
            f"incompatible mass totals: {bad.size} disconnected block(s) of the matrix have row and column "
            f"totals differing by up to {np.max(np.abs(gap[bad]) / size[bad]):.3e} (relative)"
        )

    x = proj(np.zeros(nz))
    iters = 0
    status = "projection"
    if not within_bounds(x, eps):
        z, status, iters = _interior_point(sys, proj, r, lo, hi, max_iters)
        if status not in ("Solved", "AlmostSolved"):
            # infeasible, or too degenerate to solve; either way more scaling is the remedy
            raise InfeasibleError(
                f"bound-constrained correction not found (solver status {status}); the mass constraints "
                "cannot be met by scaling entries within (0, 2]; try more balls or rebalance iterations"
            )
        # each swap round refactorizes, so the exact polish gets a short budget
        x = _polish(sys, r, z, lo, hi, 1e-7, max_swaps=10)
        if x is not None:
            status = "bounded"
        else:
            log.debug("active-set polish failed; restoring the equalities around the interior-point solution")
            for guard in (1e-9, 1e-7, 1e-5):
                x = _restore(sys, r, z, lo, hi, guard)
                if x is not None and _rel_residual(sys, x) <= tol:
                    status = "restored"
                    break
            else:
                x = np.clip(z, lo, hi)
                status = "interior"
    res = _rel_residual(sys, x)
    if not res <= tol:
        raise OptimizerError(
            f"mass constraints not met: relative residual {res:.3e} > {tol:.1e} "
            "(try more balls or rebalance iterations)"
        )
    info = SolveInfo(
        n_unknowns=nz,
        residual=res,
        max_abs_x=float(np.max(np.abs(x), initial=0.0)),
        iterations=iters,
        active_bounds=int(np.count_nonzero((x <= lo + 1e-13) | (x >= hi - 1e-13))),
        rank_deficiency=proj.deficiency,
        extra={"path": status},
    )
    log.debug("min-norm solve: %s", info)
    return x, info


def apply_adjustment(m: VolumeMatrix, x) -> VolumeMatrix:
    """Scale each nonzero by ``1 + x_k``, unknowns ordered as in :func:`assemble_constraints`."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.nnz,):
        raise ValueError(f"adjustment has shape {x.shape}, expected ({m.nnz},)")
    order = np.lexsort((m.cols, m.rows))
    scale = np.empty(m.nnz)
    scale[order] = 1.0 + x
    return m.with_values(m.values * scale)
