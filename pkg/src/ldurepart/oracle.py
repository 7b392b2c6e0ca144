"""Ground-truth machinery for verification.

Everything here is deliberately independent of the distributed code paths it
checks: the reference assembly writes the global stencil directly from grid
coordinates with the closed-form diagonal, and the reference solve is a plain
sequential CG over a scipy CSR matrix.  Size guards keep the sequential paths
desk-scale by construction.
"""

import numpy as np
import scipy.sparse
from dataclasses import dataclass

from .assembly import StructuredGrid
from .core import (CooMatrix, DistributedCooMatrix, InterfaceBlock, LduMatrix,
                   PartitionMap, coo_from_entries, ldu_to_coo)
from .transport import CommGroup

MAX_REFERENCE_CELLS = 10 ** 6
MAX_REFERENCE_ROWS = 10 ** 5


def gather_global(matrix: DistributedCooMatrix | None, pm: PartitionMap,
                  comm: CommGroup) -> CooMatrix | None:
    """Collect the owners' parts into one global COO on group rank 0.

    Collective over the active group; every rank passes its own part (None is
    not allowed here since all active ranks own one).  Non-root ranks return
    None.  Duplicate global entries mean ownership overlapped somewhere and
    raise.
    """
    rows, cols, vals = matrix.global_entries()
    pieces = comm.gather((rows, cols, vals), 0)
    if pieces is None:
        return None
    all_rows = np.concatenate([p[0] for p in pieces])
    all_cols = np.concatenate([p[1] for p in pieces])
    all_vals = np.concatenate([p[2] for p in pieces])
    n = pm.total_cells
    try:
        return coo_from_entries(n, n, all_rows, all_cols, all_vals)
    except ValueError as exc:
        raise ValueError(f"overlap between gathered parts: {exc}") from exc


def reference_global_assemble(grid: StructuredGrid) -> CooMatrix:
    """Directly constructed global stencil matrix: diag 2*dimension, -1 per face."""
    n = grid.total_cells
    if n > MAX_REFERENCE_CELLS:
        raise ValueError(f"reference assembly guard: {n} cells exceeds {MAX_REFERENCE_CELLS}")
    a0, a1, a2 = grid.axis_order
    dims = grid.dims
    d0, d1, d2 = dims[a0], dims[a1], dims[a2]
    ids = np.arange(n, dtype=np.int64)
    i0 = ids % d0
    i1 = (ids // d0) % d1
    i2 = ids // (d0 * d1)

    pairs = []
    if d0 > 1:
        a = ids[i0 < d0 - 1]
        pairs.append((a, a + 1))
    if d1 > 1:
        a = ids[i1 < d1 - 1]
        pairs.append((a, a + d0))
    if d2 > 1:
        a = ids[i2 < d2 - 1]
        pairs.append((a, a + d0 * d1))

    diag_val = 2.0 * grid.dimension
    rows = [ids]
    cols = [ids]
    vals = [np.full(n, diag_val)]
    for a, b in pairs:
        rows += [a, b]
        cols += [b, a]
        vals += [-np.ones(len(a)), -np.ones(len(a))]
    return coo_from_entries(n, n, np.concatenate(rows), np.concatenate(cols),
                            np.concatenate(vals))


def assemble_global_from_parts(per_rank: list[tuple[LduMatrix, list[InterfaceBlock]]],
                               pm: PartitionMap) -> CooMatrix:
    """Sequentially expand every rank's LDU + interfaces to one global COO."""
    rows, cols, vals = [], [], []
    for r, (m, ifaces) in enumerate(per_rank):
        lo, _ = pm.cpu_range(r)
        coo = ldu_to_coo(m)
        rows.append(coo.rows + lo)
        cols.append(coo.cols + lo)
        vals.append(coo.vals)
        for b in ifaces:
            nlo, _ = pm.cpu_range(b.neighbor_rank)
            rows.append(b.rows + lo)
            cols.append(b.cols_remote + nlo)
            vals.append(b.values)
    n = pm.total_cells
    return coo_from_entries(n, n, np.concatenate(rows), np.concatenate(cols),
                            np.concatenate(vals))


@dataclass(frozen=True)
class CompareReport:
    """Outcome of a matrix comparison; empty mismatch list means equal."""

    mismatches: tuple[str, ...]
    n_mismatches: int

    @property
    def ok(self) -> bool:
        return self.n_mismatches == 0

    def __str__(self) -> str:
        if self.ok:
            return "matrices match"
        shown = "\n".join(self.mismatches)
        return f"{self.n_mismatches} mismatches, first {len(self.mismatches)}:\n{shown}"


def compare_matrices(a: CooMatrix, b: CooMatrix, tol: float = 0.0) -> CompareReport:
    """Exact pattern comparison plus per-entry |a-b| <= tol*max(1, |a|) values."""
    problems: list[str] = []
    count = 0

    def note(msg):
        nonlocal count
        count += 1
        if len(problems) < 10:
            problems.append(msg)

    if (a.n_rows, a.n_cols) != (b.n_rows, b.n_cols):
        note(f"shape {a.n_rows}x{a.n_cols} vs {b.n_rows}x{b.n_cols}")
        return CompareReport(tuple(problems), count)
    if a.nnz != b.nnz or not (np.array_equal(a.rows, b.rows)
                              and np.array_equal(a.cols, b.cols)):
        akeys = set(zip(a.rows.tolist(), a.cols.tolist()))
        bkeys = set(zip(b.rows.tolist(), b.cols.tolist()))
        for i, j in sorted(akeys - bkeys):
            note(f"entry ({i}, {j}) only in first")
        for i, j in sorted(bkeys - akeys):
            note(f"entry ({i}, {j}) only in second")
        return CompareReport(tuple(problems), count)
    bad = np.abs(a.vals - b.vals) > tol * np.maximum(1.0, np.abs(a.vals))
    for i in np.flatnonzero(bad):
        note(f"value at ({a.rows[i]}, {a.cols[i]}): {a.vals[i]!r} vs {b.vals[i]!r}")
    return CompareReport(tuple(problems), count)


def to_csr(a: CooMatrix) -> scipy.sparse.csr_matrix:
    return scipy.sparse.csr_matrix((a.vals, (a.rows, a.cols)),
                                   shape=(a.n_rows, a.n_cols))


def reference_solve(a: CooMatrix, b: np.ndarray, tol: float = 1e-10,
                    max_iter: int | None = None) -> np.ndarray:
    """Sequential CG for SPD systems, to a true relative residual of ``tol``."""
    if a.n_rows != a.n_cols:
        raise ValueError("reference solve needs a square matrix")
    if a.n_rows > MAX_REFERENCE_ROWS:
        raise ValueError(f"reference solve guard: {a.n_rows} rows exceeds {MAX_REFERENCE_ROWS}")
    if len(b) != a.n_rows:
        raise ValueError("right-hand side length mismatch")
    csr = to_csr(a)
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    x = np.zeros(a.n_rows)
    if bnorm == 0.0:
        return x
    if max_iter is None:
        max_iter = 20 * a.n_rows
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for _ in range(max_iter):
        if np.linalg.norm(b - csr @ x) / bnorm <= tol:
            return x
        q = csr @ p
        step = rr / float(p @ q)
        x += step * p
        r -= step * q
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.linalg.norm(b - csr @ x) / bnorm <= tol:
        return x
    raise RuntimeError(f"reference solve did not converge to {tol} in {max_iter} iterations")
