"""Sparse matrix storage formats and partition maps.

The host side of a solve keeps per-rank matrices in LDU form (separate
diagonal, lower- and upper-triangle coefficient arrays addressed by face),
with couplings to other ranks held apart in interface blocks.  The device
side expects a row-major COO matrix, again split into a purely local part
and a non-local part addressing halo columns.  This module defines those
containers, the blockwise CPU->GPU partition map, and the LDU->COO bridge.
"""

import numpy as np
from dataclasses import dataclass


def _index_array(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.int64))


def _value_array(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def validate_ldu(n_cells: int, lower_addr: np.ndarray, upper_addr: np.ndarray,
                 lower_val: np.ndarray, upper_val: np.ndarray) -> None:
    """Check the LDU invariants, naming the first offending face on failure."""
    n_faces = len(lower_addr)
    if not (len(upper_addr) == len(lower_val) == len(upper_val) == n_faces):
        raise ValueError("malformed LDU: face array lengths differ")
    if n_faces == 0:
        return
    bad = (lower_addr < 0) | (lower_addr >= upper_addr) | (upper_addr >= n_cells)
    if bad.any():
        f = int(np.argmax(bad))
        raise ValueError(
            f"malformed LDU: face {f} has addresses "
            f"({lower_addr[f]}, {upper_addr[f]}) outside 0 <= lower < upper < {n_cells}")
    key = lower_addr[:-1] * np.int64(n_cells) + upper_addr[:-1]
    key_next = lower_addr[1:] * np.int64(n_cells) + upper_addr[1:]
    unsorted = key >= key_next
    if unsorted.any():
        f = int(np.argmax(unsorted)) + 1
        raise ValueError(f"malformed LDU: face {f} breaks the strict (lower, upper) ordering")


@dataclass(frozen=True)
class LduMatrix:
    """Per-rank local matrix in LDU storage.

    ``upper_val[f]`` is the coefficient at (lower_addr[f], upper_addr[f]),
    ``lower_val[f]`` the one at (upper_addr[f], lower_addr[f]).  Faces are
    strictly sorted by (lower_addr, upper_addr) and duplicate-free; the face
    ordering is owner-major, i.e. the smaller cell index leads.
    """

    n_cells: int
    lower_addr: np.ndarray
    upper_addr: np.ndarray
    diag: np.ndarray
    lower_val: np.ndarray
    upper_val: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower_addr", _freeze(_index_array(self.lower_addr)))
        object.__setattr__(self, "upper_addr", _freeze(_index_array(self.upper_addr)))
        object.__setattr__(self, "diag", _value_array(self.diag))
        object.__setattr__(self, "lower_val", _value_array(self.lower_val))
        object.__setattr__(self, "upper_val", _value_array(self.upper_val))
        if self.n_cells < 0 or len(self.diag) != self.n_cells:
            raise ValueError("malformed LDU: diag length does not match n_cells")
        validate_ldu(self.n_cells, self.lower_addr, self.upper_addr,
                     self.lower_val, self.upper_val)

    @property
    def n_faces(self) -> int:
        return len(self.lower_addr)


@dataclass(frozen=True)
class InterfaceBlock:
    """Coefficients coupling local rows to cells owned by one neighbor rank.

    ``cols_remote`` holds neighbor-local cell indices.  Entries are strictly
    sorted by (row, cols_remote).
    """

    neighbor_rank: int
    rows: np.ndarray
    cols_remote: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", _freeze(_index_array(self.rows)))
        object.__setattr__(self, "cols_remote", _freeze(_index_array(self.cols_remote)))
        object.__setattr__(self, "values", _value_array(self.values))
        n = len(self.rows)
        if len(self.cols_remote) != n or len(self.values) != n:
            raise ValueError("interface block arrays must have equal length")
        if n > 1:
            span = np.int64(max(int(self.cols_remote.max()) + 1, 1))
            key = self.rows * span + self.cols_remote
            if not (np.diff(key) > 0).all():
                raise ValueError("interface block entries must be strictly sorted by (row, col)")
        if n and (self.rows.min() < 0 or self.cols_remote.min() < 0):
            raise ValueError("interface block indices must be non-negative")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class CooMatrix:
    """Canonical COO matrix: entries strictly row-major sorted, no duplicates."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", _freeze(_index_array(self.rows)))
        object.__setattr__(self, "cols", _freeze(_index_array(self.cols)))
        object.__setattr__(self, "vals", _value_array(self.vals))
        n = len(self.rows)
        if len(self.cols) != n or len(self.vals) != n:
            raise ValueError("invalid COO: index/value lengths differ")
        if n:
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise ValueError("invalid COO: row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise ValueError("invalid COO: column index out of range")
            key = self.rows * np.int64(self.n_cols) + self.cols
            if n > 1 and not (np.diff(key) > 0).all():
                raise ValueError("invalid COO: entries must be strictly row-major sorted "
                                 "with no duplicates")

    @property
    def nnz(self) -> int:
        return len(self.rows)


def coo_from_entries(n_rows: int, n_cols: int, rows, cols, vals) -> CooMatrix:
    """Build a canonical CooMatrix from unordered entries; duplicates are an error."""
    rows = _index_array(rows)
    cols = _index_array(cols)
    vals = _value_array(vals)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows) > 1:
        key = rows * np.int64(n_cols) + cols
        dup = np.diff(key) == 0
        if dup.any():
            i = int(np.argmax(dup))
            raise ValueError(f"duplicate COO entry at ({rows[i]}, {cols[i]})")
    return CooMatrix(n_rows, n_cols, rows, cols, vals)


@dataclass(frozen=True)
class PartitionMap:
    """Blockwise ownership map between a fine CPU partition and a coarse GPU one.

    CPU rank r owns global cells [offsets[r], offsets[r+1]); GPU part k fuses
    the alpha consecutive CPU ranks {alpha k, ..., alpha k + alpha - 1}, so its
    row range I_GPU(k) is contiguous by construction.
    """

    n_cpu: int
    alpha: int
    n_gpu: int
    offsets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offsets", _freeze(_index_array(self.offsets)))
        if self.alpha < 1 or self.n_cpu % self.alpha != 0:
            raise ValueError(f"invalid ratio: alpha={self.alpha} does not divide n_cpu={self.n_cpu}")
        if self.n_gpu != self.n_cpu // self.alpha:
            raise ValueError("invalid ratio: n_gpu must equal n_cpu / alpha")
        if len(self.offsets) != self.n_cpu + 1 or self.offsets[0] != 0:
            raise ValueError("offsets must have n_cpu + 1 entries starting at 0")
        if (np.diff(self.offsets) <= 0).any():
            raise ValueError("empty part: every rank must own at least one cell")

    @property
    def total_cells(self) -> int:
        return int(self.offsets[-1])

    def cpu_range(self, r: int) -> tuple[int, int]:
        """Global cell interval I_CPU(r)."""
        if not 0 <= r < self.n_cpu:
            raise ValueError(f"cpu rank {r} out of range [0, {self.n_cpu})")
        return int(self.offsets[r]), int(self.offsets[r + 1])

    def gpu_range(self, k: int) -> tuple[int, int]:
        """Global cell interval I_GPU(k)."""
        if not 0 <= k < self.n_gpu:
            raise ValueError(f"gpu rank {k} out of range [0, {self.n_gpu})")
        return int(self.offsets[self.alpha * k]), int(self.offsets[self.alpha * k + self.alpha])

    def cells_of(self, r: int) -> int:
        lo, hi = self.cpu_range(r)
        return hi - lo

    def col_owner_cpu(self, cols: np.ndarray) -> np.ndarray:
        """CPU rank owning each global cell index."""
        return np.searchsorted(self.offsets, cols, side="right") - 1

    def col_owner_gpu(self, cols: np.ndarray) -> np.ndarray:
        """GPU rank owning each global cell index."""
        return self.col_owner_cpu(cols) // self.alpha


def make_partition_map(cells_per_cpu_rank, alpha: int) -> PartitionMap:
    """Build the blockwise partition map from per-CPU-rank cell counts."""
    counts = _index_array(cells_per_cpu_rank)
    n_cpu = len(counts)
    if alpha < 1 or n_cpu % alpha != 0:
        raise ValueError(f"invalid ratio: alpha={alpha} does not divide n_cpu={n_cpu}")
    if (counts <= 0).any():
        r = int(np.argmax(counts <= 0))
        raise ValueError(f"empty part: rank {r} owns {counts[r]} cells")
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return PartitionMap(n_cpu=n_cpu, alpha=alpha, n_gpu=n_cpu // alpha, offsets=offsets)


def gpu_owner(cpu_rank: int, pm: PartitionMap) -> int:
    """GPU rank fused from the given CPU rank (blockwise: floor(r / alpha))."""
    if not 0 <= cpu_rank < pm.n_cpu:
        raise ValueError(f"cpu rank {cpu_rank} out of range [0, {pm.n_cpu})")
    return cpu_rank // pm.alpha


def ldu_to_coo(m: LduMatrix) -> CooMatrix:
    """Expand LDU storage to canonical COO; exactly n_cells + 2*n_faces entries."""
    validate_ldu(m.n_cells, m.lower_addr, m.upper_addr, m.lower_val, m.upper_val)
    cells = np.arange(m.n_cells, dtype=np.int64)
    rows = np.concatenate((cells, m.lower_addr, m.upper_addr))
    cols = np.concatenate((cells, m.upper_addr, m.lower_addr))
    vals = np.concatenate((m.diag, m.upper_val, m.lower_val))
    return coo_from_entries(m.n_cells, m.n_cells, rows, cols, vals)


@dataclass
class DistributedCooMatrix:
    """One GPU part of a distributed COO matrix.

    ``local`` couples owned rows to owned columns (both in part-local
    indices); ``non_local`` couples owned rows to halo columns, with column
    indices into ``halo_cols``, which maps them back to global cell ids.
    The sparsity pattern is fixed after construction; only values mutate.
    """

    owner_gpu_rank: int
    row_offset: int
    local: CooMatrix
    non_local: CooMatrix
    halo_cols: np.ndarray

    def __post_init__(self):
        self.halo_cols = _freeze(_index_array(self.halo_cols))
        n = len(self.halo_cols)
        if n > 1 and not (np.diff(self.halo_cols) > 0).all():
            raise ValueError("halo_cols must be strictly ascending with no duplicates")
        if self.non_local.n_cols != n:
            raise ValueError("non_local column count must match halo_cols length")
        if self.non_local.n_rows != self.local.n_rows:
            raise ValueError("local and non_local parts must cover the same rows")
        lo, hi = self.row_offset, self.row_offset + self.local.n_rows
        if n and ((self.halo_cols >= lo) & (self.halo_cols < hi)).any():
            raise ValueError("halo_cols may not lie inside the owned row range")

    @property
    def n_owned(self) -> int:
        return self.local.n_rows

    def global_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All entries of this part with global row/column indices."""
        rows = np.concatenate((self.local.rows, self.non_local.rows)) + self.row_offset
        cols = np.concatenate((self.local.cols + self.row_offset,
                               self.halo_cols[self.non_local.cols]
                               if len(self.non_local.cols) else
                               np.zeros(0, dtype=np.int64)))
        vals = np.concatenate((self.local.vals, self.non_local.vals))
        return rows, cols, vals


MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def write_matrix_market(m: CooMatrix, path) -> None:
    """Write a CooMatrix in 1-based Matrix Market coordinate format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
        for i, j, v in zip(m.rows, m.cols, m.vals):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_matrix_market(path) -> CooMatrix:
    """Read a coordinate-format Matrix Market file into a canonical CooMatrix."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("%%MatrixMarket"):
            raise ValueError(f"not a Matrix Market file: {path}")
        fields = header.split()
        if fields[1:4] != ["matrix", "coordinate", "real"]:
            raise ValueError(f"unsupported Matrix Market header: {header}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        n_rows, n_cols, nnz = (int(t) for t in line.split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for k in range(nnz):
            i, j, v = fh.readline().split()
            rows[k], cols[k], vals[k] = int(i) - 1, int(j) - 1, float(v)
    return coo_from_entries(n_rows, n_cols, rows, cols, vals)
