"""Repartitioning of per-rank LDU matrices onto coarser owner parts.

The procedure runs in three steps: every rank extracts its sparsity pattern
(local plus interface couplings) in global indices, ships it to the owner of
its fused part, and the owner fuses the received patterns into one local and
one non-local pattern.  Interface entries whose column landed inside the
fused row range are localized, i.e. reclassified as local.

Fusion yields three reusable artifacts: the fused distributed COO matrix
(pattern only at first), an update pattern recording who sends how many
coefficients to which owner at which buffer offset, and a scatter map that
permutes the concatenated receive buffer from packed LDU order into row-major
value slots.  Creation happens once; later coefficient changes only replay
the update path.
"""

import numpy as np
from dataclasses import dataclass

from .core import (CooMatrix, DistributedCooMatrix, InterfaceBlock, LduMatrix,
                   PartitionMap, gpu_owner, ldu_to_coo)
from .solver import HaloPlan
from .transport import CommGroup, DeviceBuffer, RankContext, split_active


@dataclass(frozen=True)
class SparsityPattern:
    """Global-index sparsity of one source rank: local block plus couplings."""

    local_rows: np.ndarray
    local_cols: np.ndarray
    nonlocal_rows: np.ndarray
    nonlocal_cols: np.ndarray
    row_lo: int
    row_hi: int

    @property
    def n_entries(self) -> int:
        return len(self.local_rows) + len(self.nonlocal_rows)


@dataclass(frozen=True)
class UpdatePattern:
    """Send/receive bookkeeping for coefficient updates.

    ``send_target[r]``/``send_length[r]`` describe CPU rank r's single send;
    ``recv_offsets[k]`` holds, for owner k, the prefix sums of its alpha
    source segment lengths (ascending source rank), so segment i of owner k
    occupies [recv_offsets[k][i], recv_offsets[k][i+1]) and the last entry is
    the owner's total buffer length.
    """

    send_target: np.ndarray
    send_length: np.ndarray
    recv_offsets: tuple[np.ndarray, ...]

    def __post_init__(self):
        for k, offs in enumerate(self.recv_offsets):
            if offs[0] != 0 or (np.diff(offs) <= 0).any():
                raise ValueError(f"update pattern: owner {k} segments must be "
                                 "contiguous, disjoint and non-empty")

    @property
    def n_cpu(self) -> int:
        return len(self.send_target)

    @property
    def alpha(self) -> int:
        return len(self.send_target) // len(self.recv_offsets)

    def total(self, k: int) -> int:
        return int(self.recv_offsets[k][-1])

    def segments(self, k: int) -> list[tuple[int, int, int]]:
        """Owner k's receive plan as (source world rank, offset, length)."""
        alpha = self.alpha
        offs = self.recv_offsets[k]
        return [(alpha * k + i, int(offs[i]), int(offs[i + 1] - offs[i]))
                for i in range(alpha)]


@dataclass(frozen=True)
class ScatterMap:
    """Bijection from receive-buffer positions to matrix value slots."""

    to_local: np.ndarray
    index: np.ndarray
    n_local: int
    n_nonlocal: int

    def __post_init__(self):
        object.__setattr__(self, "to_local", np.asarray(self.to_local, dtype=bool))
        object.__setattr__(self, "index", np.asarray(self.index, dtype=np.int64))
        if len(self.to_local) != len(self.index):
            raise ValueError("scatter map arrays must have equal length")
        if len(self.index) != self.n_local + self.n_nonlocal:
            raise ValueError("scatter map must cover every destination slot")
        hits_l = np.bincount(self.index[self.to_local], minlength=self.n_local)
        hits_n = np.bincount(self.index[~self.to_local], minlength=self.n_nonlocal)
        if len(hits_l) != self.n_local or (hits_l != 1).any():
            raise ValueError("scatter map is not a bijection onto local slots")
        if len(hits_n) != self.n_nonlocal or (hits_n != 1).any():
            raise ValueError("scatter map is not a bijection onto non-local slots")

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class RepartitionedSystem:
    """Create-once state of one rank after repartitioning.

    Owner ranks hold the distributed matrix, scatter map, device buffer and
    halo plan; inactive ranks keep only what future coefficient updates need
    (the update pattern plus their communicator handle).
    """

    ctx: RankContext
    pm: PartitionMap
    comm: CommGroup
    update_pattern: UpdatePattern
    fingerprint: tuple
    matrix: DistributedCooMatrix | None = None
    scatter: ScatterMap | None = None
    device: DeviceBuffer | None = None
    halo: HaloPlan | None = None

    @property
    def is_owner(self) -> bool:
        return self.matrix is not None

    @property
    def gpu_rank(self) -> int | None:
        return self.ctx.rank // self.pm.alpha if self.is_owner else None


def sparsity_fingerprint(m: LduMatrix, ifaces: list[InterfaceBlock]) -> tuple:
    return (m.n_cells, m.n_faces,
            tuple((b.neighbor_rank, len(b)) for b in
                  sorted(ifaces, key=lambda b: b.neighbor_rank)))


def extract_sparsity(m: LduMatrix, ifaces: list[InterfaceBlock],
                     pm: PartitionMap, my_rank: int) -> SparsityPattern:
    """Global-index image of one rank's LDU pattern and interface couplings."""
    lo, hi = pm.cpu_range(my_rank)
    if hi - lo != m.n_cells:
        raise ValueError(f"rank {my_rank} holds {m.n_cells} cells but owns "
                         f"{hi - lo} in the partition map")
    coo = ldu_to_coo(m)
    nl_rows, nl_cols = [], []
    for b in sorted(ifaces, key=lambda b: b.neighbor_rank):
        if b.neighbor_rank == my_rank:
            raise ValueError(f"inconsistent interface: rank {my_rank} lists itself as neighbor")
        nlo, nhi = pm.cpu_range(b.neighbor_rank)
        if len(b) and (int(b.cols_remote.max()) >= nhi - nlo or int(b.rows.max()) >= m.n_cells):
            raise ValueError(f"inconsistent interface: entry of rank {my_rank} toward "
                             f"rank {b.neighbor_rank} is out of range")
        nl_rows.append(b.rows + lo)
        nl_cols.append(b.cols_remote + nlo)
    if nl_rows:
        rows = np.concatenate(nl_rows)
        cols = np.concatenate(nl_cols)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        key = rows * np.int64(pm.total_cells) + cols
        if len(key) > 1 and (np.diff(key) == 0).any():
            raise ValueError("inconsistent interface: duplicate coupling entry")
    else:
        rows = np.zeros(0, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64)
    return SparsityPattern(
        local_rows=coo.rows + lo, local_cols=coo.cols + lo,
        nonlocal_rows=rows, nonlocal_cols=cols, row_lo=lo, row_hi=hi)


def exchange_patterns(sp: SparsityPattern, pm: PartitionMap,
                      ctx: RankContext) -> list[SparsityPattern]:
    """Ship every rank's pattern to its owner; owners receive ascending by source.

    Collective over the world.  Owner rank alpha*k returns the alpha patterns
    of its sources; every other rank returns an empty list.
    """
    owner_world = pm.alpha * gpu_owner(ctx.rank, pm)
    ctx.send(owner_world, (sp.local_rows, sp.local_cols,
                           sp.nonlocal_rows, sp.nonlocal_cols,
                           sp.row_lo, sp.row_hi))
    if ctx.rank != owner_world:
        return []
    received = []
    for src in range(owner_world, owner_world + pm.alpha):
        lr, lc, nr, nc, lo, hi = ctx.recv(src)
        received.append(SparsityPattern(lr, lc, nr, nc, lo, hi))
    return received


def fuse_patterns(received: list[SparsityPattern], pm: PartitionMap,
                  gpu_rank: int) -> tuple[tuple[np.ndarray, np.ndarray],
                                          tuple[np.ndarray, np.ndarray]]:
    """Fuse source patterns into one local and one non-local pattern.

    A coupling entry (i, j) is localized when j falls inside the fused row
    range I_GPU(gpu_rank); everything else stays non-local.  Both outputs are
    row-major sorted global (row, col) arrays.
    """
    lo, hi = pm.gpu_range(gpu_rank)
    if len(received) != pm.alpha:
        raise ValueError(f"owner {gpu_rank} expected {pm.alpha} patterns, "
                         f"got {len(received)}")
    prev = lo
    for sp in received:
        if sp.row_lo != prev or sp.row_hi > hi:
            raise ValueError("received patterns must tile I_GPU in ascending source order")
        prev = sp.row_hi
    if prev != hi:
        raise ValueError("received patterns must tile I_GPU in ascending source order")

    nl_rows = np.concatenate([sp.nonlocal_rows for sp in received])
    nl_cols = np.concatenate([sp.nonlocal_cols for sp in received])
    localized = (nl_cols >= lo) & (nl_cols < hi)

    def _sorted_unique(rows, cols, what):
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        key = rows * np.int64(pm.total_cells) + cols
        if len(key) > 1 and (np.diff(key) == 0).any():
            i = int(np.argmax(np.diff(key) == 0))
            raise ValueError(f"overlapping ownership: duplicate {what} entry "
                             f"({rows[i]}, {cols[i]})")
        return rows, cols

    loc_rows = np.concatenate([sp.local_rows for sp in received] + [nl_rows[localized]])
    loc_cols = np.concatenate([sp.local_cols for sp in received] + [nl_cols[localized]])
    local = _sorted_unique(loc_rows, loc_cols, "local")
    nonlocal_ = _sorted_unique(nl_rows[~localized], nl_cols[~localized], "non-local")
    return local, nonlocal_


def build_update_pattern(pm: PartitionMap, counts) -> UpdatePattern:
    """Derive send targets and owner receive segments from per-source counts."""
    counts = np.asarray(counts, dtype=np.int64)
    if len(counts) != pm.n_cpu:
        raise ValueError(f"need one count per CPU rank ({pm.n_cpu}), got {len(counts)}")
    send_target = np.arange(pm.n_cpu, dtype=np.int64) // pm.alpha
    recv_offsets = []
    for k in range(pm.n_gpu):
        block = counts[pm.alpha * k: pm.alpha * (k + 1)]
        recv_offsets.append(np.concatenate(([0], np.cumsum(block))))
    return UpdatePattern(send_target=send_target, send_length=counts.copy(),
                         recv_offsets=tuple(recv_offsets))


def pack_order_pairs(sp: SparsityPattern, pm: PartitionMap) -> tuple[np.ndarray, np.ndarray]:
    """Global (row, col) provenance of one source's packed coefficient buffer.

    The pack layout is [diag | upper | lower | interfaces ascending by
    neighbor rank]; all four pieces are recoverable from the sorted pattern:
    diagonal and upper-triangle entries in row-major order are exactly cell
    and face order, the lower triangle mirrors the upper face by face, and
    interface entries sort by (owning rank of column, row, column).
    """
    diag = sp.local_rows == sp.local_cols
    upper = sp.local_rows < sp.local_cols
    d = sp.local_rows[diag]
    ur, uc = sp.local_rows[upper], sp.local_cols[upper]
    owner = pm.col_owner_cpu(sp.nonlocal_cols)
    order = np.lexsort((sp.nonlocal_cols, sp.nonlocal_rows, owner))
    rows = np.concatenate((d, ur, uc, sp.nonlocal_rows[order]))
    cols = np.concatenate((d, uc, ur, sp.nonlocal_cols[order]))
    return rows, cols


def build_scatter_map(received: list[SparsityPattern],
                      local_pattern: tuple[np.ndarray, np.ndarray],
                      nonlocal_pattern: tuple[np.ndarray, np.ndarray],
                      pm: PartitionMap) -> ScatterMap:
    """Map every receive-buffer position to its row-major value slot."""
    total = np.int64(pm.total_cells)
    brows = []
    bcols = []
    for sp in received:
        r, c = pack_order_pairs(sp, pm)
        brows.append(r)
        bcols.append(c)
    bkeys = np.concatenate(brows) * total + np.concatenate(bcols)
    lkeys = local_pattern[0] * total + local_pattern[1]
    nkeys = nonlocal_pattern[0] * total + nonlocal_pattern[1]

    def _lookup(keys, targets):
        if len(keys) == 0:
            return (np.zeros(len(targets), dtype=np.int64),
                    np.zeros(len(targets), dtype=bool))
        pos = np.searchsorted(keys, targets)
        safe = np.minimum(pos, len(keys) - 1)
        return pos, (pos < len(keys)) & (keys[safe] == targets)

    pos_l, in_local = _lookup(lkeys, bkeys)
    pos_n, in_nonlocal = _lookup(nkeys, bkeys)
    if not (in_local | in_nonlocal).all():
        i = int(np.argmax(~(in_local | in_nonlocal)))
        raise RuntimeError(f"scatter map: buffer entry {i} matches no fused pattern slot")
    index = np.where(in_local, pos_l, pos_n)
    return ScatterMap(to_local=in_local, index=index,
                      n_local=len(lkeys), n_nonlocal=len(nkeys))


def _build_matrix(local_pattern, nonlocal_pattern, pm: PartitionMap,
                  gpu_rank: int) -> DistributedCooMatrix:
    lo, hi = pm.gpu_range(gpu_rank)
    n = hi - lo
    lrows, lcols = local_pattern
    nrows, ncols = nonlocal_pattern
    halo = np.unique(ncols)
    local = CooMatrix(n, n, lrows - lo, lcols - lo, np.zeros(len(lrows)))
    non_local = CooMatrix(n, len(halo), nrows - lo,
                          np.searchsorted(halo, ncols), np.zeros(len(nrows)))
    return DistributedCooMatrix(owner_gpu_rank=gpu_rank, row_offset=lo,
                                local=local, non_local=non_local, halo_cols=halo)


def repartition(m: LduMatrix, ifaces: list[InterfaceBlock], pm: PartitionMap,
                ctx: RankContext) -> RepartitionedSystem:
    """Create the repartitioned system: fused matrix, update pattern, scatter map.

    Collective over all world ranks.  Owner ranks come back with the fused
    distributed matrix holding correctly scattered initial values plus the
    halo exchange plan; inactive ranks come back with a handle that supports
    nothing beyond participating in future updates.
    """
    from .solver import build_halo_plan
    # update imports this module for its types, so pull its ops in lazily
    from .update import transfer_coefficients, apply_scatter, pack_coefficients

    sp = extract_sparsity(m, ifaces, pm, ctx.rank)
    counts = ctx.allgather(sp.n_entries)
    up = build_update_pattern(pm, counts)
    received = exchange_patterns(sp, pm, ctx)
    comm = split_active(ctx, pm)

    system = RepartitionedSystem(ctx=ctx, pm=pm, comm=comm, update_pattern=up,
                                 fingerprint=sparsity_fingerprint(m, ifaces))
    if received:
        k = gpu_owner(ctx.rank, pm)
        local_pat, nonlocal_pat = fuse_patterns(received, pm, k)
        system.matrix = _build_matrix(local_pat, nonlocal_pat, pm, k)
        system.scatter = build_scatter_map(received, local_pat, nonlocal_pat, pm)
        system.device = ctx.alloc_device(up.total(k))

    packed = pack_coefficients(m, ifaces, ctx.rank)
    buffer = transfer_coefficients(packed, up, "direct", ctx, pm, system.device)
    if system.is_owner:
        apply_scatter(buffer, system.scatter, system.matrix)
        system.halo = build_halo_plan(system.matrix, pm, comm)
    return system


def dump_sparsity(sp: SparsityPattern) -> str:
    """Line-oriented dump (one entry per line) for test fixtures."""
    lines = [f"rows {sp.row_lo} {sp.row_hi}"]
    lines += [f"local {r} {c}" for r, c in zip(sp.local_rows, sp.local_cols)]
    lines += [f"nonlocal {r} {c}" for r, c in zip(sp.nonlocal_rows, sp.nonlocal_cols)]
    return "\n".join(lines) + "\n"


def dump_scatter(sm: ScatterMap) -> str:
    """Line-oriented dump: one buffer position per line."""
    dest = np.where(sm.to_local, "local", "nonlocal")
    return "".join(f"{b} -> {d} {i}\n"
                   for b, (d, i) in enumerate(zip(dest, sm.index)))
