"""Coefficient updates of a repartitioned system.

Every rank packs its LDU values into the canonical buffer layout
[diag | upper | lower | interfaces ascending by neighbor rank] and moves them
to the owner's device buffer, either directly (one device transfer per source
segment, the GPU-aware path) or staged (gathered on the owner's host first,
then one device transfer of the whole buffer).  Both paths fill the buffer
bit-identically; only the traffic accounting differs.  The owner then applies
the scatter map, writing each buffer position into its row-major value slot.
The sparsity pattern is never touched; a drift in the host matrix shape is
detected and rejected.
"""

import numpy as np
from dataclasses import dataclass

from .core import DistributedCooMatrix, InterfaceBlock, LduMatrix, PartitionMap
from .transport import CAT_DEVICE_DIRECT, CAT_DEVICE_STAGED, CAT_RANK, DeviceBuffer, RankContext
from .repart import RepartitionedSystem, ScatterMap, UpdatePattern, sparsity_fingerprint

TRANSFER_MODES = ("direct", "staged")


class PatternDriftError(RuntimeError):
    pass


@dataclass(frozen=True)
class PackedCoefficients:
    """One rank's coefficient values in canonical pack layout."""

    source_rank: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.ascontiguousarray(self.values, dtype=np.float64))


def pack_coefficients(m: LduMatrix, ifaces: list[InterfaceBlock],
                      source_rank: int) -> PackedCoefficients:
    """Pack [diag | upper | lower | interface values by ascending neighbor]."""
    blocks = [m.diag, m.upper_val, m.lower_val]
    blocks += [b.values for b in sorted(ifaces, key=lambda b: b.neighbor_rank)]
    return PackedCoefficients(source_rank, np.concatenate(blocks))


def transfer_coefficients(packed: PackedCoefficients, up: UpdatePattern,
                          mode: str, ctx: RankContext, pm: PartitionMap,
                          buffer: DeviceBuffer | None) -> DeviceBuffer | None:
    """Move packed coefficients into the owners' device buffers.

    Collective over the world; ``mode`` must agree on all ranks.  Returns the
    filled buffer on owner ranks, None elsewhere.  Direct mode performs one
    device transfer per source segment; staged mode gathers the sources on
    the owner's host and performs a single device transfer of the total.
    """
    if mode not in TRANSFER_MODES:
        raise ValueError(f"unknown transfer mode: {mode!r}")
    rank = ctx.rank
    expected = int(up.send_length[rank])
    if len(packed.values) != expected:
        raise ValueError(f"update pattern violation: rank {rank} packed "
                         f"{len(packed.values)} coefficients, pattern expects {expected}")
    k = int(up.send_target[rank])
    owner_world = pm.alpha * k
    is_owner = rank == owner_world

    segments = up.segments(k)
    my_offset = next(off for src, off, _ in segments if src == rank)

    if mode == "direct":
        # GPU-aware path: every source lands straight in device memory
        ctx.send(owner_world, (my_offset, packed.values), category=CAT_DEVICE_DIRECT)
        if not is_owner:
            return None
        for src, off, length in segments:
            r_off, vals = ctx.recv(src)
            if r_off != off or len(vals) != length:
                raise ValueError(f"update pattern violation: segment of rank {src} "
                                 f"is ({r_off}, {len(vals)}), expected ({off}, {length})")
            buffer.fill(r_off, vals)
        return buffer

    # staged path: gather on the owner's host, then one bulk device copy
    if not is_owner:
        ctx.send(owner_world, (my_offset, packed.values), category=CAT_RANK)
        return None
    staging = np.zeros(up.total(k), dtype=np.float64)
    for src, off, length in segments:
        if src == rank:
            r_off, vals = off, packed.values
        else:
            r_off, vals = ctx.recv(src)
        if r_off != off or len(vals) != length:
            raise ValueError(f"update pattern violation: segment of rank {src} "
                             f"is ({r_off}, {len(vals)}), expected ({off}, {length})")
        staging[off:off + length] = vals
    ctx.send(rank, (0, staging), category=CAT_DEVICE_STAGED)
    s_off, vals = ctx.recv(rank)
    buffer.fill(s_off, vals)
    return buffer


def apply_scatter(buffer: DeviceBuffer, sm: ScatterMap,
                  matrix: DistributedCooMatrix) -> None:
    """Write every buffer position into its mapped value slot; pattern untouched."""
    vals = buffer.values()
    if len(vals) != len(sm):
        raise ValueError(f"scatter length mismatch: buffer {len(vals)}, map {len(sm)}")
    matrix.local.vals[sm.index[sm.to_local]] = vals[sm.to_local]
    matrix.non_local.vals[sm.index[~sm.to_local]] = vals[~sm.to_local]


def update(system: RepartitionedSystem, m: LduMatrix,
           ifaces: list[InterfaceBlock], mode: str = "direct") -> None:
    """Replay the update path: pack, transfer, scatter.

    Collective over the world.  The host matrix must have the sparsity the
    system was created with; any drift raises instead of silently corrupting
    the device matrix.
    """
    fp = sparsity_fingerprint(m, ifaces)
    if fp != system.fingerprint:
        raise PatternDriftError(
            f"pattern drift on rank {system.ctx.rank}: host sparsity changed from "
            f"{system.fingerprint} to {fp}; run repartition again")
    packed = pack_coefficients(m, ifaces, system.ctx.rank)
    buffer = transfer_coefficients(packed, system.update_pattern, mode,
                                   system.ctx, system.pm, system.device)
    if system.is_owner:
        apply_scatter(buffer, system.scatter, system.matrix)
