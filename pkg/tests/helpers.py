"""Shared builders for the test suite."""

import numpy as np

import ldurepart as lr


def chain_setup(n_ranks=4, n_cells=8, alpha=None):
    """1D chain grid decomposed into equal slabs, with assembled parts."""
    grid = lr.StructuredGrid(n_cells, 1, 1)
    parts = lr.decompose_slab(grid, n_ranks)
    assembled = [lr.assemble_poisson(p) for p in parts]
    pm = None
    if alpha is not None:
        pm = lr.make_partition_map([p.n_cells for p in parts], alpha)
    return grid, parts, assembled, pm


def random_partitioned_system(rng, max_cells=50, max_ranks=4):
    """Random global sparse system split into contiguous rank blocks.

    The pattern is symmetric (LDU requires it) but the values are not.
    Returns the partition map, per-rank (LduMatrix, interface blocks), and
    the global {(row, col): value} dict serving as ground truth.
    """
    n_cpu = int(rng.integers(1, max_ranks + 1))
    divisors = [d for d in range(1, n_cpu + 1) if n_cpu % d == 0]
    alpha = int(divisors[rng.integers(0, len(divisors))])
    cells = rng.integers(1, max(2, max_cells // n_cpu) + 1, size=n_cpu)
    pm = lr.make_partition_map(cells, alpha)
    total = pm.total_cells

    pairs = set()
    for _ in range(int(rng.integers(0, 2 * total + 1))):
        i, j = (int(v) for v in rng.integers(0, total, size=2))
        if i != j:
            pairs.add((min(i, j), max(i, j)))

    values = {(c, c): float(rng.normal(loc=4.0)) for c in range(total)}
    for a, b in pairs:
        values[(a, b)] = float(rng.normal())
        values[(b, a)] = float(rng.normal())

    per_rank = []
    for r in range(n_cpu):
        lo, hi = pm.cpu_range(r)
        local = sorted((a, b) for a, b in pairs if lo <= a < hi and lo <= b < hi)
        m = lr.LduMatrix(
            n_cells=hi - lo,
            lower_addr=[a - lo for a, b in local],
            upper_addr=[b - lo for a, b in local],
            diag=[values[(c, c)] for c in range(lo, hi)],
            lower_val=[values[(b, a)] for a, b in local],
            upper_val=[values[(a, b)] for a, b in local])
        ifaces = []
        for q in range(n_cpu):
            if q == r:
                continue
            qlo, qhi = pm.cpu_range(q)
            ents = sorted((i, j) for a, b in pairs for i, j in ((a, b), (b, a))
                          if lo <= i < hi and qlo <= j < qhi)
            if ents:
                ifaces.append(lr.InterfaceBlock(
                    neighbor_rank=q,
                    rows=[i - lo for i, j in ents],
                    cols_remote=[j - qlo for i, j in ents],
                    values=[values[(i, j)] for i, j in ents]))
        per_rank.append((m, ifaces))
    return pm, per_rank, values


def fuse_pipeline(pm, per_rank):
    """Run extract -> fuse -> scatter per owner without a world.

    Returns, per GPU rank: fused local/non-local patterns, scatter map, and
    the simulated receive buffer (concatenated packed values of its sources).
    """
    sps = [lr.extract_sparsity(m, ifs, pm, r) for r, (m, ifs) in enumerate(per_rank)]
    up = lr.build_update_pattern(pm, [sp.n_entries for sp in sps])
    out = {}
    for k in range(pm.n_gpu):
        received = sps[pm.alpha * k: pm.alpha * (k + 1)]
        local_pat, nonlocal_pat = lr.fuse_patterns(received, pm, k)
        sm = lr.build_scatter_map(received, local_pat, nonlocal_pat, pm)
        buf = np.concatenate([
            lr.pack_coefficients(m, ifs, pm.alpha * k + i).values
            for i, (m, ifs) in enumerate(per_rank[pm.alpha * k: pm.alpha * (k + 1)])])
        out[k] = (local_pat, nonlocal_pat, sm, buf, up)
    return out


def global_matrix_from_values(total, values):
    rows = [i for i, j in values]
    cols = [j for i, j in values]
    vals = [values[(i, j)] for i, j in values]
    return lr.coo_from_entries(total, total, rows, cols, vals)
