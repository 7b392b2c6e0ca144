import numpy as np
import pytest

import ldurepart as lr
from ldurepart.repart import dump_scatter, dump_sparsity, pack_order_pairs
from helpers import (chain_setup, fuse_pipeline, global_matrix_from_values,
                     random_partitioned_system)


@pytest.fixture
def chain():
    grid, parts, assembled, _ = chain_setup(4)
    pm = lr.make_partition_map([p.n_cells for p in parts], 2)
    return grid, parts, assembled, pm


def pattern_pairs(rows, cols):
    return set(zip(rows.tolist(), cols.tolist()))


class TestExtractSparsity:
    def test_chain_rank1(self, chain):
        _, _, assembled, pm = chain
        m, ifs = assembled[1]
        sp = lr.extract_sparsity(m, ifs, pm, 1)
        assert pattern_pairs(sp.local_rows, sp.local_cols) == {(2, 2), (2, 3), (3, 2), (3, 3)}
        assert pattern_pairs(sp.nonlocal_rows, sp.nonlocal_cols) == {(2, 1), (3, 4)}
        assert (sp.row_lo, sp.row_hi) == (2, 4)

    def test_no_interfaces(self):
        grid, parts, assembled, _ = chain_setup(1, n_cells=5)
        pm = lr.make_partition_map([5], 1)
        sp = lr.extract_sparsity(*assembled[0], pm, 0)
        assert len(sp.nonlocal_rows) == 0

    def test_diagonal_only_part(self):
        pm = lr.make_partition_map([3, 3], 1)
        m = lr.LduMatrix(3, [], [], [5.0, 6.0, 7.0], [], [])
        sp = lr.extract_sparsity(m, [], pm, 1)
        assert pattern_pairs(sp.local_rows, sp.local_cols) == {(3, 3), (4, 4), (5, 5)}

    def test_inconsistent_interface_rejected(self, chain):
        _, _, assembled, pm = chain
        m, _ = assembled[1]
        bad = [lr.InterfaceBlock(0, rows=[0], cols_remote=[7], values=[-1.0])]
        with pytest.raises(ValueError, match="inconsistent interface"):
            lr.extract_sparsity(m, bad, pm, 1)


class TestExchangePatterns:
    def test_owner_receives_sources_in_order(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
            received = lr.exchange_patterns(sp, pm, ctx)
            return [(p.row_lo, p.row_hi) for p in received]

        res = lr.run_world(4, program)
        assert res[0] == [(0, 2), (2, 4)]
        assert res[2] == [(4, 6), (6, 8)]
        assert res[1] == [] and res[3] == []

    def test_alpha_one_self_exchange(self):
        _, _, assembled, pm = chain_setup(4, alpha=1)

        def program(ctx):
            sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
            received = lr.exchange_patterns(sp, pm, ctx)
            return len(received)

        assert lr.run_world(4, program) == [1, 1, 1, 1]

    def test_single_owner_receives_all(self):
        _, _, assembled, pm = chain_setup(4, alpha=4)

        def program(ctx):
            sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
            return len(lr.exchange_patterns(sp, pm, ctx))

        assert lr.run_world(4, program) == [4, 0, 0, 0]


class TestFusePatterns:
    def test_chain_gpu0(self, chain):
        _, _, assembled, pm = chain
        received = [lr.extract_sparsity(*assembled[r], pm, r) for r in (0, 1)]
        local, nonlocal_ = lr.fuse_patterns(received, pm, 0)
        assert len(local[0]) == 10
        assert pattern_pairs(*nonlocal_) == {(3, 4)}
        # localized couplings became local
        assert {(1, 2), (2, 1)} <= pattern_pairs(*local)

    def test_alpha_one_identity(self, chain):
        _, _, assembled, _ = chain
        pm = lr.make_partition_map([2, 2, 2, 2], 1)
        sp = lr.extract_sparsity(*assembled[1], pm, 1)
        local, nonlocal_ = lr.fuse_patterns([sp], pm, 1)
        assert pattern_pairs(*local) == pattern_pairs(sp.local_rows, sp.local_cols)
        assert pattern_pairs(*nonlocal_) == pattern_pairs(sp.nonlocal_rows, sp.nonlocal_cols)

    def test_single_owner_full_pattern(self, chain):
        _, _, assembled, _ = chain
        pm = lr.make_partition_map([2, 2, 2, 2], 4)
        received = [lr.extract_sparsity(*assembled[r], pm, r) for r in range(4)]
        local, nonlocal_ = lr.fuse_patterns(received, pm, 0)
        assert len(local[0]) == 22
        assert len(nonlocal_[0]) == 0

    def test_overlapping_ownership_rejected(self):
        # hand-built invalid input: a coupling localizes onto an existing entry
        pm = lr.make_partition_map([2, 2], 2)
        good = lr.SparsityPattern(
            local_rows=np.array([0, 0, 1]), local_cols=np.array([0, 2, 1]),
            nonlocal_rows=np.array([0]), nonlocal_cols=np.array([2]),
            row_lo=0, row_hi=2)
        other = lr.SparsityPattern(
            local_rows=np.array([2, 3]), local_cols=np.array([2, 3]),
            nonlocal_rows=np.zeros(0, dtype=np.int64),
            nonlocal_cols=np.zeros(0, dtype=np.int64), row_lo=2, row_hi=4)
        with pytest.raises(ValueError, match="overlapping ownership"):
            lr.fuse_patterns([good, other], pm, 0)

    def test_localization_membership(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            pm, per_rank, _ = random_partitioned_system(rng)
            for k in range(pm.n_gpu):
                received = [lr.extract_sparsity(*per_rank[r], pm, r)
                            for r in range(pm.alpha * k, pm.alpha * (k + 1))]
                local, nonlocal_ = lr.fuse_patterns(received, pm, k)
                lo, hi = pm.gpu_range(k)
                assert ((local[1] >= lo) & (local[1] < hi)).all()
                if len(nonlocal_[1]):
                    assert (~((nonlocal_[1] >= lo) & (nonlocal_[1] < hi))).all()


class TestUpdatePattern:
    def test_chain_counts(self, chain):
        _, _, assembled, pm = chain
        counts = [lr.extract_sparsity(*assembled[r], pm, r).n_entries for r in range(4)]
        assert counts == [5, 6, 6, 5]
        up = lr.build_update_pattern(pm, counts)
        assert up.segments(0) == [(0, 0, 5), (1, 5, 6)]
        assert up.segments(1) == [(2, 0, 6), (3, 6, 5)]
        assert up.total(0) == 11

    def test_single_source(self):
        pm = lr.make_partition_map([4], 1)
        up = lr.build_update_pattern(pm, [9])
        assert up.segments(0) == [(0, 0, 9)]

    def test_equal_counts_prefix(self):
        pm = lr.make_partition_map([1] * 6, 3)
        up = lr.build_update_pattern(pm, [7] * 6)
        assert up.recv_offsets[0].tolist() == [0, 7, 14, 21]
        assert up.recv_offsets[1].tolist() == [0, 7, 14, 21]


class TestScatterMap:
    def test_chain_gpu0_endpoints(self, chain):
        _, _, assembled, pm = chain
        received = [lr.extract_sparsity(*assembled[r], pm, r) for r in (0, 1)]
        local, nonlocal_ = lr.fuse_patterns(received, pm, 0)
        sm = lr.build_scatter_map(received, local, nonlocal_, pm)
        # buffer index 0 is rank 0's diag of cell 0 -> local slot of (0, 0)
        assert sm.to_local[0]
        assert (local[0][sm.index[0]], local[1][sm.index[0]]) == (0, 0)
        # buffer index 10 is rank 1's coupling toward rank 2 -> non-local (3, 4)
        assert not sm.to_local[10]
        assert (nonlocal_[0][sm.index[10]], nonlocal_[1][sm.index[10]]) == (3, 4)

    def test_pack_order_matches_pack_values(self, chain):
        # the provenance pairs and the packed values line up entry by entry
        _, _, assembled, pm = chain
        ref = lr.assemble_global_from_parts(assembled, pm)
        dense = {}
        for i, j, v in zip(ref.rows, ref.cols, ref.vals):
            dense[(int(i), int(j))] = v
        for r in range(4):
            sp = lr.extract_sparsity(*assembled[r], pm, r)
            rows, cols = pack_order_pairs(sp, pm)
            packed = lr.pack_coefficients(*assembled[r], r)
            assert len(rows) == len(packed.values)
            for i, j, v in zip(rows, cols, packed.values):
                assert dense[(int(i), int(j))] == v

    def test_diagonal_only_identity(self):
        pm = lr.make_partition_map([4], 1)
        m = lr.LduMatrix(4, [], [], [1.0, 2.0, 3.0, 4.0], [], [])
        sp = lr.extract_sparsity(m, [], pm, 0)
        local, nonlocal_ = lr.fuse_patterns([sp], pm, 0)
        sm = lr.build_scatter_map([sp], local, nonlocal_, pm)
        assert sm.to_local.all()
        assert sm.index.tolist() == [0, 1, 2, 3]

    def test_ldu_to_row_major_permutation(self):
        # single source, no interfaces: scatter must sort [diag|upper|lower]
        pm = lr.make_partition_map([3], 1)
        m = lr.LduMatrix(3, [0, 1], [1, 2], [10.0, 20.0, 30.0], [1.0, 2.0], [3.0, 4.0])
        sp = lr.extract_sparsity(m, [], pm, 0)
        local, nonlocal_ = lr.fuse_patterns([sp], pm, 0)
        sm = lr.build_scatter_map([sp], local, nonlocal_, pm)
        buf = lr.pack_coefficients(m, [], 0).values
        out = np.zeros(sm.n_local)
        out[sm.index[sm.to_local]] = buf[sm.to_local]
        coo = lr.ldu_to_coo(m)
        np.testing.assert_array_equal(out, coo.vals)

    def test_bijection_validated(self):
        with pytest.raises(ValueError, match="bijection"):
            lr.ScatterMap(to_local=[True, True], index=[0, 0], n_local=2, n_nonlocal=0)


class TestRepartition:
    def test_chain_alpha2_values(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            if system.is_owner:
                return (system.matrix.local.vals.tolist(),
                        system.matrix.non_local.vals.tolist())
            return None

        res = lr.run_world(4, program)
        assert res[0] == ([2, -1, -1, 2, -1, -1, 2, -1, -1, 2], [-1])
        assert res[2] == ([2, -1, -1, 2, -1, -1, 2, -1, -1, 2], [-1])

    def test_alpha_one_keeps_per_rank_split(self, chain):
        _, _, assembled, _ = chain
        pm = lr.make_partition_map([2, 2, 2, 2], 1)

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            coo = lr.ldu_to_coo(assembled[ctx.rank][0])
            assert np.array_equal(system.matrix.local.vals, coo.vals)
            n_iface = sum(len(b) for b in assembled[ctx.rank][1])
            return (system.matrix.local.nnz, system.matrix.non_local.nnz, n_iface)

        for local_nnz, nl_nnz, n_iface in lr.run_world(4, program):
            assert nl_nnz == n_iface

    def test_entry_conservation_random_systems(self):
        rng = np.random.default_rng(21)
        for _ in range(8):
            pm, per_rank, values = random_partitioned_system(rng, max_ranks=4)
            ref = global_matrix_from_values(pm.total_cells, values)

            def program(ctx):
                system = lr.repartition(*per_rank[ctx.rank], pm, ctx)
                if system.is_owner:
                    return lr.gather_global(system.matrix, pm, system.comm)
                return None

            gathered = lr.run_world(pm.n_cpu, program)[0]
            assert lr.compare_matrices(gathered, ref, tol=0.0).ok

    def test_inactive_ranks_never_allocate_device_buffers(self, chain):
        _, _, assembled, pm = chain
        world = lr.World(4)
        world.run(lambda ctx: lr.repartition(*assembled[ctx.rank], pm, ctx) and None)
        assert world.device_allocations == [1, 0, 1, 0]

    def test_mismatched_collective_participation_deadlocks(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
            if ctx.rank == 3:
                return None  # skips the collective
            return len(lr.exchange_patterns(sp, pm, ctx))

        with pytest.raises(lr.DeadlockError):
            lr.run_world(4, program)

    def test_monotone_interface_reduction(self):
        grid = lr.StructuredGrid(12, 12, 12)
        parts = lr.decompose_slab(grid, 8)
        assembled = [lr.assemble_poisson(p) for p in parts]
        nl_counts = []
        for alpha in (1, 2, 4, 8):
            pm = lr.make_partition_map([p.n_cells for p in parts], alpha)

            def program(ctx):
                system = lr.repartition(*assembled[ctx.rank], pm, ctx)
                if system.is_owner:
                    return system.comm.allreduce_sum(system.matrix.non_local.nnz)
                return None

            nl_counts.append(lr.run_world(8, program)[0])
        assert nl_counts == sorted(nl_counts, reverse=True)
        assert nl_counts[-1] == 0


class TestDumps:
    def test_sparsity_dump_fixture(self, chain):
        _, _, assembled, pm = chain
        sp = lr.extract_sparsity(*assembled[1], pm, 1)
        assert dump_sparsity(sp) == (
            "rows 2 4\n"
            "local 2 2\nlocal 2 3\nlocal 3 2\nlocal 3 3\n"
            "nonlocal 2 1\nnonlocal 3 4\n")

    def test_scatter_dump_lines(self, chain):
        _, _, assembled, pm = chain
        received = [lr.extract_sparsity(*assembled[r], pm, r) for r in (0, 1)]
        local, nonlocal_ = lr.fuse_patterns(received, pm, 0)
        sm = lr.build_scatter_map(received, local, nonlocal_, pm)
        lines = dump_scatter(sm).splitlines()
        assert len(lines) == 11
        assert lines[0] == "0 -> local 0"
        assert lines[10] == "10 -> nonlocal 0"
