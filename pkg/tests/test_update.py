import numpy as np
import pytest

import ldurepart as lr
from helpers import chain_setup


@pytest.fixture
def chain():
    grid, parts, assembled, _ = chain_setup(4)
    pm = lr.make_partition_map([p.n_cells for p in parts], 2)
    return grid, parts, assembled, pm


class TestPackCoefficients:
    def test_chain_rank1_layout(self, chain):
        _, _, assembled, _ = chain
        packed = lr.pack_coefficients(*assembled[1], 1)
        assert packed.values.tolist() == [2, 2, -1, -1, -1, -1]
        assert packed.source_rank == 1

    def test_diagonal_only(self):
        m = lr.LduMatrix(3, [], [], [4.0, 5.0, 6.0], [], [])
        assert lr.pack_coefficients(m, [], 0).values.tolist() == [4, 5, 6]

    def test_perturbed_repack(self, chain):
        _, _, assembled, _ = chain
        m1, if1 = lr.perturb_coefficients(*assembled[1], 1)
        packed = lr.pack_coefficients(m1, if1, 1)
        assert packed.values.tolist() == [2.02, 2.02, -1, -1, -1, -1]

    def test_interfaces_sorted_by_neighbor(self, chain):
        _, _, assembled, _ = chain
        m, ifs = assembled[1]
        reordered = list(reversed(ifs))
        packed = lr.pack_coefficients(m, reordered, 1)
        assert packed.values.tolist() == lr.pack_coefficients(m, ifs, 1).values.tolist()


class TestTransferCoefficients:
    def test_chain_buffer_concatenation(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
            counts = ctx.allgather(sp.n_entries)
            up = lr.build_update_pattern(pm, counts)
            buf = ctx.alloc_device(up.total(ctx.rank // 2)) if ctx.rank % 2 == 0 else None
            packed = lr.pack_coefficients(*assembled[ctx.rank], ctx.rank)
            out = lr.transfer_coefficients(packed, up, "direct", ctx, pm, buf)
            return out.values().tolist() if out is not None else None

        res = lr.run_world(4, program)
        assert res[0] == [2, 2, -1, -1, -1, 2, 2, -1, -1, -1, -1]
        assert res[1] is None

    def test_alpha_one_no_rank_traffic(self):
        _, _, assembled, pm = chain_setup(4, alpha=1)

        def program(ctx):
            sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
            counts = ctx.allgather(sp.n_entries)
            up = lr.build_update_pattern(pm, counts)
            base = ctx.world.traffic[lr.CAT_RANK].bytes_sent
            for mode in ("direct", "staged"):
                buf = ctx.alloc_device(up.total(ctx.rank))
                packed = lr.pack_coefficients(*assembled[ctx.rank], ctx.rank)
                out = lr.transfer_coefficients(packed, up, mode, ctx, pm, buf)
                np.testing.assert_array_equal(out.values(), packed.values)
            return ctx.world.traffic[lr.CAT_RANK].bytes_sent - base

        assert lr.run_world(4, program) == [0, 0, 0, 0]

    def test_modes_match_but_traffic_differs(self):
        grid = lr.StructuredGrid(12, 12, 12)
        parts = lr.decompose_slab(grid, 8)
        assembled = [lr.assemble_poisson(p) for p in parts]
        pm = lr.make_partition_map([p.n_cells for p in parts], 4)
        results = {}
        for mode in ("direct", "staged"):
            world = lr.World(8)

            def program(ctx, mode=mode):
                sp = lr.extract_sparsity(*assembled[ctx.rank], pm, ctx.rank)
                counts = ctx.allgather(sp.n_entries)
                up = lr.build_update_pattern(pm, counts)
                owner = ctx.rank % pm.alpha == 0
                buf = ctx.alloc_device(up.total(ctx.rank // pm.alpha)) if owner else None
                packed = lr.pack_coefficients(*assembled[ctx.rank], ctx.rank)
                out = lr.transfer_coefficients(packed, up, mode, ctx, pm, buf)
                if out is not None:
                    return out.values(), out.transfer_count
                return None

            res = world.run(program)
            results[mode] = (res, {cat: c.bytes_sent for cat, c in world.traffic.items()})

        direct_res, direct_traffic = results["direct"]
        staged_res, staged_traffic = results["staged"]
        for d, s in zip(direct_res, staged_res):
            assert (d is None) == (s is None)
            if d is not None:
                np.testing.assert_array_equal(d[0], s[0])
                assert d[1] == pm.alpha
                assert s[1] == 1
        assert staged_traffic[lr.CAT_RANK] > direct_traffic[lr.CAT_RANK]

    def test_segment_length_mismatch(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            up = lr.build_update_pattern(pm, [5, 6, 6, 5])
            values = np.zeros(3)  # wrong length for every rank
            packed = lr.PackedCoefficients(ctx.rank, values)
            buf = ctx.alloc_device(11) if ctx.rank % 2 == 0 else None
            lr.transfer_coefficients(packed, up, "direct", ctx, pm, buf)

        with pytest.raises(lr.RankFailedError) as err:
            lr.run_world(4, program)
        assert "update pattern violation" in str(err.value.cause)


class TestApplyScatter:
    def test_chain_initial_values(self, chain):
        # covered end to end in test_repart; here the zero and identity cases
        _, _, assembled, pm = chain

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            if system.is_owner:
                system.device.fill(0, np.zeros(len(system.device)))
                lr.apply_scatter(system.device, system.scatter, system.matrix)
                return (system.matrix.local.vals.tolist(),
                        system.matrix.non_local.vals.tolist())
            return None

        res = lr.run_world(4, program)
        assert res[0] == ([0.0] * 10, [0.0])

    def test_length_mismatch(self):
        pm = lr.make_partition_map([2], 1)
        m = lr.LduMatrix(2, [], [], [1.0, 2.0], [], [])
        sp = lr.extract_sparsity(m, [], pm, 0)
        local, nonlocal_ = lr.fuse_patterns([sp], pm, 0)
        sm = lr.build_scatter_map([sp], local, nonlocal_, pm)

        def program(ctx):
            buf = ctx.alloc_device(5)
            matrix = None
            lr.apply_scatter(buf, sm, matrix)

        with pytest.raises(lr.RankFailedError) as err:
            lr.run_world(1, program)
        assert "mismatch" in str(err.value.cause)


class TestUpdate:
    def test_idempotent_without_changes(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            before = system.matrix.local.vals.copy() if system.is_owner else None
            lr.update(system, *assembled[ctx.rank], "direct")
            if system.is_owner:
                return np.array_equal(before, system.matrix.local.vals)
            return True

        assert all(lr.run_world(4, program))

    def test_twenty_steps_match_fresh_repartition(self):
        grid = lr.StructuredGrid(6, 6, 6)
        parts = lr.decompose_slab(grid, 4)
        assembled = [lr.assemble_poisson(p) for p in parts]
        pm = lr.make_partition_map([p.n_cells for p in parts], 2)

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            ok = True
            for step in range(1, 21):
                m_s, if_s = lr.perturb_coefficients(*assembled[ctx.rank], step)
                lr.update(system, m_s, if_s, "direct")
                fresh = lr.repartition(m_s, if_s, pm, ctx)
                if system.is_owner:
                    ok &= np.array_equal(system.matrix.local.vals, fresh.matrix.local.vals)
                    ok &= np.array_equal(system.matrix.non_local.vals,
                                         fresh.matrix.non_local.vals)
            return ok

        assert all(lr.run_world(4, program))

    def test_staged_equals_direct(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            m_s, if_s = lr.perturb_coefficients(*assembled[ctx.rank], 3)
            lr.update(system, m_s, if_s, "direct")
            direct = system.matrix.local.vals.copy() if system.is_owner else None
            lr.update(system, m_s, if_s, "staged")
            if system.is_owner:
                return np.array_equal(direct, system.matrix.local.vals)
            return True

        assert all(lr.run_world(4, program))

    def test_pattern_drift_detected(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            m, _ = assembled[ctx.rank]
            drifted = lr.LduMatrix(m.n_cells, [], [], m.diag, [], [])
            lr.update(system, drifted, [], "direct")

        with pytest.raises(lr.RankFailedError) as err:
            lr.run_world(4, program)
        assert isinstance(err.value.cause, lr.PatternDriftError)
        assert "pattern drift" in str(err.value.cause)

    def test_pattern_arrays_never_rewritten(self, chain):
        _, _, assembled, pm = chain

        def program(ctx):
            system = lr.repartition(*assembled[ctx.rank], pm, ctx)
            if system.is_owner:
                rows_before = system.matrix.local.rows
                m_s, if_s = lr.perturb_coefficients(*assembled[ctx.rank], 2)
                lr.update(system, m_s, if_s, "direct")
                assert system.matrix.local.rows is rows_before
                assert not system.matrix.local.rows.flags.writeable
            else:
                m_s, if_s = lr.perturb_coefficients(*assembled[ctx.rank], 2)
                lr.update(system, m_s, if_s, "direct")
            return True

        assert all(lr.run_world(4, program))
