"""Repartitioning of distributed LDU matrices onto coarser solver parts.

Per-rank LDU matrices assembled on a fine partition are fused onto a coarse
partition via an integer ratio alpha, with reusable update patterns and
scatter maps, validated by a distributed CG solver and a global-assembly
oracle, plus a timestep cost model and rank-count optimizer.
"""

from .core import (CooMatrix, DistributedCooMatrix, InterfaceBlock, LduMatrix,
                   PartitionMap, coo_from_entries, gpu_owner, ldu_to_coo,
                   make_partition_map, read_matrix_market, write_matrix_market)
from .assembly import (StructuredGrid, SubdomainMesh, assemble_poisson,
                       build_grid, decompose_slab, perturb_coefficients)
from .transport import (CAT_DEVICE_DIRECT, CAT_DEVICE_STAGED, CAT_RANK,
                        CommGroup, DeadlockError, DeviceBuffer, RankContext,
                        RankFailedError, World, WorldError, run_world,
                        split_active)
from .repart import (RepartitionedSystem, ScatterMap, SparsityPattern,
                     UpdatePattern, build_scatter_map, build_update_pattern,
                     exchange_patterns, extract_sparsity, fuse_patterns,
                     repartition)
from .update import (PackedCoefficients, PatternDriftError, apply_scatter,
                     pack_coefficients, transfer_coefficients, update)
from .solver import HaloPlan, SolveReport, build_halo_plan, cg_solve, spmv
from .costmodel import (CappedSpeedup, CommCostParams, CostCurves,
                        DegradingSpeedup, IdealSpeedup, Resources,
                        TabulatedSpeedup, best_homogeneous, load_curves_csv,
                        optimize_ranks, recommend_alpha, total_time,
                        total_time_hetero)
from .oracle import (CompareReport, assemble_global_from_parts,
                     compare_matrices, gather_global,
                     reference_global_assemble, reference_solve)
from .cli import BenchRecord, CaseConfig, run_case, sweep

__version__ = "0.1.0"
