"""Benchmark and verification driver.

``run`` executes one case as an assemble -> update -> solve loop over a fixed
number of pseudo-timesteps: step 1 creates the repartitioned system, every
later step perturbs the host coefficients, replays the update path and solves
again.  Per-step averages exclude the first step, where creation happens.
``sweep`` runs a cross product of cases into a CSV; ``advise`` surfaces the
cost-model optimizer; ``export-mtx`` writes the gathered global matrix in
Matrix Market format.

Timings are wall-clock measurements inside the simulated world.  They are
reported, never asserted: the deterministic scheduler serializes rank
execution, so they are simulation-level numbers, not hardware claims.  All
correctness columns are deterministic and reproducible byte for byte.
"""

import argparse
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (StructuredGrid, assemble_poisson, build_grid,
                       decompose_slab, perturb_coefficients)
from .core import make_partition_map, write_matrix_market
from .costmodel import (CommCostParams, Resources, best_homogeneous,
                        load_curves_csv, optimize_ranks, recommend_alpha)
from .oracle import (assemble_global_from_parts, compare_matrices, gather_global,
                     reference_solve)
from .repart import repartition
from .solver import cg_solve
from .transport import CAT_DEVICE_DIRECT, CAT_DEVICE_STAGED, CAT_RANK, World
from .update import TRANSFER_MODES, update

CSV_COLUMNS = [
    "case", "n_cells", "n_cpu", "alpha", "mode", "steps", "iterations",
    "converged", "residual", "nnz_local", "nnz_nonlocal", "bytes_rank_to_rank",
    "bytes_device_direct", "bytes_host_staged", "device_transfers", "verify_ok",
    "t_assemble", "t_update", "t_solve", "t_step", "phi", "perf", "error",
]
# wall-clock derived columns; everything else is byte-reproducible
TIMING_COLUMNS = ("t_assemble", "t_update", "t_solve", "t_step", "phi", "perf")


@dataclass(frozen=True)
class CaseConfig:
    """One benchmark case; all inputs are deterministic."""

    nx: int
    ny: int
    nz: int
    n_cpu: int
    alpha: int = 1
    mode: str = "direct"
    tol: float = 1e-8
    max_iter: int = 2000
    n_steps: int = 20
    verify: bool = False

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ValueError(f"unknown transfer mode: {self.mode!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        grid = self.grid()
        parts = decompose_slab(grid, self.n_cpu)
        make_partition_map([p.n_cells for p in parts], self.alpha)

    def grid(self) -> StructuredGrid:
        return StructuredGrid(self.nx, self.ny, self.nz)

    @property
    def name(self) -> str:
        if self.alpha == self.n_cpu and self.n_cpu > 1:
            tag = "URR1"
        elif self.alpha == 1:
            tag = "OSR1"
        else:
            tag = f"OSRR{self.alpha}"
        return f"{tag}-{self.nx}x{self.ny}x{self.nz}-r{self.n_cpu}-{self.mode}"


@dataclass
class BenchRecord:
    """Per-case results; per-step lists indexed from step 1."""

    case: str
    n_cells: int
    n_cpu: int
    alpha: int
    mode: str
    n_steps: int
    t_assemble: list = field(default_factory=list)
    t_update: list = field(default_factory=list)
    t_solve: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    nnz_local: int = 0
    nnz_nonlocal: int = 0
    traffic_bytes: dict = field(default_factory=dict)
    device_transfers: int = 0
    converged: bool = True
    verify_ok: bool | None = None
    error: str | None = None

    def _avg(self, values) -> float | None:
        # per-step averages exclude the first (creation) step
        tail = values[1:]
        if not tail:
            return None
        return sum(tail) / len(tail)

    @property
    def avg_assemble(self):
        return self._avg(self.t_assemble)

    @property
    def avg_update(self):
        return self._avg(self.t_update)

    @property
    def avg_solve(self):
        return self._avg(self.t_solve)

    @property
    def avg_step(self):
        parts = (self.avg_assemble, self.avg_update, self.avg_solve)
        if any(p is None for p in parts):
            return None
        return sum(parts)

    @property
    def phi(self):
        """Device/host time ratio per step: solve time over assemble time."""
        a, s = self.avg_assemble, self.avg_solve
        if a is None or s is None or a == 0.0:
            return None
        return s / a

    @property
    def perf(self):
        """Throughput in cells per second of an average step."""
        t = self.avg_step
        if t is None or t == 0.0:
            return None
        return self.n_cells / t

    def to_row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return f"{v:.17g}"
            return str(v)

        values = {
            "case": self.case, "n_cells": self.n_cells, "n_cpu": self.n_cpu,
            "alpha": self.alpha, "mode": self.mode, "steps": self.n_steps,
            "iterations": self.iterations[-1] if self.iterations else None,
            "converged": self.converged,
            "residual": self.residuals[-1] if self.residuals else None,
            "nnz_local": self.nnz_local, "nnz_nonlocal": self.nnz_nonlocal,
            "bytes_rank_to_rank": self.traffic_bytes.get(CAT_RANK),
            "bytes_device_direct": self.traffic_bytes.get(CAT_DEVICE_DIRECT),
            "bytes_host_staged": self.traffic_bytes.get(CAT_DEVICE_STAGED),
            "device_transfers": self.device_transfers,
            "verify_ok": self.verify_ok,
            "t_assemble": self.avg_assemble, "t_update": self.avg_update,
            "t_solve": self.avg_solve, "t_step": self.avg_step,
            "phi": self.phi, "perf": self.perf,
            "error": self.error,
        }
        return [fmt(values[c]) for c in CSV_COLUMNS]


def run_case(cfg: CaseConfig) -> BenchRecord:
    """Execute one case on a fresh deterministic world."""
    grid = cfg.grid()
    parts = decompose_slab(grid, cfg.n_cpu)
    pm = make_partition_map([p.n_cells for p in parts], cfg.alpha)
    world = World(cfg.n_cpu, deterministic=True)
    ref_tol = min(cfg.tol, 1e-10)

    def reference_matrix(step):
        per_rank = []
        for p in parts:
            m, ifs = assemble_poisson(p)
            if step >= 2:
                m, ifs = perturb_coefficients(m, ifs, step)
            per_rank.append((m, ifs))
        return assemble_global_from_parts(per_rank, pm)

    def program(ctx):
        clock = time.monotonic
        part = parts[ctx.rank]
        stats = {"t_assemble": [], "t_update": [], "t_solve": [],
                 "iterations": [], "residual": [], "converged": [], "verify": []}

        t0 = clock()
        base_m, base_if = assemble_poisson(part)
        stats["t_assemble"].append(clock() - t0)
        t0 = clock()
        system = repartition(base_m, base_if, pm, ctx)
        stats["t_update"].append(clock() - t0)

        def solve_and_verify(step):
            x = None
            if system.is_owner:
                b = np.ones(system.matrix.n_owned)
                t0 = clock()
                x, rep = cg_solve(system.matrix, system.halo, b,
                                  cfg.tol, cfg.max_iter, system.comm)
                stats["t_solve"].append(clock() - t0)
                stats["iterations"].append(rep.iterations)
                stats["residual"].append(rep.residual)
                stats["converged"].append(rep.converged)
            else:
                stats["t_solve"].append(0.0)
            if cfg.verify and system.is_owner:
                gathered = gather_global(system.matrix, pm, system.comm)
                pieces = system.comm.gather(x, 0)
                if gathered is not None:
                    report = compare_matrices(gathered, reference_matrix(step), tol=0.0)
                    x_ref = reference_solve(gathered, np.ones(pm.total_cells), ref_tol)
                    x_full = np.concatenate(pieces)
                    err = (np.linalg.norm(x_full - x_ref)
                           / max(np.linalg.norm(x_ref), 1e-300))
                    stats["verify"].append(report.ok and err <= 1e-6)

        solve_and_verify(1)
        for step in range(2, cfg.n_steps + 1):
            t0 = clock()
            m_s, if_s = perturb_coefficients(base_m, base_if, step)
            stats["t_assemble"].append(clock() - t0)
            t0 = clock()
            update(system, m_s, if_s, cfg.mode)
            stats["t_update"].append(clock() - t0)
            solve_and_verify(step)

        if system.is_owner:
            sizes = system.comm.gather((system.matrix.local.nnz,
                                        system.matrix.non_local.nnz,
                                        system.device.transfer_count), 0)
            if sizes is not None:
                stats["nnz_local"] = sum(s[0] for s in sizes)
                stats["nnz_nonlocal"] = sum(s[1] for s in sizes)
                stats["device_transfers"] = sum(s[2] for s in sizes)
        return stats

    results = world.run(program)
    root = results[0]
    rec = BenchRecord(
        case=cfg.name, n_cells=grid.total_cells, n_cpu=cfg.n_cpu,
        alpha=cfg.alpha, mode=cfg.mode, n_steps=cfg.n_steps,
        t_assemble=[max(r["t_assemble"][s] for r in results) for s in range(cfg.n_steps)],
        t_update=[max(r["t_update"][s] for r in results) for s in range(cfg.n_steps)],
        t_solve=[max(r["t_solve"][s] for r in results) for s in range(cfg.n_steps)],
        iterations=root["iterations"],
        residuals=root["residual"],
        nnz_local=root["nnz_local"],
        nnz_nonlocal=root["nnz_nonlocal"],
        traffic_bytes={cat: c.bytes_sent for cat, c in world.traffic.items()},
        device_transfers=root["device_transfers"],
        converged=all(root["converged"]),
        verify_ok=all(root["verify"]) if cfg.verify else None,
    )
    return rec


def failed_record(cfg: CaseConfig, message: str) -> BenchRecord:
    return BenchRecord(case=cfg.name, n_cells=cfg.grid().total_cells,
                       n_cpu=cfg.n_cpu, alpha=cfg.alpha, mode=cfg.mode,
                       n_steps=cfg.n_steps, converged=False, error=message)


def sweep(configs: list[CaseConfig]) -> list[BenchRecord]:
    """Run every case; failures land in the record's error column."""
    if not configs:
        raise ValueError("empty sweep: need at least one case")
    records = []
    for cfg in configs:
        try:
            records.append(run_case(cfg))
        except Exception as exc:
            records.append(failed_record(cfg, str(exc)))
    return records


def write_csv(records: list[BenchRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rec in records:
            fh.write(",".join(rec.to_row()) + "\n")


def _parse_grid(args) -> tuple[int, int, int]:
    if args.grid_np is not None:
        edge = build_grid(args.grid_np).nx
        return edge, edge, edge
    try:
        nx, ny, nz = (int(t) for t in args.grid.split(","))
    except ValueError:
        raise ValueError(f"--grid expects NX,NY,NZ, got {args.grid!r}") from None
    return nx, ny, nz


def _case_from_args(args, alpha: int, mode: str) -> CaseConfig:
    nx, ny, nz = _parse_grid(args)
    return CaseConfig(nx=nx, ny=ny, nz=nz, n_cpu=args.ranks, alpha=alpha,
                      mode=mode, tol=args.tol, max_iter=args.max_iter,
                      n_steps=args.steps, verify=args.verify)


def _print_record(rec: BenchRecord, out) -> None:
    print(f"case {rec.case}: {rec.n_cells} cells, {rec.n_cpu} ranks, "
          f"alpha={rec.alpha}, mode={rec.mode}", file=out)
    if rec.error:
        print(f"  error: {rec.error}", file=out)
        return
    last_it = rec.iterations[-1] if rec.iterations else "-"
    last_res = f"{rec.residuals[-1]:.3e}" if rec.residuals else "-"
    verify = "-" if rec.verify_ok is None else ("ok" if rec.verify_ok else "FAILED")
    print(f"  steps={rec.n_steps} iterations={last_it} residual={last_res} "
          f"converged={'yes' if rec.converged else 'NO'} verify={verify}", file=out)
    print(f"  nnz_local={rec.nnz_local} nnz_nonlocal={rec.nnz_nonlocal} "
          f"device_transfers={rec.device_transfers}", file=out)
    if rec.avg_step is not None:
        print(f"  avg/step (first excluded): assemble={rec.avg_assemble:.6f}s "
              f"update={rec.avg_update:.6f}s solve={rec.avg_solve:.6f}s "
              f"phi={rec.phi:.3f} perf={rec.perf:.0f} cells/s", file=out)


def cmd_run(args, out) -> int:
    cfg = _case_from_args(args, int(args.alpha), args.mode)
    rec = run_case(cfg)
    _print_record(rec, out)
    if args.csv:
        write_csv([rec], args.csv)
    if cfg.verify and (rec.verify_ok is not True or not rec.converged):
        return 1
    return 0


def cmd_sweep(args, out) -> int:
    alphas = [int(a) for a in str(args.alpha).split(",")]
    modes = args.mode.split(",")
    for mode in modes:
        if mode not in TRANSFER_MODES:
            raise ValueError(f"unknown transfer mode: {mode!r}")
    configs = [_case_from_args(args, a, m) for a in alphas for m in modes]
    records = sweep(configs)
    write_csv(records, args.csv)
    for rec in records:
        _print_record(rec, out)
    print(f"wrote {len(records)} rows to {args.csv}", file=out)
    return 1 if any(r.error for r in records) else 0


def cmd_advise(args, out) -> int:
    curves = load_curves_csv(args.curves)
    comm = CommCostParams(beta=args.beta, lam=args.lam)
    resources = Resources(n_cpu=args.cpus, n_gpu=args.gpus,
                          oversub_max=args.oversub)
    n_as, n_ls, t_het = optimize_ranks(curves, comm, resources,
                                       moved_coeffs=args.moved,
                                       n_messages=args.messages)
    n_hom, t_hom = best_homogeneous(curves, resources)
    alpha = recommend_alpha(args.cpus, args.gpus)
    print(f"recommended alpha: {alpha} ({args.cpus} cores / {args.gpus} gpus)", file=out)
    print(f"heterogeneous optimum: n_as={n_as} n_ls={n_ls} time={t_het:.17g}", file=out)
    print(f"best homogeneous: n={n_hom} time={t_hom:.17g}", file=out)
    if t_het > 0:
        print(f"heterogeneous vs homogeneous: {t_hom / t_het:.3f}x", file=out)
    return 0


def cmd_export_mtx(args, out) -> int:
    nx, ny, nz = _parse_grid(args)
    grid = StructuredGrid(nx, ny, nz)
    parts = decompose_slab(grid, args.ranks)
    pm = make_partition_map([p.n_cells for p in parts], int(args.alpha))
    world = World(args.ranks, deterministic=True)

    def program(ctx):
        m, ifaces = assemble_poisson(parts[ctx.rank])
        system = repartition(m, ifaces, pm, ctx)
        if system.is_owner:
            return gather_global(system.matrix, pm, system.comm)
        return None

    results = world.run(program)
    write_matrix_market(results[0], args.out)
    print(f"wrote {results[0].nnz} entries to {args.out}", file=out)
    return 0


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--grid-np", type=int, default=None, metavar="N",
                       help="benchmark grid factor: a (210*N)^3 cube")
    group.add_argument("--grid", type=str, default=None, metavar="NX,NY,NZ",
                       help="raw grid extents")


def _add_case_args(p: argparse.ArgumentParser) -> None:
    _add_grid_args(p)
    p.add_argument("--ranks", type=int, default=1, help="number of CPU ranks")
    p.add_argument("--alpha", type=str, default="1",
                   help="fusion ratio (sweep accepts a comma list)")
    p.add_argument("--mode", type=str, default="direct",
                   help="transfer mode: direct|staged (sweep accepts a comma list)")
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--steps", type=int, default=20, help="number of pseudo-timesteps")
    p.add_argument("--verify", action="store_true",
                   help="run the oracle comparison every step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldurepart",
        description="benchmark driver for LDU matrix repartitioning")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one case")
    _add_case_args(p_run)
    p_run.add_argument("--csv", type=str, default=None, help="write the record as CSV")

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep into a CSV")
    _add_case_args(p_sweep)
    p_sweep.add_argument("--csv", type=str, required=True, help="output CSV path")

    p_adv = sub.add_parser("advise", help="cost-model rank/alpha recommendation")
    p_adv.add_argument("--curves", type=str, required=True,
                       help="CSV of measured timings (columns n,t_as,t_ls)")
    p_adv.add_argument("--cpus", type=int, required=True)
    p_adv.add_argument("--gpus", type=int, required=True)
    p_adv.add_argument("--oversub", type=int, default=1)
    p_adv.add_argument("--beta", type=float, default=0.0,
                       help="seconds per moved coefficient")
    p_adv.add_argument("--lam", type=float, default=0.0, help="seconds per message")
    p_adv.add_argument("--moved", type=int, default=0,
                       help="coefficients moved between the groups per step")
    p_adv.add_argument("--messages", type=int, default=0)

    p_exp = sub.add_parser("export-mtx", help="write the gathered global matrix")
    _add_grid_args(p_exp)
    p_exp.add_argument("--ranks", type=int, default=1)
    p_exp.add_argument("--alpha", type=str, default="1")
    p_exp.add_argument("--out", type=str, required=True, help="output .mtx path")

    return parser


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "sweep": cmd_sweep,
                "advise": cmd_advise, "export-mtx": cmd_export_mtx}
    try:
        return handlers[args.command](args, out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())
