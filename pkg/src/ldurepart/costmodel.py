"""Timestep cost model for heterogeneous assembly/solve rank counts.

One timestep costs T(n) = T_AS(1)/S_AS(n) + T_LS(1)/S_LS(n) when assembly and
solve share n ranks.  When the two phases scale differently (CPU assembly vs
accelerator solve), choosing the rank counts independently gives
T(n_as, n_ls) = T_AS(n_as) + T_LS(n_ls) + T_R, where T_R prices the traffic
between the two groups as beta * moved coefficients + lambda * messages.
The optimizer searches the finite pair space exhaustively; with ideal scaling
and negligible T_R the argmin is simply the resource maxima.

Speed-up curves are either parametric families (ideal, capped, degrading) or
tables of measured timings loaded from CSV.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdealSpeedup:
    """S(n) = n, defined for every n >= 1."""

    domain_max: int | None = None

    def __call__(self, n: int) -> float:
        _check_domain(n, self.domain_max)
        return float(n)


@dataclass(frozen=True)
class CappedSpeedup:
    """S(n) = min(n, knee): ideal up to the knee, flat beyond it."""

    knee: int
    domain_max: int | None = None

    def __call__(self, n: int) -> float:
        _check_domain(n, self.domain_max)
        return float(min(n, self.knee))


@dataclass(frozen=True)
class DegradingSpeedup:
    """Synthetic shape: ideal up to the peak, then S(n) = peak^2 / n.

    The decay past the peak is a test fixture, not a measured law.
    """

    peak: int
    domain_max: int | None = None

    def __call__(self, n: int) -> float:
        _check_domain(n, self.domain_max)
        return float(n) if n <= self.peak else self.peak * self.peak / float(n)


class TabulatedSpeedup:
    """Speed-ups at measured rank counts only; anything else is out of domain."""

    def __init__(self, n_values, s_values):
        n = np.asarray(n_values, dtype=np.int64)
        s = np.asarray(s_values, dtype=np.float64)
        if len(n) != len(s) or len(n) == 0:
            raise ValueError("tabulated speedup needs matching, non-empty arrays")
        order = np.argsort(n)
        self.n = n[order]
        self.s = s[order]
        if (np.diff(self.n) == 0).any():
            raise ValueError("tabulated speedup has duplicate n entries")
        if self.n[0] != 1:
            raise ValueError("tabulated speedup must include n = 1")
        if (self.s <= 0).any():
            raise ValueError("speed-ups must be positive")

    @property
    def domain(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.n)

    def __call__(self, n: int) -> float:
        i = np.searchsorted(self.n, n)
        if i >= len(self.n) or self.n[i] != n:
            raise ValueError(f"curve domain: n={n} is not tabulated "
                             f"(have {self.domain})")
        return float(self.s[i])


def _check_domain(n: int, domain_max: int | None) -> None:
    if n < 1:
        raise ValueError(f"curve domain: n must be >= 1, got {n}")
    if domain_max is not None and n > domain_max:
        raise ValueError(f"curve domain: n={n} exceeds the curve maximum {domain_max}")


def _candidates(curve, n_max: int) -> list[int]:
    domain = getattr(curve, "domain", None)
    if domain is not None:
        return [n for n in domain if n <= n_max]
    return list(range(1, n_max + 1))


@dataclass(frozen=True)
class CostCurves:
    """Single-rank baselines plus speed-up functions for both phases."""

    t_as_1: float
    t_ls_1: float
    s_as: object
    s_ls: object
    n_cpu_max: int | None = None
    n_gpu_max: int | None = None

    def __post_init__(self):
        if self.t_as_1 < 0 or self.t_ls_1 < 0:
            raise ValueError("baseline times must be non-negative")
        for name, s in (("s_as", self.s_as), ("s_ls", self.s_ls)):
            if s(1) != 1.0:
                raise ValueError(f"{name}(1) must equal 1, got {s(1)}")


@dataclass(frozen=True)
class CommCostParams:
    """Linear volume+latency model for cross-group communication."""

    beta: float = 0.0   # seconds per coefficient moved
    lam: float = 0.0    # seconds per message

    def __post_init__(self):
        if self.beta < 0 or self.lam < 0:
            raise ValueError("communication cost parameters must be non-negative")

    def cost(self, moved_coeffs: int, n_messages: int) -> float:
        return self.beta * moved_coeffs + self.lam * n_messages


@dataclass(frozen=True)
class Resources:
    """Rank budget for the optimizer; oversub_max lets n_ls exceed the GPUs."""

    n_cpu: int
    n_gpu: int
    oversub_max: int = 1

    def __post_init__(self):
        if self.n_cpu < 1 or self.n_gpu < 1 or self.oversub_max < 1:
            raise ValueError(f"empty search space: n_cpu={self.n_cpu}, "
                             f"n_gpu={self.n_gpu}, oversub_max={self.oversub_max}")


def total_time(n: int, curves: CostCurves) -> float:
    """Homogeneous timestep cost with n ranks for both phases."""
    if n < 1:
        raise ValueError(f"curve domain: n must be >= 1, got {n}")
    return curves.t_as_1 / curves.s_as(n) + curves.t_ls_1 / curves.s_ls(n)


def total_time_hetero(n_as: int, n_ls: int, curves: CostCurves,
                      comm: CommCostParams, moved_coeffs: int = 0,
                      n_messages: int = 0) -> float:
    """Heterogeneous timestep cost with independent rank counts plus T_R."""
    if n_as < 1 or n_ls < 1:
        raise ValueError("rank counts must be >= 1")
    return (curves.t_as_1 / curves.s_as(n_as)
            + curves.t_ls_1 / curves.s_ls(n_ls)
            + comm.cost(moved_coeffs, n_messages))


def optimize_ranks(curves: CostCurves, comm: CommCostParams, resources: Resources,
                   moved_coeffs: int = 0, n_messages: int = 0) -> tuple[int, int, float]:
    """Exhaustive argmin over the (n_as, n_ls) pair space.

    Ties break toward the smaller n_as, then the smaller n_ls.
    """
    as_max = resources.n_cpu
    if curves.n_cpu_max is not None:
        as_max = min(as_max, curves.n_cpu_max)
    ls_max = resources.n_gpu * resources.oversub_max
    if curves.n_gpu_max is not None:
        ls_max = min(ls_max, curves.n_gpu_max)
    cand_as = _candidates(curves.s_as, as_max)
    cand_ls = _candidates(curves.s_ls, ls_max)
    if not cand_as or not cand_ls:
        raise ValueError("empty search space: no candidate rank counts")
    best = (None, None, math.inf)
    for n_as in cand_as:
        for n_ls in cand_ls:
            t = total_time_hetero(n_as, n_ls, curves, comm, moved_coeffs, n_messages)
            if t < best[2]:
                best = (n_as, n_ls, t)
    return best


def best_homogeneous(curves: CostCurves, resources: Resources) -> tuple[int, float]:
    """Exhaustive argmin of the homogeneous cost over n <= n_cpu."""
    n_max = resources.n_cpu
    if curves.n_cpu_max is not None:
        n_max = min(n_max, curves.n_cpu_max)
    candidates = _candidates(curves.s_as, n_max)
    candidates = [n for n in candidates if n in set(_candidates(curves.s_ls, n_max))]
    if not candidates:
        raise ValueError("empty search space: no candidate rank counts")
    best = (None, math.inf)
    for n in candidates:
        t = total_time(n, curves)
        if t < best[1]:
            best = (n, t)
    return best


def recommend_alpha(n_cpu_cores: int, n_gpus: int) -> int:
    """Fusion ratio saturating the cores: alpha = cores per GPU."""
    if n_gpus < 1:
        raise ValueError("need at least one GPU")
    if n_cpu_cores < 1:
        raise ValueError("need at least one CPU core")
    if n_cpu_cores % n_gpus != 0:
        lower = (n_cpu_cores // n_gpus) * n_gpus
        upper = lower + n_gpus
        raise ValueError(
            f"{n_cpu_cores} cores not divisible by {n_gpus} GPUs; nearest divisible "
            f"core counts are {lower} and {upper}")
    return n_cpu_cores // n_gpus


def load_curves_csv(path) -> CostCurves:
    """Read measured timings (columns n, t_as, t_ls) into tabulated curves."""
    ns, t_as, t_ls = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"n", "t_as", "t_ls"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"curves CSV needs columns {sorted(required)}, "
                             f"got {reader.fieldnames}")
        for row in reader:
            ns.append(int(row["n"]))
            t_as.append(float(row["t_as"]))
            t_ls.append(float(row["t_ls"]))
    if not ns:
        raise ValueError("curves CSV has no data rows")
    order = np.argsort(ns)
    ns = np.asarray(ns)[order]
    t_as = np.asarray(t_as)[order]
    t_ls = np.asarray(t_ls)[order]
    if ns[0] != 1:
        raise ValueError("curves CSV must include a row for n = 1")
    if (t_as <= 0).any() or (t_ls <= 0).any():
        raise ValueError("curves CSV timings must be positive")
    n_max = int(ns[-1])
    return CostCurves(
        t_as_1=float(t_as[0]), t_ls_1=float(t_ls[0]),
        s_as=TabulatedSpeedup(ns, t_as[0] / t_as),
        s_ls=TabulatedSpeedup(ns, t_ls[0] / t_ls),
        n_cpu_max=n_max, n_gpu_max=n_max)
