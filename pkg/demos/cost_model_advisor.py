"""Why heterogeneous rank counts pay off: a worked cost-model scenario.

A node has 128 cores and 4 accelerators.  Assembly scales ideally with core
count; the solve peaks at 4 ranks (one per accelerator) and degrades beyond
that.  Sharing one rank count for both phases forces a compromise; choosing
the counts independently costs only the cross-group communication term.
"""

import ldurepart as lr
from ldurepart.costmodel import DegradingSpeedup, IdealSpeedup

curves = lr.CostCurves(
    t_as_1=100.0, t_ls_1=100.0,
    s_as=IdealSpeedup(),
    s_ls=DegradingSpeedup(peak=4))  # synthetic decay past the peak
resources = lr.Resources(n_cpu=128, n_gpu=4)

print("homogeneous cost T(n) for shared rank counts:")
for n in (1, 4, 16, 64, 128):
    print(f"  n={n:>3}: {lr.total_time(n, curves):10.4f} s")

n_hom, t_hom = lr.best_homogeneous(curves, resources)
print(f"best homogeneous: n={n_hom}, T={t_hom} s")

# price the cross-group traffic like a coefficient update: 1e5 coefficients
# per step at 1 ns each plus 128 messages at 1 us each
comm = lr.CommCostParams(beta=1e-9, lam=1e-6)
n_as, n_ls, t_het = lr.optimize_ranks(curves, comm, resources,
                                      moved_coeffs=100_000, n_messages=128)
print(f"heterogeneous optimum: n_as={n_as}, n_ls={n_ls}, T={t_het:.6f} s "
      f"({t_hom / t_het:.2f}x better)")

alpha = lr.recommend_alpha(n_cpu_cores=128, n_gpus=4)
print(f"fusion ratio for this node: alpha = {alpha}")
