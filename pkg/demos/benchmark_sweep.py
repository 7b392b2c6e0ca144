"""Sweep fusion ratios on one case and read the metrics back from the CSV.

Every case runs a 5-step assemble -> update -> solve loop in verify mode, so
each row is backed by the oracle comparison.  Non-local entry counts shrink
as the fusion ratio grows; solver iterations stay essentially constant.
"""

import csv
import tempfile
from pathlib import Path

import ldurepart as lr
from ldurepart.cli import write_csv

configs = [lr.CaseConfig(nx=12, ny=12, nz=12, n_cpu=8, alpha=alpha,
                         n_steps=5, verify=True)
           for alpha in (1, 2, 4, 8)]
records = lr.sweep(configs)

out = Path(tempfile.mkdtemp()) / "sweep.csv"
write_csv(records, out)
print(f"wrote {out}\n")

with open(out, newline="") as fh:
    rows = list(csv.DictReader(fh))

print(f"{'case':<28} {'nnz_local':>10} {'nnz_nonlocal':>13} "
      f"{'iterations':>11} {'verify':>7} {'phi':>9}")
for row in rows:
    print(f"{row['case']:<28} {row['nnz_local']:>10} {row['nnz_nonlocal']:>13} "
          f"{row['iterations']:>11} {row['verify_ok']:>7} {float(row['phi']):>9.2f}")
