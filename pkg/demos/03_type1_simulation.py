"""Small Monte Carlo study of type-I error control.

Runs null images through the pipeline and compares rejection rates of the
selective test against the naive and Bonferroni baselines.  This is a
desk-scale version of the acceptance campaign (which uses the base
architecture, n = 256 and 1,000 images).
"""

import os

from attnsi import Covariance
from attnsi.experiments import run_type1, uniformity_check

batch, summary = run_type1(
    arch="small",
    n=64,
    patch_size=2,
    covariance=Covariance.identity(),
    n_images=25,
    n_trials=4,
    master_seed=1,
    workers=os.cpu_count() or 1,
)

print(f"tests: {len(batch.rows)}  skipped: {batch.skipped_count}")
for method, per_alpha in summary["methods"].items():
    stats = per_alpha["0.05"]
    print(
        f"{method:>10} rejection rate at alpha=0.05: {stats['rate']:.3f} "
        f"[{stats['ci_lo']:.3f}, {stats['ci_hi']:.3f}]"
    )

report = uniformity_check(batch.pvalues("p_selective"), alphas=(0.05,))
print(f"\nKS distance from uniform: {report['ks_stat']:.3f} (p = {report['ks_pvalue']:.3f})")
