"""Transport prior versus Itakura-Saito prior, over many random systems.

Each experiment draws a random stable bivariate system, perturbs it to get
a prior, simulates 100 samples, and fits both estimators to the sample
covariances.  We report the mean L2 error of each.  Pass a smaller number
of experiments on the command line for a quick look.
"""

import sys

from otspec.montecarlo import ExperimentConfig, run_study

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
report = run_study(ExperimentConfig(n_experiments=n, grid_points=1024))
print(f"{len(report.included)} of {len(report.runs)} experiments converged for both methods")
for method in ("transport", "is"):
    print(f"mean L2 error {method:9s} {report.mean_l2[method]:.2f}")
