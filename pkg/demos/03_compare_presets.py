"""The nine presets on one skewed benchmark.

Every preset is an architecture plus a grouping recipe. This runs them all
with the default desk-scale data (20 nodes, 10 classes, 80% of each node's
labels from one class) and prints where each one ends up and what it paid.
Takes about 20 seconds.
"""

import sys

from tornadoagg.experiment import ExperimentSpec, run_comparison

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
report = run_comparison(ExperimentSpec(), seed)

print(f"{'preset':<14} {'train loss':>10} {'test acc':>9} {'MB sent':>9}")
for name, result in sorted(report.results.items(), key=lambda kv: -kv[1].final.test_accuracy):
    last = result.final
    print(f"{name:<14} {last.train_loss:>10.4f} {last.test_accuracy:>9.3f} {result.total_bytes / 1e6:>9.2f}")
for name, step in report.diverged.items():
    print(f"{name:<14} diverged at step {step}")
