"""
A small benchmark, then a look at the loadings
==============================================

``run_bench`` fits every method on fresh simulated data for each training
size and seed and scores test MSE on the original scale. The settings here
are deliberately tiny; ``tebfar bench`` runs the full protocol.

Afterwards the posterior loadings of one fit are rotated, matched to a
reference and summarized with entries whose 95% interval covers zero
blanked out.
"""

import numpy as np

from tebfar import align, bench, dataio, gibbs
from tebfar.select import SigmaGrid
from tebfar.simulate import simulate

protocol = bench.BenchProtocol(grid=SigmaGrid.linspace(0.1, 1.0, 6), cv_folds=3,
                               cv_iterations=200, cv_burn_in=100, cv_thin=2,
                               iterations=600, burn_in=300, thin=3)
rows = bench.run_bench(bench.METHODS, [100, 300], [0, 1], bench.ScenarioSource("3", 2000),
                       protocol)
ntrains, methods, table = bench.pivot_means(rows)
print("ntrain " + " ".join("%9s" % m for m in methods))
for n, vals in zip(ntrains, table):
    print("%6d " % n + " ".join("%9.4f" % v for v in vals))

# Loadings are only identified up to rotation, column order and sign, so
# each draw is varimax-rotated and matched to a reference before averaging.
sim = simulate("1", 400, 1, seed=3)
data = dataio.standardize(sim.train)
draws = gibbs.run_chain(data.X, data.y, gibbs.SamplerConfig(
    mode="jbfm", iterations=1500, burn_in=750, k_max=10, seed=3))
reference, _ = align.varimax(draws.loadings[-1])
summary = align.summarize_aligned(draws, reference)

np.set_printoptions(precision=2, suppress=True, linewidth=120)
strong = np.argsort(-np.abs(summary.display).sum(axis=0))[:4]
print("\nfour strongest aligned columns (rows x1..x20, y):")
print(summary.display[:, strong])
