"""
When the response variance is forced down
=========================================

A ten-variable, two-factor model in which the first factor dominates the
predictors but says nothing about the response. A single-factor
approximation fitted by KL minimization picks the dominant factor. Pinning
the response's idiosyncratic variance below a threshold makes the fit
switch to the small, response-relevant factor instead.
"""

import numpy as np

from tebfar import klopt
from tebfar.model import implied_covariance
from tebfar.simulate import MOTIVATING_LOADINGS, motivating_model

s0 = implied_covariance(motivating_model())

# The unconstrained one-factor fit leaves the response almost entirely to
# its idiosyncratic term: its loading on the fitted factor is near zero.
free, kl = klopt.population_em_fit(s0, 1)
print("free fit: response loading %.4f, response variance %.4f, KL %.4f"
      % (free.loadings[-1, 0], free.sigma_diag[-1], kl))

# Scan a grid of fixed response variances. For every value the fitted
# loading column is compared with both true columns (up to sign).
grid = np.round(np.linspace(0.005, 0.3, 60), 12)
scan = klopt.scan_sigma_grid(s0, MOTIVATING_LOADINGS, grid=grid)
(i,) = scan.crossings()
print("closest true column switches between sigma_y2 = %g and %g"
      % (scan.sigma_y2[i], scan.sigma_y2[i + 1]))

# The switch trades predictor fit for response fit. Split the expected
# log-likelihood per observation into the x marginal and y given x.
print("\n sigma_y2   dist_l1   dist_l2    ell_x   ell_y|x")
for j in range(i - 3, i + 4):
    d1, d2 = scan.distances[j]
    print("%9.3f %9.3f %9.3f %8.3f %8.3f"
          % (scan.sigma_y2[j], d1, d2, scan.ell_x[j], scan.ell_y_given_x[j]))

# The full table is a plain CSV, ready for any plotting tool.
scan.to_csv("phase_transition.csv")
