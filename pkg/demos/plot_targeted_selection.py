"""
Choosing the response variance by cross-validation
==================================================

The fully Bayesian factor model samples the response's idiosyncratic
variance along with everything else. The targeted alternative fixes it at
the value that minimizes cross-validated prediction error for y given x,
then runs the same Gibbs sampler with that value held constant.

Short chains keep this script under a minute; the command-line ``fit``
subcommand uses longer defaults.
"""

import numpy as np

from tebfar import dataio, gibbs, select
from tebfar.simulate import simulate

# One factor only, so the model must choose which signal to spend it on.
sim = simulate("motivating", 150, 2000, seed=0)
params = dataio.fit_standardization(sim.train)
train = dataio.apply_standardization(params, sim.train)
test = dataio.apply_standardization(params, sim.test)

grid = select.SigmaGrid.linspace(0.05, 1.0, 8)
fit = select.fit_tebfar(
    train, grid, select.CvPlan(5, seed=0),
    cv_config=select.cv_cell_config(iterations=400, burn_in=200, thin=2, k_max=1, seed=0),
    final_config=gibbs.SamplerConfig(sigma_y2=1.0, iterations=1500, burn_in=750, k_max=1, seed=0))

for value, score in fit.curve_rows():
    print("sigma_y2 %.3f  cv mse %.4f" % (value, score))
print("selected sigma_y2:", fit.sigma_hat)

# The joint model estimates the same variance from the likelihood of all
# ten variables, which is dominated by the predictors.
joint = gibbs.run_chain(train.X, train.y, gibbs.SamplerConfig(
    mode="jbfm", iterations=1500, burn_in=750, k_max=1, seed=0))
print("joint posterior mean sigma_y2: %.3f" % joint.sigma_diag[:, -1].mean())

for name, draws in [("targeted", fit.draws), ("joint", joint)]:
    y_hat = dataio.unstandardize_predictions(params, select.predict(draws, test.X))
    print("%-9s test mse %.4f" % (name, select.mse(y_hat, sim.test.y)))
print("oracle    test mse %.4f" % select.mse(sim.test.X @ sim.beta, sim.test.y))
