# coding: utf-8

# # Predicting true energy use from the meter under test
#
# With estimated (alpha, phi_c, epsilon) the UUT readings are inverted to
# predicted true power over the whole profile and scored with CV(RMSE) and
# NMBE.

import numpy as np

from simexcal import (BiasDistribution, ErrorParameters, MeterClassSpec, fit_metrics, invert_prediction, naive_fit,
                      observe, run_simex, simulate_uut)
from simexcal.study import generate_default_profile

truth = ErrorParameters(alpha=0.2, phi_c=0.2, epsilon=5.0)
profile = generate_default_profile()
rng = np.random.default_rng(5)
y_all = simulate_uut(profile, truth.alpha, truth.phi_c, BiasDistribution(), rng)
cal = profile.mask("2016-02-02", "2016-02-03")
pair = observe(profile.window("2016-02-02", "2016-02-03"), MeterClassSpec(), y_all[cal], rng)

estimates = {"naive": naive_fit(pair), "SIMEX": run_simex(pair, rng=rng).estimate_at_minus_one, "truth": truth}
for name, params in estimates.items():
    pred = invert_prediction(y_all, profile.phase, params)
    m = fit_metrics(profile.true_power, pred)
    print(f"{name:6s} CV(RMSE) {m.cv_rmse:5.2f}%  NMBE {m.nmbe:+5.2f}%")
