# coding: utf-8

# # Correcting the attenuation of a naive fit with SIMEX
#
# One day of half-hourly readings from the reference meter (x*) and the meter
# under test (y*).  Least squares on x* is biased because x* is noisy; SIMEX
# adds more noise at levels zeta, tracks how the estimates drift and
# extrapolates back to zeta = -1 (no noise).

import numpy as np

from simexcal import BiasDistribution, ErrorParameters, MeterClassSpec, naive_fit, observe, run_simex, simulate_uut
from simexcal.study import generate_default_profile

truth = ErrorParameters(alpha=0.2, phi_c=0.2, epsilon=5.0)
day = generate_default_profile().window("2016-02-02", "2016-02-03")
rng = np.random.default_rng(3)
y_star = simulate_uut(day, truth.alpha, truth.phi_c, BiasDistribution(), rng)
pair = observe(day, MeterClassSpec(), y_star, rng)
print(f"{pair.x_star.size} calibration samples, mean sigma_u {pair.sigma_u.mean():.2f} kW")

naive = naive_fit(pair)
run = run_simex(pair, rng=rng, naive=naive)
print("truth", truth)
print("naive", naive)
print("SIMEX", run.estimate_at_minus_one)


# The per-zeta traces and the logistic extrapolants behind the SIMEX estimate.

for name in ("alpha", "phi_c", "epsilon"):
    t = run.trace(name)
    print(f"{name}: zeta={run.grid.values[0]:.2f} -> {t[0]:.3f}, zeta={run.grid.values[-1]:.2f} -> {t[-1]:.3f}, "
          f"extrapolated {getattr(run.estimate_at_minus_one, name):.3f}")
