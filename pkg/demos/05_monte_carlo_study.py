# coding: utf-8

# # A small Monte Carlo comparison of the three estimators
#
# Every realisation draws fresh UUT and reference noise from its own seed,
# fits naive, SIMEX and SIMEX-Bayes, and scores them.  Ten realisations keep
# this quick; the acceptance suite uses fifty.

from simexcal import BayesConfig, StudyConfig, run_study, summarize
from simexcal.study import generate_default_profile

profile = generate_default_profile()
config = StudyConfig(realisations=10, base_seed=7, calibration_window=("2016-02-02", "2016-02-03"),
                     bayes=BayesConfig(engine_iterations=10_000))
results, summary = run_study(config, profile)

for method in ("naive", "simex", "bayes"):
    cells = summary[method]
    errs = ", ".join(f"{cells[q].mean:+6.1f}" for q in ("err_alpha_pct", "err_phi_c_pct", "err_epsilon_pct"))
    print(f"{method:6s} n={summary.n_used[method]:2d}  CV {cells['cv_rmse_pct'].mean:5.2f}%  NMBE {cells['nmbe_pct'].mean:+5.2f}%  error % [{errs}]")

# Gross outliers (beyond ten interquartile ranges of the median) can be
# trimmed before averaging; the count per method is reported.

trimmed = summarize(results, trim_outliers=True)
print({m: sum(trimmed.n_trimmed[m].values()) for m in trimmed.n_trimmed})
