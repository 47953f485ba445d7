"""In-situ calibration of an energy meter against a noisy reference meter.

The measurement-error bias of an ordinary least-squares fit is corrected with
SIMEX, and the SIMEX estimate can then be refined by Bayesian regression.  A
Monte Carlo harness compares the naive, SIMEX and SIMEX-Bayes estimators.
"""

from .bayes import BayesConfig, PosteriorEstimate, log_posterior, refine
from .error_model import (
    BiasDistribution,
    ErrorParameters,
    LoadProfile,
    MeterClassSpec,
    MeterRow,
    ObservedPair,
    combined_error_bound,
    meter_error_bound,
    observe,
    pf_to_phase,
    sigma_u,
    simulate_calibrator,
    simulate_uut,
    uut_response,
)
from .exceptions import (
    CalibrationError,
    ConfigurationError,
    DomainError,
    FitError,
    ParseError,
    SamplerError,
    SingularityError,
    StudyError,
)
from .metrics import FitMetrics, cv_rmse, fit_metrics, invert_prediction, nmbe, parameter_error
from .simex import (
    LinearFit,
    LogisticFit,
    SimexRun,
    ZetaGrid,
    extrapolate,
    fit_extrapolant_linear,
    fit_extrapolant_logistic,
    fit_theta,
    inflate_noise,
    make_zeta_grid,
    naive_fit,
    sum_of_squares,
    run_simex,
)
from .study import (
    ProfileConfig,
    RealisationResult,
    StudyConfig,
    StudySummary,
    generate_default_profile,
    load_profile_csv,
    run_realisation,
    run_study,
    summarize,
    write_profile_csv,
    write_results,
)

__version__ = "0.1.0"
