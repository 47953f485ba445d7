"""Monte Carlo comparison of the naive, SIMEX and SIMEX-Bayes estimators.

Each realisation draws UUT readings over the whole horizon and calibrator
readings over the calibration window only.  The three estimators are fitted on
the window, and their inverted predictions are scored against the true power
over the evaluation window.  Calibrator readings never enter the evaluation.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bayes import BayesConfig, refine
from .error_model import BiasDistribution, ErrorParameters, LoadProfile, MeterClassSpec, observe, simulate_uut
from .exceptions import CalibrationError, ConfigurationError, ParseError, StudyError
from .metrics import fit_metrics, invert_prediction, parameter_error
from .simex import NOISE_SCALINGS, ZetaGrid, make_zeta_grid, naive_fit, run_simex

METHODS = ("naive", "simex", "bayes")
QUANTITIES = (
    "alpha_hat",
    "phi_c_hat",
    "epsilon_hat",
    "err_alpha_pct",
    "err_phi_c_pct",
    "err_epsilon_pct",
    "cv_rmse_pct",
    "nmbe_pct",
)
RESULT_COLUMNS = ("seed", "method") + QUANTITIES
MAX_FAILURE_FRACTION = 0.2
TRIM_IQR_MULTIPLE = 10.0


@dataclass(frozen=True)
class StudyConfig:
    """Everything that defines a study apart from the load profile.

    Windows are ``(start, stop)`` pairs with ``stop`` exclusive.  An
    ``evaluation_window`` of ``None`` evaluates over the whole profile, which
    includes the calibration day.
    """

    realisations: int = 300
    base_seed: int = 0
    true_params: ErrorParameters = ErrorParameters(0.2, 0.2, 5.0)
    bias: BiasDistribution = BiasDistribution(5.0, 2.5)
    calibration_window: tuple = ("2016-02-02", "2016-02-03")
    evaluation_window: tuple | None = None
    grid: ZetaGrid = field(default_factory=make_zeta_grid)
    bayes: BayesConfig = BayesConfig()
    meter: MeterClassSpec = MeterClassSpec()
    methods: tuple = METHODS
    extrapolant: str = "logistic"
    noise_scaling: str = "sqrt"
    fit_phase: bool = True
    gain_scale: bool = False
    trim_outliers: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.realisations < 1:
            raise ConfigurationError(f"realisations must be >= 1, got {self.realisations}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigurationError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigurationError("methods contain duplicates")
        if self.extrapolant not in ("logistic", "linear"):
            raise ConfigurationError(f"unknown extrapolant {self.extrapolant!r}")
        if self.noise_scaling not in NOISE_SCALINGS:
            raise ConfigurationError(f"unknown noise scaling {self.noise_scaling!r}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        for name in ("calibration_window", "evaluation_window"):
            w = getattr(self, name)
            if w is None:
                continue
            start, stop = (np.datetime64(v, "s") for v in w)
            if not start < stop:
                raise ConfigurationError(f"{name} must have start < stop, got {w}")
        # true_params.epsilon is the reference for the bias error; keep it tied to the bias mean
        if self.true_params.epsilon != self.bias.mean:
            raise ConfigurationError("true_params.epsilon must equal the bias distribution mean")

    def to_dict(self) -> dict:
        return {
            "realisations": self.realisations,
            "base_seed": self.base_seed,
            "true_params": asdict(self.true_params),
            "bias": asdict(self.bias),
            "calibration_window": [str(v) for v in self.calibration_window],
            "evaluation_window": None if self.evaluation_window is None else [str(v) for v in self.evaluation_window],
            "zeta_grid": {"n": self.grid.n, "min": float(self.grid.values[0]), "max": float(self.grid.values[-1])},
            "bayes": asdict(self.bayes),
            "meter": self.meter.to_dict(),
            "methods": list(self.methods),
            "extrapolant": self.extrapolant,
            "noise_scaling": self.noise_scaling,
            "fit_phase": self.fit_phase,
            "gain_scale": self.gain_scale,
            "trim_outliers": self.trim_outliers,
        }


@dataclass(frozen=True)
class MethodOutcome:
    estimate: ErrorParameters | None
    param_error: np.ndarray | None  # percent, (alpha, phi_c, epsilon)
    cv_rmse: float = math.nan
    nmbe: float = math.nan
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def values(self) -> dict:
        if not self.ok:
            return {q: math.nan for q in QUANTITIES}
        e, err = self.estimate, self.param_error
        return dict(
            zip(QUANTITIES, (e.alpha, e.phi_c, e.epsilon, err[0], err[1], err[2], self.cv_rmse, self.nmbe))
        )


@dataclass(frozen=True)
class RealisationResult:
    index: int
    seed: int
    outcomes: dict  # method -> MethodOutcome
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(not o.ok for o in self.outcomes.values())


@dataclass(frozen=True)
class SummaryCell:
    q2_5: float
    mean: float
    q97_5: float


@dataclass(frozen=True)
class StudySummary:
    cells: dict  # method -> quantity -> SummaryCell
    n_used: dict  # method -> number of realisations summarised
    n_failed: int = 0
    n_trimmed: dict = field(default_factory=dict)

    def __getitem__(self, method):
        return self.cells[method]

    def to_dict(self) -> dict:
        return {m: {q: asdict(c) for q, c in qs.items()} for m, qs in self.cells.items()}


# ---------------------------------------------------------------------------
# Synthetic profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileConfig:
    """Parameters of the synthetic half-hourly load profile (kW)."""

    start: str = "2016-01-01"
    stop: str = "2016-08-04"
    seed: int = 2016
    base_load: float = 80.0
    morning_peak: float = 60.0
    evening_peak: float = 100.0
    seasonal_amplitude: float = 0.1
    weekend_factor: float = 0.85
    daily_load_sd: float = 0.08
    load_noise_sd: float = 4.0
    pf_at_low_load: float = 0.76
    pf_span: float = 0.2
    pf_daily_sd: float = 0.03
    pf_noise_sd: float = 0.04
    min_correlation: float = 0.6
    max_load: float = 195.0
    min_load: float = 2.0

    def __post_init__(self):
        if not np.datetime64(self.start) < np.datetime64(self.stop):
            raise ConfigurationError("profile start must precede stop")
        if not 0 < self.min_load < self.max_load < 200:
            raise ConfigurationError("need 0 < min_load < max_load < 200 kW")
        if not -1 < self.min_correlation < 1:
            raise ConfigurationError("min_correlation must lie in (-1, 1)")


def generate_default_profile(config: ProfileConfig = ProfileConfig()) -> LoadProfile:
    """Synthetic residence-like profile with load-correlated power factor.

    The load has morning and evening peaks, a weekend reduction, a seasonal
    swing and day-to-day scaling.  The power factor rises linearly with
    normalised load, plus a daily offset and per-sample noise, clipped to
    [0.5, 1].  Should the noise push the load/pf correlation below
    ``min_correlation`` the noise terms are shrunk until it holds, so the
    bound is guaranteed on every generated horizon.
    """
    rng = np.random.default_rng(config.seed)
    ts = np.arange(
        np.datetime64(config.start, "m"), np.datetime64(config.stop, "m"), np.timedelta64(30, "m")
    ).astype("datetime64[s]")
    n = ts.size
    day_start = ts.astype("datetime64[D]")
    hours = (ts - day_start).astype(float) / 3600.0
    day = (day_start - day_start[0]).astype(int)
    weekday = day_start.astype("datetime64[D]").view("int64")  # days since 1970-01-01 (a Thursday)
    weekend = (weekday + 3) % 7 >= 5
    doy = (day_start - day_start.astype("datetime64[Y]")).astype(int)

    season = 1.0 + config.seasonal_amplitude * np.cos(2 * np.pi * (doy - 190) / 365.0)
    shape = (
        config.base_load
        + config.morning_peak * np.exp(-0.5 * ((hours - 7.0) / 1.5) ** 2)
        + config.evening_peak * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2)
    )
    n_days = int(day[-1]) + 1
    daily = 1.0 + config.daily_load_sd * rng.standard_normal(n_days)
    load = shape * season * np.where(weekend, config.weekend_factor, 1.0) * daily[day]
    load = np.clip(load + config.load_noise_sd * rng.standard_normal(n), config.min_load, config.max_load)

    lo, hi = np.percentile(load, [2, 98])
    trend = config.pf_at_low_load + config.pf_span * (load - lo) / max(hi - lo, 1e-9)
    noise = config.pf_daily_sd * rng.standard_normal(n_days)[day] + config.pf_noise_sd * rng.standard_normal(n)
    shrink = 1.0
    while True:
        pf = np.clip(trend + shrink * noise, 0.5, 1.0)
        if n < 2 or np.ptp(pf) == 0 or np.corrcoef(load, pf)[0, 1] >= config.min_correlation:
            break
        shrink *= 0.5
    return LoadProfile(ts, load, pf)


def profile_correlation(profile: LoadProfile) -> float:
    return float(np.corrcoef(profile.true_power, profile.power_factor)[0, 1])


# ---------------------------------------------------------------------------
# Realisations
# ---------------------------------------------------------------------------


def realisation_seed(base_seed: int, index: int) -> int:
    """Integer seed of realisation ``index``; independent of the study size."""
    state = np.random.SeedSequence([int(base_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _score(method, estimate, config, y_eval, profile_eval):
    try:
        predicted = invert_prediction(y_eval, profile_eval.phase, estimate)
        m = fit_metrics(profile_eval.true_power, predicted)
        err = parameter_error(config.true_params, estimate)
    except CalibrationError as exc:
        return MethodOutcome(estimate, None, failure=f"{method}: {exc}")
    return MethodOutcome(estimate, err, m.cv_rmse, m.nmbe)


def run_realisation(index: int, config: StudyConfig, profile: LoadProfile) -> RealisationResult:
    """One simulate-calibrate-evaluate cycle.

    Method failures are recorded in the result rather than raised.  SIMEX is
    the Bayes anchor, so a SIMEX failure also fails Bayes.
    """
    seed = realisation_seed(config.base_seed, index)
    rng = np.random.default_rng(seed)
    tp = config.true_params
    y_star = simulate_uut(profile, tp.alpha, tp.phi_c, config.bias, rng)

    cal_mask = profile.mask(*config.calibration_window)
    if not cal_mask.any():
        raise ConfigurationError(f"calibration window {config.calibration_window} holds no samples")
    if config.evaluation_window is None:
        eval_mask = np.ones(len(profile), dtype=bool)
    else:
        eval_mask = profile.mask(*config.evaluation_window)
        if not eval_mask.any():
            raise ConfigurationError(f"evaluation window {config.evaluation_window} holds no samples")
    cal_profile = profile.window(*config.calibration_window)
    pair = observe(cal_profile, config.meter, y_star[cal_mask], rng)
    eval_profile = LoadProfile(
        profile.timestamps[eval_mask],
        profile.true_power[eval_mask],
        profile.power_factor[eval_mask],
        profile.sampling_interval,
    )
    y_eval = y_star[eval_mask]

    want = set(config.methods)
    estimates, failures, diagnostics = {}, {}, {}
    try:
        estimates["naive"] = naive_fit(pair, fit_phase=config.fit_phase)
    except CalibrationError as exc:
        failures["naive"] = f"naive: {exc}"
    if want & {"simex", "bayes"}:
        try:
            run = run_simex(
                pair,
                config.grid,
                rng,
                extrapolant=config.extrapolant,
                fit_phase=config.fit_phase,
                naive=estimates.get("naive"),
                noise_scaling=config.noise_scaling,
                gain_scale=config.gain_scale,
            )
            estimates["simex"] = run.estimate_at_minus_one
        except CalibrationError as exc:
            failures["simex"] = f"simex: {exc}"
    if "bayes" in want:
        if "simex" in estimates:
            try:
                post = refine(estimates["simex"], pair, config.bayes, rng, fit_phase=config.fit_phase)
                estimates["bayes"] = post.params
                diagnostics["bayes_log_posterior_gain"] = post.improvement
                diagnostics["bayes_point_estimate"] = post.diagnostics.get("point_estimate")
            except CalibrationError as exc:
                failures["bayes"] = f"bayes: {exc}"
        else:
            failures["bayes"] = "bayes: no SIMEX anchor (" + failures.get("simex", "simex not run") + ")"

    outcomes = {}
    for method in config.methods:
        if method in estimates:
            outcomes[method] = _score(method, estimates[method], config, y_eval, eval_profile)
        else:
            outcomes[method] = MethodOutcome(None, None, failure=failures[method])
    return RealisationResult(index, seed, outcomes, diagnostics)


def _run_one(args):
    return run_realisation(*args)


def run_study(config: StudyConfig, profile: LoadProfile):
    """Run all realisations and summarise them.

    Returns ``(results, summary)``.  Results come back in index order whatever
    the number of workers, so the outputs are reproducible bit for bit.

    Raises
    ------
    StudyError
        If more than 20% of realisations had a failed method.
    """
    jobs = [(i, config, profile) for i in range(config.realisations)]
    if config.workers > 1 and config.realisations > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    n_failed = sum(r.failed for r in results)
    if n_failed > MAX_FAILURE_FRACTION * len(results):
        reasons = sorted({o.failure for r in results for o in r.outcomes.values() if not o.ok})
        raise StudyError(f"{n_failed} of {len(results)} realisations failed: " + "; ".join(reasons[:5]))
    return results, summarize(results, trim_outliers=config.trim_outliers)


# ---------------------------------------------------------------------------
# Summaries and files
# ---------------------------------------------------------------------------


def trim_mask(values, multiple: float = TRIM_IQR_MULTIPLE) -> np.ndarray:
    """True for values kept: within ``multiple`` interquartile ranges of the median."""
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    if iqr == 0:
        return np.ones(v.shape, dtype=bool)
    return np.abs(v - med) <= multiple * iqr


def _summary_cell(v) -> SummaryCell:
    q_lo, q_hi = np.quantile(v, [0.025, 0.975], method="linear")
    return SummaryCell(float(q_lo), float(np.mean(v)), float(q_hi))


def summarize(results, *, trim_outliers: bool = False) -> StudySummary:
    """Empirical 2.5% quantile, mean and 97.5% quantile per method and quantity.

    Failed method outcomes are left out and counted.  With ``trim_outliers``
    values further than ten interquartile ranges from the median are dropped
    per cell before summarising.
    """
    results = list(results)
    if not results:
        raise StudyError("no realisations to summarise")
    methods = list(results[0].outcomes)
    cells, n_used, n_trimmed = {}, {}, {}
    for m in methods:
        rows = [r.outcomes[m].values() for r in results if r.outcomes[m].ok]
        n_used[m] = len(rows)
        if not rows:
            continue
        cells[m] = {}
        n_trimmed[m] = {}
        for q in QUANTITIES:
            v = np.array([row[q] for row in rows])
            if trim_outliers:
                keep = trim_mask(v)
                n_trimmed[m][q] = int(v.size - keep.sum())
                v = v[keep]
            cells[m][q] = _summary_cell(v)
    return StudySummary(cells, n_used, sum(r.failed for r in results), n_trimmed)


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_results(results, summary: StudySummary, path, *, config: StudyConfig | None = None) -> dict:
    """Write ``results.csv`` and ``summary.json`` (plus ``config.json``) into ``path``.

    Returns the written file paths keyed by kind.  Output is a pure function of
    the inputs so reruns are byte-identical.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {"results": out / "results.csv", "summary": out / "summary.json"}
    with open(files["results"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            for method, outcome in r.outcomes.items():
                vals = outcome.values()
                w.writerow([r.seed, method] + [_fmt(vals[q]) for q in QUANTITIES])
    files["summary"].write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    if config is not None:
        files["config"] = out / "config.json"
        meta = {
            "study": config.to_dict(),
            "realisations_failed": summary.n_failed,
            "used_per_method": summary.n_used,
            "trimmed": summary.n_trimmed,
        }
        files["config"].write_text(json.dumps(meta, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return files


def _json_default(v):
    if isinstance(v, float) and math.isinf(v):
        return "Imax"
    raise TypeError(f"cannot serialise {type(v).__name__}")


PROFILE_HEADER = ("timestamp", "power_kw", "power_factor")


def write_profile_csv(profile: LoadProfile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for t, p, pf in zip(profile.timestamps.astype(str), profile.true_power, profile.power_factor):
            w.writerow([t, repr(float(p)), repr(float(pf))])


def read_csv_columns(path, header) -> tuple[list, list]:
    """Read a CSV with exactly ``header`` as its first row.

    Returns ``(timestamps, numeric_columns)``: the first column as strings and
    the remaining ones as float lists.  Any malformed row raises
    :class:`ParseError` with its 1-based line number.
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise ParseError(f"cannot open: {exc.strerror}", path=path) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=path, line=1) from None
        if [c.strip() for c in first] != list(header):
            raise ParseError(f"expected header {','.join(header)}, got {','.join(first)}", path=path, line=1)
        stamps, cols = [], [[] for _ in header[1:]]
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path=path, line=line)
            try:
                np.datetime64(row[0].strip(), "s")
            except ValueError:
                raise ParseError(f"bad timestamp {row[0]!r}", path=path, line=line) from None
            stamps.append(row[0].strip())
            for j, cell in enumerate(row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"bad number {cell!r} in column {header[j + 1]}", path=path, line=line) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in column {header[j + 1]}", path=path, line=line)
                cols[j].append(v)
    if not stamps:
        raise ParseError("no data rows", path=path, line=2)
    return stamps, cols


def load_profile_csv(path, sampling_interval: float | None = None) -> LoadProfile:
    """Read a ``timestamp,power_kw,power_factor`` CSV.

    The sampling interval is inferred from the first two timestamps unless
    given.  Out-of-range values are reported with their line number.
    """
    stamps, (power, pf) = read_csv_columns(path, PROFILE_HEADER)
    ts = np.array(stamps, dtype="datetime64[s]")
    if sampling_interval is None:
        sampling_interval = float((ts[1] - ts[0]).astype(np.int64)) / 60.0 if ts.size > 1 else 30.0
    try:
        return LoadProfile(ts, np.array(power), np.array(pf), sampling_interval)
    except CalibrationError as exc:
        index = getattr(exc, "index", None)
        raise ParseError(str(exc), path=path, line=None if index is None else index + 2) from exc
