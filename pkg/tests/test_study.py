import json
import math

import numpy as np
import pytest

from conftest import CAL_WINDOW, TRUTH
from simexcal import (
    BayesConfig,
    BiasDistribution,
    ConfigurationError,
    ErrorParameters,
    LoadProfile,
    MeterClassSpec,
    ParseError,
    StudyConfig,
    StudyError,
    generate_default_profile,
    load_profile_csv,
    make_zeta_grid,
    run_realisation,
    run_study,
    summarize,
    write_profile_csv,
    write_results,
)
from simexcal.study import (
    QUANTITIES,
    RESULT_COLUMNS,
    MethodOutcome,
    ProfileConfig,
    RealisationResult,
    profile_correlation,
    realisation_seed,
    trim_mask,
)

FAST = dict(grid=make_zeta_grid(40), bayes=BayesConfig(engine_iterations=1500))


# --- synthetic profile ----------------------------------------------------


def test_default_profile_shape(profile):
    assert np.all(np.diff(profile.timestamps).astype(int) == 1800)
    assert profile.timestamps[0] == np.datetime64("2016-01-01T00:00:00")
    assert profile.timestamps[-1] == np.datetime64("2016-08-03T23:30:00")
    assert np.all((profile.true_power > 0) & (profile.true_power < 200))
    assert np.all((profile.power_factor >= 0.5) & (profile.power_factor <= 1.0))
    assert profile_correlation(profile) >= 0.6


def test_day_window_has_48_samples(profile):
    assert len(profile.window(*CAL_WINDOW)) == 48


@pytest.mark.parametrize("seed", range(5))
def test_correlation_bound_holds_on_any_horizon(seed):
    short = generate_default_profile(ProfileConfig(start="2016-03-01", stop="2016-03-02", seed=seed))
    assert len(short) == 48
    assert profile_correlation(short) >= 0.6


def test_correlation_bound_enforced_with_heavy_noise():
    noisy = generate_default_profile(ProfileConfig(stop="2016-01-15", pf_noise_sd=0.5, pf_daily_sd=0.3))
    assert profile_correlation(noisy) >= 0.6


def test_profile_config_invariants():
    with pytest.raises(ConfigurationError):
        ProfileConfig(start="2016-02-01", stop="2016-01-01")
    with pytest.raises(ConfigurationError):
        ProfileConfig(max_load=250)


# --- profile CSV ----------------------------------------------------------


def test_profile_csv_round_trip(tmp_path, profile):
    path = tmp_path / "p.csv"
    write_profile_csv(profile, path)
    back = load_profile_csv(path)
    np.testing.assert_array_equal(back.timestamps, profile.timestamps)
    assert np.max(np.abs(back.true_power - profile.true_power)) <= 1e-9
    assert np.max(np.abs(back.power_factor - profile.power_factor)) <= 1e-9
    assert path.read_text().splitlines()[0] == "timestamp,power_kw,power_factor"


@pytest.mark.parametrize(
    "body, line",
    [
        ("2016-01-01T00:00:00,1.0,0.9\n2016-01-01T00:30:00,abc,0.9\n", 3),
        ("2016-01-01T00:00:00,1.0,0.9\nnot-a-date,1.0,0.9\n", 3),
        ("2016-01-01T00:00:00,1.0\n", 2),
        ("2016-01-01T00:00:00,1.0,0.9\n2016-01-01T00:30:00,1.0,1.7\n", 3),
    ],
)
def test_profile_csv_errors_name_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp,power_kw,power_factor\n" + body)
    with pytest.raises(ParseError) as info:
        load_profile_csv(path)
    assert info.value.line == line
    assert f"{path}:{line}:" in str(info.value)


def test_profile_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,kw,pf\n")
    with pytest.raises(ParseError) as info:
        load_profile_csv(path)
    assert info.value.line == 1


def test_profile_csv_missing_file(tmp_path):
    with pytest.raises(ParseError, match="nope.csv"):
        load_profile_csv(tmp_path / "nope.csv")


# --- config ---------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(realisations=0),
        dict(methods=("naive", "ols")),
        dict(methods=()),
        dict(calibration_window=("2016-02-03", "2016-02-02")),
        dict(true_params=ErrorParameters(0.2, 0.2, 4.0)),
        dict(extrapolant="cubic"),
    ],
)
def test_study_config_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        StudyConfig(**kwargs)


def test_empty_window_is_rejected(profile):
    config = StudyConfig(calibration_window=("2020-01-01", "2020-01-02"), **FAST)
    with pytest.raises(ConfigurationError):
        run_realisation(0, config, profile)


# --- realisations ---------------------------------------------------------


def test_seed_scheme_is_prefix_stable():
    assert realisation_seed(7, 3) == realisation_seed(7, 3)
    assert len({realisation_seed(7, i) for i in range(100)}) == 100
    assert realisation_seed(7, 0) != realisation_seed(8, 0)


def test_realisation_is_deterministic(profile):
    config = StudyConfig(realisations=1, base_seed=3, **FAST)
    a = run_realisation(2, config, profile)
    b = run_realisation(2, config, profile)
    for m in config.methods:
        assert a.outcomes[m].values() == b.outcomes[m].values()


def test_noise_free_realisation_recovers_truth(profile):
    spec = MeterClassSpec(coverage_factor=1e12)
    config = StudyConfig(
        realisations=1,
        true_params=ErrorParameters(0.2, 0.2, 5.0),
        bias=BiasDistribution(5.0, 0.0),
        meter=spec,
        **FAST,
    )
    r = run_realisation(0, config, profile)
    for m in config.methods:
        o = r.outcomes[m]
        assert o.ok, o.failure
        np.testing.assert_allclose(o.estimate.as_array(), TRUTH.as_array(), atol=1e-4)
        assert o.cv_rmse < 1e-3


def test_naive_realisation_shows_attenuation_signature(profile):
    config = StudyConfig(realisations=1, methods=("naive",), **FAST)
    errs = np.array([run_realisation(i, config, profile).outcomes["naive"].param_error for i in range(8)])
    # overestimation of all three parameters on average
    assert np.all(errs.mean(axis=0) < 0)


def test_method_failure_is_recorded(monkeypatch, profile):
    import simexcal.study as mod
    from simexcal import FitError

    def broken(*a, **kw):
        raise FitError("no convergence")

    monkeypatch.setattr(mod, "run_simex", broken)
    r = run_realisation(0, StudyConfig(realisations=1, **FAST), profile)
    assert r.outcomes["naive"].ok
    assert "simex" in r.outcomes["simex"].failure
    assert "anchor" in r.outcomes["bayes"].failure
    assert r.failed


def test_too_many_failures_abort_the_study(monkeypatch, profile):
    import simexcal.study as mod
    from simexcal import FitError

    def broken(*a, **kw):
        raise FitError("no convergence")

    monkeypatch.setattr(mod, "run_simex", broken)
    with pytest.raises(StudyError, match="5 of 5"):
        run_study(StudyConfig(realisations=5, **FAST), profile)


# --- summaries ------------------------------------------------------------


def _fake(values, method="naive"):
    out = []
    for i, v in enumerate(values):
        o = MethodOutcome(ErrorParameters(v, 0.1, 1.0), np.array([v, v, v]), v, v)
        out.append(RealisationResult(i, i, {method: o}))
    return out


def test_summary_of_one_value():
    cell = summarize(_fake([0.3]))["naive"]["cv_rmse_pct"]
    assert cell.q2_5 == cell.mean == cell.q97_5 == 0.3


def test_summary_quantiles_linear():
    cell = summarize(_fake(np.arange(1.0, 101.0)))["naive"]["cv_rmse_pct"]
    assert cell.q2_5 == pytest.approx(3.475)
    assert cell.mean == pytest.approx(50.5)
    assert cell.q97_5 == pytest.approx(97.525)


def test_summary_skips_failures():
    results = _fake([1.0, 2.0, 3.0])
    results.append(RealisationResult(3, 3, {"naive": MethodOutcome(None, None, failure="naive: x")}))
    s = summarize(results)
    assert s.n_failed == 1 and s.n_used["naive"] == 3
    assert s["naive"]["cv_rmse_pct"].mean == pytest.approx(2.0)


def test_outlier_trim():
    values = list(np.linspace(1.0, 2.0, 40)) + [500.0]
    assert trim_mask(values).sum() == 40
    plain = summarize(_fake(values))
    trimmed = summarize(_fake(values), trim_outliers=True)
    assert trimmed["naive"]["cv_rmse_pct"].mean == pytest.approx(1.5)
    assert plain["naive"]["cv_rmse_pct"].mean > 10
    assert trimmed.n_trimmed["naive"]["cv_rmse_pct"] == 1


def test_study_of_one_realisation_has_equal_columns(profile):
    results, summary = run_study(StudyConfig(realisations=1, **FAST), profile)
    for m, cells in summary.cells.items():
        for q, c in cells.items():
            assert c.q2_5 == c.mean == c.q97_5


def test_write_results_layout(tmp_path, profile):
    config = StudyConfig(realisations=2, base_seed=1, **FAST)
    results, summary = run_study(config, profile)
    files = write_results(results, summary, tmp_path, config=config)
    rows = files["results"].read_text(encoding="utf-8").splitlines()
    assert rows[0] == ",".join(RESULT_COLUMNS)
    assert len(rows) == 1 + 2 * 3
    data = json.loads(files["summary"].read_text(encoding="utf-8"))
    assert set(data) == {"naive", "simex", "bayes"}
    assert set(data["bayes"]) == set(QUANTITIES)
    for cells in data.values():
        for c in cells.values():
            assert set(c) == {"q2_5", "mean", "q97_5"} and c["q2_5"] <= c["q97_5"]
    meta = json.loads(files["config"].read_text(encoding="utf-8"))
    assert meta["study"]["base_seed"] == 1


def test_study_is_bit_reproducible(tmp_path, profile):
    config = StudyConfig(realisations=3, base_seed=5, **FAST)
    a = write_results(*run_study(config, profile), tmp_path / "a", config=config)
    b = write_results(*run_study(config, profile), tmp_path / "b", config=config)
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_growing_the_study_keeps_earlier_realisations(profile):
    small, _ = run_study(StudyConfig(realisations=2, base_seed=5, methods=("naive",), **FAST), profile)
    large, _ = run_study(StudyConfig(realisations=4, base_seed=5, methods=("naive",), **FAST), profile)
    for a, b in zip(small, large):
        assert a.seed == b.seed and a.outcomes["naive"].values() == b.outcomes["naive"].values()


def test_parallel_matches_serial(profile):
    base = dict(realisations=3, base_seed=2, methods=("naive", "simex"), **FAST)
    serial, s1 = run_study(StudyConfig(**base), profile)
    parallel, s2 = run_study(StudyConfig(workers=2, **base), profile)
    assert s1.to_dict() == s2.to_dict()


def test_evaluation_never_sees_calibrator_readings(monkeypatch, profile):
    # the scoring step must only receive the true power of the evaluation window
    import simexcal.study as mod

    seen = []
    real = mod.fit_metrics

    def spy(actual, predicted, *a, **kw):
        seen.append(np.asarray(actual))
        return real(actual, predicted, *a, **kw)

    monkeypatch.setattr(mod, "fit_metrics", spy)
    run_realisation(0, StudyConfig(realisations=1, methods=("naive",), **FAST), profile)
    assert len(seen) == 1 and np.array_equal(seen[0], profile.true_power)


def test_evaluation_uses_no_calibrator_readings(profile, monkeypatch):
    import simexcal.study as study_mod
    from simexcal import fit_metrics, invert_prediction, observe, simulate_uut

    def recording_observe(cal_profile, spec, y_star, rng):
        pair = observe(cal_profile, spec, y_star, rng)
        seen.append(pair.x_star)
        return pair

    seen = []
    monkeypatch.setattr(study_mod, "observe", recording_observe)
    config = StudyConfig(realisations=1, base_seed=3, methods=("naive",))
    res = run_realisation(0, config, profile)
    assert len(seen) == 1 and seen[0].size == 48

    # the score is reproduced from UUT readings, phase and true power alone

    rng = np.random.default_rng(realisation_seed(3, 0))
    y_all = simulate_uut(profile, TRUTH.alpha, TRUTH.phi_c, BiasDistribution(), rng)
    out = res.outcomes["naive"]
    m = fit_metrics(profile.true_power, invert_prediction(y_all, profile.phase, out.estimate))
    assert out.cv_rmse == m.cv_rmse and out.nmbe == m.nmbe
