"""Command-line front end: ``simexcal simulate | calibrate | predict | study``.

Settings resolve as command-line flag, then ``--config`` JSON file, then the
built-in defaults.  Every command writes the fully resolved settings next to
its outputs so a run can be repeated exactly.  The exit status is 0 when every
requested method completed, 1 on a calibration or I/O failure and 2 on an
invalid flag.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bayes import BayesConfig, refine
from .error_model import (
    BiasDistribution,
    ErrorParameters,
    LoadProfile,
    MeterClassSpec,
    ObservedPair,
    observe,
    pf_to_phase,
    sigma_u,
    simulate_uut,
)
from .exceptions import CalibrationError, ConfigurationError, ParseError
from .metrics import fit_metrics, invert_prediction
from .simex import make_zeta_grid, naive_fit, run_simex
from .study import (
    METHODS,
    StudyConfig,
    generate_default_profile,
    load_profile_csv,
    read_csv_columns,
    run_study,
    write_profile_csv,
    write_results,
)

log = logging.getLogger("simexcal")

OBSERVED_HEADER = ("timestamp", "x_star", "y_star", "power_factor")
UUT_HEADER = ("timestamp", "y_star")

DEFAULTS = {
    "profile": None,
    "out": "simexcal-out",
    "seed": 0,
    "realisations": 300,
    "zeta_min": 0.5,
    "zeta_max": 5.0,
    "zeta_n": 300,
    "methods": "naive,simex,bayes",
    "z": 1.96,
    "meter_class": 3.0,
    "ct_class": 5.0,
    "rated_power": 200.0,
    "bayes_iterations": 20000,
    "latent_x": False,
    "trim_outliers": False,
    "extrapolant": "logistic",
    "calibration_day": "2016-02-02",
    "alpha": 0.2,
    "phi_c": 0.2,
    "bias_mean": 5.0,
    "bias_sd": 2.5,
    "bias_per_run": False,
    "workers": 1,
    "input": None,
    "estimates": None,
    "uut": None,
}


class UsageError(Exception):
    """Invalid flag value; the message starts with the flag name."""


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean (true/false), got {text!r}")


# ---------------------------------------------------------------------------
# Argument parsing and resolution
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS  # unset flags stay absent so config-file values can apply
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (keys are flag names with underscores)")
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("-v", "--verbose", action="count", default=0)

    meter = argparse.ArgumentParser(add_help=False)
    meter.add_argument("--z", type=float, default=S, help="coverage factor of the class bounds (default 1.96)")
    meter.add_argument("--meter-class", type=float, default=S)
    meter.add_argument("--ct-class", type=float, default=S)
    meter.add_argument("--rated-power", type=float, default=S, help="rated power P_n in kW")

    estimator = argparse.ArgumentParser(add_help=False)
    estimator.add_argument("--methods", default=S, help="comma-separated subset of naive,simex,bayes")
    estimator.add_argument("--zeta-min", type=float, default=S)
    estimator.add_argument("--zeta-max", type=float, default=S)
    estimator.add_argument("--zeta-n", type=int, default=S)
    estimator.add_argument("--extrapolant", choices=("logistic", "linear"), default=S)
    estimator.add_argument("--bayes-iterations", type=int, default=S)
    estimator.add_argument("--latent-x", type=_bool, default=S, metavar="BOOL")

    truth = argparse.ArgumentParser(add_help=False)
    truth.add_argument("--profile", default=S, help="load-profile CSV (default: synthetic profile)")
    truth.add_argument("--calibration-day", default=S, help="ISO date of the 24 h calibration window")
    truth.add_argument("--alpha", type=float, default=S)
    truth.add_argument("--phi-c", type=float, default=S)
    truth.add_argument("--bias-mean", type=float, default=S)
    truth.add_argument("--bias-sd", type=float, default=S)
    truth.add_argument("--bias-per-run", type=_bool, default=S, metavar="BOOL",
                       help="draw one bias per simulated meter instead of per reading")

    p = argparse.ArgumentParser(prog="simexcal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common, meter, truth],
                   help="write a profile, calibration-window pairs and UUT readings")
    c = sub.add_parser("calibrate", parents=[common, meter, estimator], help="estimate UUT error parameters")
    c.add_argument("--input", default=S, help="observed-pair CSV (default OUT/observed.csv)")
    r = sub.add_parser("predict", parents=[common], help="invert UUT readings and score them")
    r.add_argument("--estimates", default=S, help="calibration report (default OUT/estimates.json)")
    r.add_argument("--uut", default=S, help="UUT readings CSV (default OUT/uut.csv)")
    r.add_argument("--profile", default=S, help="true-power profile CSV (default OUT/profile.csv)")
    s = sub.add_parser("study", parents=[common, meter, estimator, truth], help="run the Monte Carlo study")
    s.add_argument("--realisations", type=int, default=S)
    s.add_argument("--trim-outliers", type=_bool, default=S, metavar="BOOL")
    s.add_argument("--workers", type=int, default=S)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags."""
    settings = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: {path}:{exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"--config: {path}: expected a JSON object")
        for key, value in data.items():
            k = key.replace("-", "_")
            if k not in DEFAULTS:
                raise UsageError(f"--config: {path}: unknown setting {key!r}")
            settings[k] = value
    for k, v in vars(args).items():
        if k in DEFAULTS:
            settings[k] = v
    for k in ("latent_x", "trim_outliers", "bias_per_run"):
        if isinstance(settings[k], str):
            try:
                settings[k] = _bool(settings[k])
            except argparse.ArgumentTypeError as exc:
                raise UsageError(f"--{k.replace('_', '-')}: {exc}") from exc
    settings["command"] = args.command
    return settings


def _check(flag, ok, message):
    if not ok:
        raise UsageError(f"--{flag}: {message}")


def _methods(settings) -> tuple:
    raw = settings["methods"]
    items = raw if isinstance(raw, list) else [m.strip() for m in str(raw).split(",") if m.strip()]
    _check("methods", items and all(m in METHODS for m in items), f"expected a subset of {','.join(METHODS)}, got {raw!r}")
    _check("methods", len(set(items)) == len(items), "duplicate method")
    return tuple(m for m in METHODS if m in items)


def _build(flag, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ConfigurationError, ValueError, TypeError) as exc:
        raise UsageError(f"--{flag}: {exc}") from exc


def meter_spec(settings) -> MeterClassSpec:
    _check("z", settings["z"] > 0, f"coverage factor must be positive, got {settings['z']}")
    _check("meter-class", 0 < settings["meter_class"] < 99, f"invalid class {settings['meter_class']}")
    _check("ct-class", 0 <= settings["ct_class"] < 100, f"invalid class {settings['ct_class']}")
    _check("rated-power", settings["rated_power"] > 0, "must be positive")
    return _build("meter-class", MeterClassSpec.iec, settings["meter_class"], settings["ct_class"],
                  settings["rated_power"], settings["z"])


def zeta_grid(settings):
    _check("zeta-n", int(settings["zeta_n"]) >= 2, f"need at least 2 points, got {settings['zeta_n']}")
    _check("zeta-min", settings["zeta_min"] >= 0, f"must be non-negative, got {settings['zeta_min']}")
    _check("zeta-max", settings["zeta_max"] > settings["zeta_min"],
           f"must exceed --zeta-min ({settings['zeta_min']}), got {settings['zeta_max']}")
    return make_zeta_grid(int(settings["zeta_n"]), float(settings["zeta_min"]), float(settings["zeta_max"]))


def bayes_config(settings) -> BayesConfig:
    _check("bayes-iterations", int(settings["bayes_iterations"]) >= 1000,
           f"need at least 1000, got {settings['bayes_iterations']}")
    return BayesConfig(engine_iterations=int(settings["bayes_iterations"]), latent_x_enabled=bool(settings["latent_x"]))


def true_params(settings):
    _check("bias-sd", settings["bias_sd"] >= 0, "must be non-negative")
    params = _build("phi-c", ErrorParameters, settings["alpha"], settings["phi_c"], settings["bias_mean"])
    bias = BiasDistribution(settings["bias_mean"], settings["bias_sd"], per_sample=not settings["bias_per_run"])
    return params, bias


def calibration_window(settings):
    try:
        day = np.datetime64(str(settings["calibration_day"]), "D")
    except ValueError:
        raise UsageError(f"--calibration-day: not an ISO date: {settings['calibration_day']!r}") from None
    return (str(day), str(day + np.timedelta64(1, "D")))


def load_profile(settings) -> LoadProfile:
    if settings["profile"] is None:
        return generate_default_profile()
    return load_profile_csv(settings["profile"])


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _public(settings) -> dict:
    return {k: v for k, v in settings.items() if k != "command"}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(settings) -> int:
    """Write ``profile.csv``, ``observed.csv`` (calibration window) and ``uut.csv``."""
    spec = meter_spec(settings)
    params, bias = true_params(settings)
    window = calibration_window(settings)
    profile = load_profile(settings)
    mask = profile.mask(*window)
    if not mask.any():
        raise UsageError(f"--calibration-day: no profile samples in {window[0]}..{window[1]}")
    rng = np.random.default_rng(int(settings["seed"]))
    y_star = simulate_uut(profile, params.alpha, params.phi_c, bias, rng)
    pair = observe(profile.window(*window), spec, y_star[mask], rng)

    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_profile_csv(profile, out / "profile.csv")
    with open(out / "observed.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVED_HEADER)
        for t, xs, ys, pf in zip(profile.timestamps[mask].astype(str), pair.x_star, pair.y_star,
                                 profile.power_factor[mask]):
            w.writerow([t, repr(float(xs)), repr(float(ys)), repr(float(pf))])
    with open(out / "uut.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UUT_HEADER)
        for t, ys in zip(profile.timestamps.astype(str), y_star):
            w.writerow([t, repr(float(ys))])
    _write_json(out / "simulate_config.json", _public(settings))
    log.info("wrote %d observed pairs and %d UUT readings to %s", len(pair), len(profile), out)
    return 0


def read_observed(path, spec: MeterClassSpec) -> ObservedPair:
    """Observed-pair CSV to :class:`ObservedPair`; noise level from the meter spec."""
    _, (x_star, y_star, pf) = read_csv_columns(path, OBSERVED_HEADER)
    x_star, y_star, pf = np.array(x_star), np.array(y_star), np.array(pf)
    try:
        phi = pf_to_phase(pf)
    except CalibrationError as exc:
        raise ParseError(str(exc), path=path, line=exc.index + 2) from exc
    sd = np.asarray(sigma_u(np.clip(x_star, 0.0, None), pf, spec), dtype=float)
    return ObservedPair(x_star, y_star, np.atleast_1d(phi), sd)


def cmd_calibrate(settings) -> int:
    """Fit the requested methods; write ``estimates.json``."""
    spec = meter_spec(settings)
    methods = _methods(settings)
    grid = zeta_grid(settings)
    bcfg = bayes_config(settings)
    out = Path(settings["out"])
    path = Path(settings["input"]) if settings["input"] else out / "observed.csv"
    pair = read_observed(path, spec)
    rng = np.random.default_rng(int(settings["seed"]))

    estimates, failures, diagnostics = {}, {}, {}
    try:
        estimates["naive"] = naive_fit(pair)
    except CalibrationError as exc:
        failures["naive"] = str(exc)
    if {"simex", "bayes"} & set(methods):
        try:
            run = run_simex(pair, grid, rng, extrapolant=settings["extrapolant"], naive=estimates.get("naive"))
            estimates["simex"] = run.estimate_at_minus_one
        except CalibrationError as exc:
            failures["simex"] = str(exc)
    if "bayes" in methods:
        if "simex" not in estimates:
            failures["bayes"] = "no SIMEX anchor: " + failures.get("simex", "")
        else:
            try:
                post = refine(estimates["simex"], pair, bcfg, rng)
                estimates["bayes"] = post.params
                diagnostics["bayes"] = {
                    "sigma_p": post.sigma_p,
                    "nu_p": post.nu_p,
                    "log_posterior_at_estimate": post.log_posterior_at_estimate,
                    "log_posterior_at_anchor": post.log_posterior_at_anchor,
                    **post.diagnostics,
                }
            except CalibrationError as exc:
                failures["bayes"] = str(exc)

    out.mkdir(parents=True, exist_ok=True)
    report = {
        "settings": _public(settings),
        "input": str(path),
        "n_pairs": len(pair),
        "estimates": {m: asdict(estimates[m]) for m in methods if m in estimates},
        "failures": {m: failures[m] for m in methods if m in failures},
        "diagnostics": diagnostics,
    }
    _write_json(out / "estimates.json", report)
    for m in methods:
        if m in failures:
            log.error("%s failed: %s", m, failures[m])
    return 1 if report["failures"] else 0


def cmd_predict(settings) -> int:
    """Invert UUT readings with each estimate; write ``metrics.json``."""
    out = Path(settings["out"])
    est_path = Path(settings["estimates"]) if settings["estimates"] else out / "estimates.json"
    uut_path = Path(settings["uut"]) if settings["uut"] else out / "uut.csv"
    prof_path = Path(settings["profile"]) if settings["profile"] else out / "profile.csv"
    try:
        report = json.loads(est_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot open: {exc.strerror}", path=est_path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=est_path, line=exc.lineno) from exc
    profile = load_profile_csv(prof_path)
    stamps, (y_star,) = read_csv_columns(uut_path, UUT_HEADER)
    if len(stamps) != len(profile) or np.any(np.array(stamps, dtype="datetime64[s]") != profile.timestamps):
        raise ParseError("UUT timestamps do not match the profile", path=uut_path, line=2)
    y_star = np.array(y_star)

    metrics = {}
    for method, values in report.get("estimates", {}).items():
        params = ErrorParameters(values["alpha"], values["phi_c"], values["epsilon"])
        fm = fit_metrics(profile.true_power, invert_prediction(y_star, profile.phase, params))
        metrics[method] = asdict(fm)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", {"settings": _public(settings), "estimates": str(est_path), "metrics": metrics})
    for m, v in metrics.items():
        log.info("%-6s CV(RMSE) %.3f%%  NMBE %+.3f%%", m, v["cv_rmse"], v["nmbe"])
    return 1 if report.get("failures") else 0


def cmd_study(settings) -> int:
    """Run the Monte Carlo study; write ``results.csv``, ``summary.json``, ``config.json``."""
    _check("realisations", int(settings["realisations"]) >= 1, f"must be >= 1, got {settings['realisations']}")
    _check("workers", int(settings["workers"]) >= 1, "must be >= 1")
    params, bias = true_params(settings)
    config = StudyConfig(
        realisations=int(settings["realisations"]),
        base_seed=int(settings["seed"]),
        true_params=params,
        bias=bias,
        calibration_window=calibration_window(settings),
        grid=zeta_grid(settings),
        bayes=bayes_config(settings),
        meter=meter_spec(settings),
        methods=_methods(settings),
        extrapolant=settings["extrapolant"],
        trim_outliers=bool(settings["trim_outliers"]),
        workers=int(settings["workers"]),
    )
    profile = load_profile(settings)
    results, summary = run_study(config, profile)
    files = write_results(results, summary, settings["out"], config=config)
    meta = json.loads(files["config"].read_text(encoding="utf-8"))
    meta["settings"] = _public(settings)
    _write_json(files["config"], meta)
    for m, cells in summary.cells.items():
        log.info("%-6s CV(RMSE) mean %.3f%%  NMBE mean %+.3f%%", m, cells["cv_rmse_pct"].mean, cells["nmbe_pct"].mean)
    if summary.n_failed:
        log.warning("%d of %d realisations had a failed method", summary.n_failed, len(results))
    return 0


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "predict": cmd_predict, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        settings = resolve(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        parser.exit(2, f"simexcal {args.command}: error: {exc}\n")
    except (CalibrationError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
