"""Simulation-extrapolation (SIMEX) correction of the UUT error parameters.

Extra calibrator noise with variance ``zeta * sigma_u**2`` is added for every
point of a linearly spaced zeta grid, the UUT model is refitted on each noisier
copy, and each parameter's trend in zeta is extrapolated back to ``zeta = -1``,
where the total calibrator noise variance would vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .error_model import ErrorParameters, ObservedPair
from .exceptions import ConfigurationError, DomainError, FitError

PARAM_NAMES = ("alpha", "phi_c", "epsilon")

FIT_GTOL = 1e-8
FIT_MAX_ITER = 200
LOGISTIC_TOL = 1e-10
LOGISTIC_MAX_ITER = 500
_PHASE_LIMIT = math.pi / 2 - 1e-6


@dataclass(frozen=True)
class ZetaGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size < 2:
            raise ConfigurationError("zeta grid needs at least two values")
        if np.any(v < 0) or np.any(np.diff(v) <= 0):
            raise ConfigurationError("zeta values must be non-negative and strictly increasing")

    @property
    def n(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size


def make_zeta_grid(n: int = 300, zeta_min: float = 0.5, zeta_max: float = 5.0) -> ZetaGrid:
    if n < 2:
        raise ConfigurationError(f"zeta grid size must be >= 2, got {n}")
    if not 0 <= zeta_min < zeta_max:
        raise ConfigurationError(f"need 0 <= zeta_min < zeta_max, got [{zeta_min}, {zeta_max}]")
    return ZetaGrid(np.linspace(zeta_min, zeta_max, int(n)))


NOISE_SCALINGS = ("sqrt", "one_plus_sqrt")


def noise_multiplier(zeta: float, scaling: str = "sqrt") -> float:
    """Standard deviation of the added noise in units of ``sigma_u``.

    ``"sqrt"`` adds variance ``zeta * sigma_u**2``.  ``"one_plus_sqrt"`` uses a
    standard deviation of ``(1 + sqrt(zeta)) * sigma_u``, so even ``zeta = 0``
    doubles the calibrator noise variance.
    """
    if scaling == "sqrt":
        return math.sqrt(zeta)
    if scaling == "one_plus_sqrt":
        return 1.0 + math.sqrt(zeta)
    raise ConfigurationError(f"unknown noise scaling {scaling!r}; expected one of {NOISE_SCALINGS}")


def inflate_noise(x_star, sigma_u, zeta: float, rng: np.random.Generator, scaling: str = "sqrt") -> np.ndarray:
    """Return ``x* + m(zeta) * sigma_u * g`` with ``g`` standard normal.

    ``m(zeta)`` is ``sqrt(zeta)`` by default; see :func:`noise_multiplier`.
    """
    if zeta < 0:
        raise DomainError(f"zeta must be non-negative, got {zeta}")
    x_star = np.asarray(x_star, dtype=float)
    sigma_u = np.broadcast_to(np.asarray(sigma_u, dtype=float), x_star.shape)
    m = noise_multiplier(zeta, scaling)
    if m == 0:
        return x_star.copy()
    return x_star + m * sigma_u * rng.standard_normal(x_star.shape)


# ---------------------------------------------------------------------------
# Inner nonlinear fit
# ---------------------------------------------------------------------------


def model_residuals(theta, x, y_star, phi) -> np.ndarray:
    alpha, phi_c, eps = theta
    return y_star - (1.0 + alpha) * x * np.cos(phi + phi_c) - eps


def sum_of_squares(params: ErrorParameters, x, y_star, phi) -> float:
    r = model_residuals(params.as_array(), np.asarray(x, float), np.asarray(y_star, float), np.asarray(phi, float))
    return float(r @ r)


def fit_theta(x, y_star, phi, init: ErrorParameters | None = None, *, fit_phase: bool = True) -> ErrorParameters:
    """Least-squares estimate of the UUT error parameters.

    Minimises ``sum((y* - (1 + alpha) x cos(phi + phi_c) - eps) ** 2)`` with a
    bounded trust-region reflective solver and analytic Jacobian.  With
    ``fit_phase=False`` the phase error is held at ``init.phi_c``.

    Raises
    ------
    FitError
        If the solver stops on its iteration limit or the phase error runs
        into the +-pi/2 boundary.
    """
    x = np.asarray(x, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if x.size < 4:
        raise DomainError(f"fit needs at least 4 samples, got {x.size}")
    if np.ptp(x) == 0:
        raise DomainError("all x values identical; gain and bias not identifiable")
    if init is None:
        init = ErrorParameters(0.0, 0.0, 0.0)
    theta0 = init.as_array()

    if fit_phase:
        free = np.array([0, 1, 2])
    else:
        free = np.array([0, 2])

    def full(p):
        theta = theta0.copy()
        theta[free] = p
        return theta

    def resid(p):
        return model_residuals(full(p), x, y_star, phi)

    def jac(p):
        alpha, phi_c, _ = full(p)
        c = np.cos(phi + phi_c)
        cols = [-x * c, (1.0 + alpha) * x * np.sin(phi + phi_c), -np.ones_like(x)]
        return np.column_stack([cols[i] for i in free])

    lower = np.array([-np.inf, -_PHASE_LIMIT, -np.inf])[free]
    upper = np.array([np.inf, _PHASE_LIMIT, np.inf])[free]
    start = np.clip(theta0[free], lower, upper)
    sol = least_squares(
        resid,
        start,
        jac=jac,
        bounds=(lower, upper),
        method="trf",
        gtol=FIT_GTOL,
        ftol=1e-12,
        xtol=1e-12,
        max_nfev=FIT_MAX_ITER,
    )
    theta = full(sol.x)
    if sol.status == 0:
        raise FitError(
            f"least squares did not converge in {FIT_MAX_ITER} evaluations",
            best=theta,
            residual_norm=float(np.linalg.norm(sol.fun)),
        )
    if abs(theta[1]) >= _PHASE_LIMIT * (1 - 1e-9):
        raise FitError("phase error reached the +-pi/2 boundary", best=theta, residual_norm=float(np.linalg.norm(sol.fun)))
    return ErrorParameters.from_array(theta)


def naive_fit(pair: ObservedPair, init: ErrorParameters | None = None, *, fit_phase: bool = True) -> ErrorParameters:
    """Ordinary least squares on the calibrator readings as if they were exact."""
    return fit_theta(pair.x_star, pair.y_star, pair.phi, init, fit_phase=fit_phase)


# ---------------------------------------------------------------------------
# Extrapolants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticFit:
    """``L / (1 + exp(k (zeta - zeta_0)))``."""

    L: float
    k: float
    zeta_0: float
    residual_norm: float = 0.0
    degenerate: bool = False

    def __call__(self, zeta):
        z = np.asarray(zeta, dtype=float)
        out = self.L * expit(-self.k * (z - self.zeta_0))
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LinearFit:
    """``a * zeta + b``."""

    a: float
    b: float
    residual_norm: float = 0.0

    def __call__(self, zeta):
        out = self.a * np.asarray(zeta, dtype=float) + self.b
        return float(out) if out.ndim == 0 else out

    def __iter__(self):
        return iter((self.a, self.b))


Extrapolant = Union[LogisticFit, LinearFit]


def fit_extrapolant_linear(zetas, theta_values) -> LinearFit:
    z = np.asarray(zetas, dtype=float)
    t = np.asarray(theta_values, dtype=float)
    if z.shape != t.shape or z.size < 2:
        raise DomainError("linear extrapolant needs two or more paired values")
    A = np.column_stack([z, np.ones_like(z)])
    (a, b), *_ = np.linalg.lstsq(A, t, rcond=None)
    return LinearFit(float(a), float(b), float(np.linalg.norm(A @ [a, b] - t)))


def _logistic_jac(p, z):
    L, k, z0 = p
    s = expit(-k * (z - z0))
    ds = s * (1 - s)
    return np.column_stack([s, -L * ds * (z - z0), L * ds * k])


def fit_extrapolant_logistic(zetas, theta_values) -> LogisticFit:
    """Least-squares logistic curve through ``(zeta, theta)``.

    The amplitude enters linearly, so starting points are found by profiling
    it out over a coarse grid of slopes and midpoints; the best few are then
    polished jointly.  The slope sign is restricted so the curve moves in the
    same direction as the straight-line trend of the data.
    """
    z = np.asarray(zetas, dtype=float)
    t = np.asarray(theta_values, dtype=float)
    if z.shape != t.shape or z.size < 3:
        raise DomainError("logistic extrapolant needs three or more paired values")
    scale = max(1.0, float(np.max(np.abs(t))))
    if np.ptp(t) <= 1e-9 * scale:
        c = float(np.mean(t))
        return LogisticFit(2.0 * c, 0.0, 0.0, float(np.linalg.norm(t - c)), degenerate=True)

    trend = fit_extrapolant_linear(z, t).a
    span = z.max() - z.min()
    z0_grid = z.min() + span * np.linspace(-3.0, 4.0, 29)
    k_grid = np.geomspace(0.02, 20.0, 25) / span

    def sign_ok(L, k):
        # curve slope has sign -sign(L * k)
        return trend == 0 or np.sign(-L * k) == np.sign(trend)

    candidates = []
    for k_abs in k_grid:
        for k in (k_abs, -k_abs):
            for z0 in z0_grid:
                s = expit(-k * (z - z0))
                ss = s @ s
                if ss < 1e-300:
                    continue
                L = (s @ t) / ss
                if not sign_ok(L, k):
                    continue
                r = L * s - t
                candidates.append((float(r @ r), L, k, z0))
    candidates.sort(key=lambda c: c[0])

    best = None
    for _, L, k, z0 in candidates[:5]:
        sol = least_squares(
            lambda p: p[0] * expit(-p[1] * (z - p[2])) - t,
            [L, k, z0],
            jac=lambda p: _logistic_jac(p, z),
            method="lm",
            ftol=LOGISTIC_TOL,
            xtol=LOGISTIC_TOL,
            gtol=LOGISTIC_TOL,
            max_nfev=LOGISTIC_MAX_ITER,
        )
        L1, k1, z1 = sol.x
        if not (np.all(np.isfinite(sol.x)) and sign_ok(L1, k1)):
            continue
        cost = float(sol.fun @ sol.fun)
        if best is None or cost < best[0]:
            best = (cost, L1, k1, z1)
    if best is None:
        cost, L1, k1, z1 = candidates[0]
    else:
        cost, L1, k1, z1 = best
    return LogisticFit(float(L1), float(k1), float(z1), math.sqrt(cost))


def extrapolate(fit, zeta: float = -1.0) -> float:
    """Evaluate a fitted extrapolant (logistic, linear or an ``(a, b)`` pair)."""
    if isinstance(fit, (LogisticFit, LinearFit)):
        return fit(zeta)
    a, b = fit
    return float(a * zeta + b)


# ---------------------------------------------------------------------------
# Full procedure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimexRun:
    grid: ZetaGrid
    per_zeta_estimates: np.ndarray  # shape (n, 3): alpha, phi_c, epsilon
    extrapolants: Mapping[str, Extrapolant]
    estimate_at_minus_one: ErrorParameters
    naive: ErrorParameters = field(default=None)
    gain_scale: bool = False  # the alpha extrapolant was fitted to 1 + alpha

    def trace(self, name: str) -> np.ndarray:
        return self.per_zeta_estimates[:, PARAM_NAMES.index(name)]


def _fit_extrapolant(kind: str, z, t) -> Extrapolant:
    if kind == "linear":
        return fit_extrapolant_linear(z, t)
    if kind == "logistic":
        fit = fit_extrapolant_logistic(z, t)
        if not all(math.isfinite(v) for v in (fit.L, fit.k, fit.zeta_0)):
            return fit_extrapolant_linear(z, t)
        return fit
    raise ConfigurationError(f"unknown extrapolant {kind!r}")


def run_simex(
    pair: ObservedPair,
    grid: ZetaGrid | None = None,
    rng: np.random.Generator | None = None,
    *,
    extrapolant: str | Mapping[str, str] = "logistic",
    fit_phase: bool = True,
    naive: ErrorParameters | None = None,
    noise_scaling: str = "sqrt",
    gain_scale: bool = False,
) -> SimexRun:
    """Run SIMEX over ``grid`` and extrapolate every parameter to ``zeta = -1``.

    Each grid point gets one independent noise draw.  Inner fits are
    warm-started from the previous grid point, the first from the naive fit.
    ``extrapolant`` is ``"logistic"``, ``"linear"`` or a per-parameter mapping.
    With ``fit_phase=False`` the phase error is held at the naive value (zero
    unless ``naive`` says otherwise) and reported unchanged.

    The logistic curve tends to zero on one side, so it cannot follow a trace
    that crosses zero inside the grid.  ``gain_scale=True`` extrapolates the
    gain ``1 + alpha`` instead of ``alpha``, which stays well away from zero
    for any working meter; ``per_zeta_estimates`` still hold ``alpha``.
    """
    grid = grid if grid is not None else make_zeta_grid()
    rng = rng if rng is not None else np.random.default_rng()
    if naive is None:
        naive = naive_fit(pair, fit_phase=fit_phase)
    kinds = extrapolant if isinstance(extrapolant, Mapping) else {k: extrapolant for k in PARAM_NAMES}

    estimates = np.empty((grid.n, 3))
    current = naive
    for i, zeta in enumerate(grid.values):
        x_zeta = inflate_noise(pair.x_star, pair.sigma_u, zeta, rng, noise_scaling)
        try:
            current = fit_theta(x_zeta, pair.y_star, pair.phi, current, fit_phase=fit_phase)
        except FitError as exc:
            exc.zeta_index = i
            raise
        estimates[i] = current.as_array()

    extrapolants = {}
    values = []
    for j, name in enumerate(PARAM_NAMES):
        if name == "phi_c" and not fit_phase:
            fit = LinearFit(0.0, naive.phi_c)
        elif name == "alpha" and gain_scale:
            fit = _fit_extrapolant(kinds.get(name, "logistic"), grid.values, 1.0 + estimates[:, j])
        else:
            fit = _fit_extrapolant(kinds.get(name, "logistic"), grid.values, estimates[:, j])
        extrapolants[name] = fit
        values.append(extrapolate(fit, -1.0) - (1.0 if name == "alpha" and gain_scale else 0.0))
    if abs(values[1]) >= math.pi / 2 or not all(math.isfinite(v) for v in values):
        raise FitError(f"extrapolated parameters {values} are not admissible", best=np.array(values))
    return SimexRun(grid, estimates, extrapolants, ErrorParameters.from_array(values), naive, gain_scale)
