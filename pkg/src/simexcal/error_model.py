"""Measurement model for the reference meter (calibrator) and the meter under test.

The calibrator reads the true power with additive, heteroscedastic Gaussian
noise whose standard deviation follows the IEC class error bounds.  The meter
under test (UUT) registers

    y* = (1 + alpha) * x * cos(phi + phi_c) + epsilon

with gain error ``alpha``, phase error ``phi_c`` (radians) and bias ``epsilon``
(kW).  ``phi`` is the load phase angle, obtained from the power factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, DomainError, ParseError

DEFAULT_RATED_POWER = 200.0
DEFAULT_COVERAGE = 1.96
I_MAX = math.inf


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadProfile:
    """Ground-truth power series sampled on a uniform grid.

    ``timestamps`` is a ``datetime64[s]`` array; ``true_power`` in kW and
    ``power_factor`` in (0, 1].
    """

    timestamps: np.ndarray
    true_power: np.ndarray
    power_factor: np.ndarray
    sampling_interval: float = 30.0  # minutes

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        p = np.asarray(self.true_power, dtype=float)
        pf = np.asarray(self.power_factor, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "true_power", p)
        object.__setattr__(self, "power_factor", pf)
        if not (ts.shape == p.shape == pf.shape) or ts.ndim != 1:
            raise DomainError("timestamps, true_power and power_factor must be equal-length 1-D arrays")
        if self.sampling_interval <= 0:
            raise ConfigurationError("sampling_interval must be positive")
        bad = np.flatnonzero(~np.isfinite(p) | (p < 0))
        if bad.size:
            raise DomainError(f"negative or non-finite power at sample {bad[0]}", index=int(bad[0]))
        bad = np.flatnonzero(~((pf > 0) & (pf <= 1)))
        if bad.size:
            raise DomainError(f"power factor out of (0, 1] at sample {bad[0]}", index=int(bad[0]))
        if ts.size > 1:
            step = np.diff(ts).astype(np.int64)
            expected = int(round(self.sampling_interval * 60))
            bad = np.flatnonzero(step != expected)
            if bad.size:
                raise DomainError(
                    f"timestamps not uniformly spaced by {self.sampling_interval} min at sample {bad[0] + 1}",
                    index=int(bad[0] + 1),
                )

    def __len__(self):
        return self.true_power.size

    @property
    def phase(self) -> np.ndarray:
        return pf_to_phase(self.power_factor)

    def window(self, start, stop) -> "LoadProfile":
        """Sub-profile with ``start <= timestamp < stop`` (anything numpy parses)."""
        start = np.datetime64(start, "s")
        stop = np.datetime64(stop, "s")
        mask = (self.timestamps >= start) & (self.timestamps < stop)
        return LoadProfile(
            self.timestamps[mask], self.true_power[mask], self.power_factor[mask], self.sampling_interval
        )

    def mask(self, start, stop) -> np.ndarray:
        start = np.datetime64(start, "s")
        stop = np.datetime64(stop, "s")
        return (self.timestamps >= start) & (self.timestamps < stop)


@dataclass(frozen=True)
class MeterRow:
    current_low: float  # fraction of I_n
    current_high: float  # fraction of I_n, math.inf for I_max
    power_factor: float
    error_limit: float  # fraction of P_n


# Accuracy rows for an IEC Class 3 meter, as fractions of rated current/power.
CLASS3_ROWS = (
    MeterRow(0.02, 0.05, 1.0, 0.04),
    MeterRow(0.05, I_MAX, 1.0, 0.03),
    MeterRow(0.05, 0.10, 0.5, 0.04),
    MeterRow(0.10, I_MAX, 0.5, 0.03),
)


@dataclass(frozen=True)
class MeterClassSpec:
    """Stepwise meter error bounds plus a flat CT bound and a coverage factor."""

    rows: tuple = CLASS3_ROWS
    rated_power: float = DEFAULT_RATED_POWER
    ct_error_limit: float = 0.05
    coverage_factor: float = DEFAULT_COVERAGE

    def __post_init__(self):
        rows = tuple(r if isinstance(r, MeterRow) else MeterRow(*r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        if not rows:
            raise ConfigurationError("meter spec needs at least one row")
        if self.rated_power <= 0:
            raise ConfigurationError("rated_power must be positive")
        if not 0 <= self.ct_error_limit < 1:
            raise ConfigurationError("ct_error_limit must lie in [0, 1)")
        if not self.coverage_factor > 0:
            raise ConfigurationError("coverage factor z must be positive")
        for r in rows:
            if not 0 < r.error_limit < 1:
                raise ConfigurationError(f"error_limit {r.error_limit} outside (0, 1)")
            if not 0 < r.power_factor <= 1:
                raise ConfigurationError(f"row power factor {r.power_factor} outside (0, 1]")
            if not r.current_low < r.current_high:
                raise ConfigurationError(f"empty current band [{r.current_low}, {r.current_high}]")
        for pf in self.power_factors:
            band = sorted((r for r in rows if r.power_factor == pf), key=lambda r: r.current_low)
            for a, b in zip(band, band[1:]):
                if not math.isclose(a.current_high, b.current_low):
                    raise ConfigurationError(f"gap or overlap in current bands at pf={pf}")
            if band[-1].current_high != I_MAX:
                raise ConfigurationError(f"bands at pf={pf} do not reach I_max")

    @property
    def power_factors(self) -> list:
        return sorted({r.power_factor for r in self.rows})

    @classmethod
    def iec(cls, meter_class=3.0, ct_class=5.0, rated_power=DEFAULT_RATED_POWER, coverage_factor=DEFAULT_COVERAGE):
        """Class-``c`` meter with the Class 3 band layout.

        The main bands carry ``c`` percent and the low-current bands ``c + 1``
        percent, which reproduces the Class 3 table exactly.
        """
        main = meter_class / 100.0
        low = (meter_class + 1.0) / 100.0
        rows = (
            MeterRow(0.02, 0.05, 1.0, low),
            MeterRow(0.05, I_MAX, 1.0, main),
            MeterRow(0.05, 0.10, 0.5, low),
            MeterRow(0.10, I_MAX, 0.5, main),
        )
        return cls(rows, rated_power, ct_class / 100.0, coverage_factor)

    def to_dict(self) -> dict:
        return {
            "rated_power": self.rated_power,
            "ct_error_limit": self.ct_error_limit,
            "coverage_factor": self.coverage_factor,
            "rows": [
                {
                    "current_low": r.current_low,
                    "current_high": "Imax" if r.current_high == I_MAX else r.current_high,
                    "power_factor": r.power_factor,
                    "error_limit": r.error_limit,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeterClassSpec":
        rows = []
        for r in data.get("rows", []):
            high = r["current_high"]
            if isinstance(high, str):
                if high.strip().lower() not in ("imax", "i_max"):
                    raise ConfigurationError(f"unknown current_high marker {high!r}")
                high = I_MAX
            rows.append(MeterRow(float(r["current_low"]), float(high), float(r["power_factor"]), float(r["error_limit"])))
        kwargs = {k: float(data[k]) for k in ("rated_power", "ct_error_limit", "coverage_factor") if k in data}
        return cls(tuple(rows) if rows else CLASS3_ROWS, **kwargs)

    @classmethod
    def from_json(cls, path) -> "MeterClassSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, path=path, line=exc.lineno) from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class ErrorParameters:
    """Gain error ``alpha``, phase error ``phi_c`` (rad) and bias ``epsilon`` (kW)."""

    alpha: float
    phi_c: float
    epsilon: float

    def __post_init__(self):
        for k in ("alpha", "phi_c", "epsilon"):
            object.__setattr__(self, k, float(getattr(self, k)))
        vals = (self.alpha, self.phi_c, self.epsilon)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite error parameters {vals}")
        if abs(self.phi_c) >= math.pi / 2:
            raise DomainError(f"|phi_c| = {abs(self.phi_c):.4g} must be below pi/2")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.phi_c, self.epsilon], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ErrorParameters":
        a, p, e = (float(v) for v in values)
        return cls(a, p, e)


@dataclass(frozen=True)
class BiasDistribution:
    """Distribution of the UUT bias term.

    ``per_sample=True`` draws a fresh bias for every reading, otherwise one
    bias value is drawn per simulated meter and held for the whole series.
    """

    mean: float = 5.0
    std_dev: float = 2.5
    per_sample: bool = True

    def __post_init__(self):
        if not self.std_dev >= 0:
            raise ConfigurationError("bias std_dev must be non-negative")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.per_sample:
            return self.mean + self.std_dev * rng.standard_normal(n)
        return np.full(n, self.mean + self.std_dev * rng.standard_normal())


@dataclass(frozen=True)
class ObservedPair:
    """Calibrator readings, UUT readings, known phase and calibrator noise level."""

    x_star: np.ndarray
    y_star: np.ndarray
    phi: np.ndarray
    sigma_u: np.ndarray = field(repr=False)

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in ("x_star", "y_star", "phi", "sigma_u")]
        for k, a in zip(("x_star", "y_star", "phi", "sigma_u"), arrays):
            object.__setattr__(self, k, a)
        n = arrays[0].shape
        if any(a.shape != n for a in arrays) or arrays[0].ndim != 1:
            raise DomainError("x_star, y_star, phi and sigma_u must be equal-length 1-D arrays")
        bad = np.flatnonzero(~(arrays[3] > 0))
        if bad.size:
            raise DomainError(f"sigma_u must be positive (sample {bad[0]})", index=int(bad[0]))

    def __len__(self):
        return self.x_star.size


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def pf_to_phase(pf):
    """Phase angle (rad) for a power factor in (0, 1]."""
    arr = np.asarray(pf, dtype=float)
    bad = np.flatnonzero(~((arr > 0) & (arr <= 1)).ravel())
    if bad.size:
        raise DomainError(f"power factor {arr.ravel()[bad[0]]!r} outside (0, 1] at sample {bad[0]}", index=int(bad[0]))
    out = np.arccos(arr)
    return float(out) if out.ndim == 0 else out


def _band_limit(frac: np.ndarray, rows: Sequence[MeterRow]) -> np.ndarray:
    rows = sorted(rows, key=lambda r: r.current_low)
    lows = np.array([r.current_low for r in rows])
    limits = np.array([r.error_limit for r in rows])
    # Rows are half-open [low, high); below the first row the first limit is kept.
    idx = np.clip(np.searchsorted(lows, frac, side="right") - 1, 0, len(rows) - 1)
    return limits[idx]


def meter_error_bound(power, pf, spec: MeterClassSpec = MeterClassSpec()):
    """Additive meter error bound (kW) at the given power and power factor.

    Power is mapped to a current fraction through the rated power.  The bound
    is read from the band containing that fraction at each tabulated power
    factor, then linearly interpolated in power factor (clamped to the
    tabulated range).
    """
    power = np.asarray(power, dtype=float)
    shape = np.broadcast_shapes(power.shape, np.shape(pf))
    frac = np.broadcast_to(power / spec.rated_power, shape).ravel()
    pf = np.broadcast_to(np.asarray(pf, dtype=float), shape).ravel()
    pfs = np.array(spec.power_factors)
    per_pf = np.stack([_band_limit(frac, [r for r in spec.rows if r.power_factor == p]) for p in pfs])
    if pfs.size == 1:
        limit = per_pf[0]
    else:
        pf = np.clip(pf, pfs[0], pfs[-1])
        j = np.clip(np.searchsorted(pfs, pf, side="right") - 1, 0, pfs.size - 2)
        w = (pf - pfs[j]) / (pfs[j + 1] - pfs[j])
        cols = np.arange(frac.size)
        limit = per_pf[j, cols] + w * (per_pf[j + 1, cols] - per_pf[j, cols])
    out = (limit * spec.rated_power).reshape(shape)
    return float(out) if out.ndim == 0 else out


def combined_error_bound(power, pf, spec: MeterClassSpec = MeterClassSpec()):
    """Root-sum-of-squares of the meter and CT bounds, in kW."""
    p_meter = np.asarray(meter_error_bound(power, pf, spec))
    p_ct = spec.ct_error_limit * spec.rated_power
    out = np.hypot(p_meter, p_ct)
    return float(out) if out.ndim == 0 else out


def sigma_u(power, pf, spec: MeterClassSpec = MeterClassSpec()):
    """Calibrator noise standard deviation: combined bound over the coverage factor."""
    if not spec.coverage_factor > 0:
        raise ConfigurationError("coverage factor z must be positive")
    out = np.asarray(combined_error_bound(power, pf, spec)) / spec.coverage_factor
    return float(out) if out.ndim == 0 else out


def simulate_calibrator(profile: LoadProfile, spec: MeterClassSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw calibrator readings ``x* ~ Normal(x, sigma_u(x))``."""
    sd = np.asarray(sigma_u(profile.true_power, profile.power_factor, spec), dtype=float)
    return profile.true_power + sd * rng.standard_normal(len(profile))


def uut_response(true_power, phi, params: ErrorParameters):
    """Reading registered by the meter under test for a fixed bias."""
    x = np.asarray(true_power, dtype=float)
    out = (1.0 + params.alpha) * x * np.cos(np.asarray(phi, dtype=float) + params.phi_c) + params.epsilon
    return float(out) if np.ndim(out) == 0 else out


def simulate_uut(
    profile: LoadProfile,
    alpha: float,
    phi_c: float,
    bias: BiasDistribution,
    rng: np.random.Generator,
) -> np.ndarray:
    """UUT readings over a profile with the bias drawn from ``bias``."""
    eps = bias.draw(len(profile), rng)
    deterministic = uut_response(profile.true_power, profile.phase, ErrorParameters(alpha, phi_c, 0.0))
    return np.asarray(deterministic) + eps


def observe(profile: LoadProfile, spec: MeterClassSpec, y_star, rng: np.random.Generator) -> ObservedPair:
    """Calibrator reading of ``profile`` paired with given UUT readings.

    The noise level attached to the pair is evaluated at the observed
    calibrator reading, since the true power is unknown in the field.
    """
    x_star = simulate_calibrator(profile, spec, rng)
    sd = sigma_u(np.clip(x_star, 0.0, None), profile.power_factor, spec)
    return ObservedPair(x_star, np.asarray(y_star, dtype=float), profile.phase, np.asarray(sd, dtype=float))
