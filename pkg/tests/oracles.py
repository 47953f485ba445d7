"""Independent reference computations used by several test modules."""

import numpy as np

from simexcal import (
    MeterClassSpec,
    ObservedPair,
    fit_extrapolant_logistic,
    make_zeta_grid,
    naive_fit,
    run_simex,
    sigma_u,
)


def _profiled_objective(alpha, phi_c, x, y, phi):
    """Sum of squares with the bias at its exact optimum, for grids of (alpha, phi_c)."""
    a = np.asarray(alpha)[..., None]
    p = np.asarray(phi_c)[..., None]
    r = y - (1.0 + a) * x * np.cos(phi + p)
    r = r - r.mean(axis=-1, keepdims=True)
    return np.sum(r * r, axis=-1)


def grid_search(x, y, phi, centre, half_width=0.25, resolution=1e-3, zoom=True):
    """Brute-force least squares over an (alpha, phi_c) grid.

    The bias enters linearly, so at every grid node it is set to its exact
    conditional optimum (equivalent to an infinitely fine bias grid).  With
    ``zoom`` the best node is refined by two further grids, each 100 times
    finer, so the returned objective is accurate well below ``resolution``.
    Returns ``(theta, objective, theta_at_resolution)``.
    """
    x, y, phi = (np.asarray(v, dtype=float) for v in (x, y, phi))

    def search(c, hw, step):
        a = c[0] + np.arange(-hw, hw + step / 2, step)
        p = c[1] + np.arange(-hw, hw + step / 2, step)
        A, P = np.meshgrid(a, p, indexing="ij")
        f = _profiled_objective(A, P, x, y, phi)
        i, j = np.unravel_index(np.argmin(f), f.shape)
        interior = 0 < i < a.size - 1 and 0 < j < p.size - 1
        return np.array([a[i], p[j]]), float(f[i, j]), interior

    best, f, interior = search(np.asarray(centre[:2], dtype=float), half_width, resolution)
    assert interior, "grid optimum on the boundary; widen the search window"
    coarse = best.copy()
    if zoom:
        step = resolution
        for _ in range(2):
            best, f, _ = search(best, 2 * step, step / 100)
            step /= 100

    def with_bias(ap):
        eps = float(np.mean(y - (1.0 + ap[0]) * x * np.cos(phi + ap[1])))
        return np.array([ap[0], ap[1], eps])

    return with_bias(best), f, with_bias(coarse)


def straight_line_experiment(x, n_real=200, seed=4, slope=1.2, intercept=5.0, noise_sd=2.5,
                             spec=MeterClassSpec(), grid=None):
    """Naive and SIMEX slopes of ``y = slope * x + eps`` with noisy ``x``.

    Unity power factor and a frozen zero phase error reduce the UUT model to a
    straight line whose slope is the gain ``1 + alpha``.  The logistic
    extrapolant is applied to the slope itself and, from the same SIMEX
    traces, to ``alpha`` (the library default).  Returns a dict with arrays
    ``naive``, ``simex`` (slope scale) and ``simex_alpha_scale`` plus the
    analytic reliability ratio ``var(x) / (var(x) + mean(sigma_u**2))``.
    """
    x = np.asarray(x, dtype=float)
    pf = np.ones_like(x)
    phi = np.zeros_like(x)
    su = sigma_u(x, pf, spec)
    grid = grid or make_zeta_grid()
    out = {"naive": [], "simex": [], "simex_alpha_scale": []}
    for r in range(n_real):
        rng = np.random.default_rng([seed, r])
        y = slope * x + intercept + noise_sd * rng.standard_normal(x.size)
        xs = x + su * rng.standard_normal(x.size)
        pair = ObservedPair(xs, y, phi, sigma_u(np.clip(xs, 0.0, None), pf, spec))
        nv = naive_fit(pair, fit_phase=False)
        run = run_simex(pair, grid, rng, fit_phase=False, naive=nv)
        gain = fit_extrapolant_logistic(grid.values, 1.0 + run.trace("alpha"))
        out["naive"].append(1.0 + nv.alpha)
        out["simex"].append(gain(-1.0))
        out["simex_alpha_scale"].append(1.0 + run.estimate_at_minus_one.alpha)
    out = {k: np.array(v) for k, v in out.items()}
    out["reliability"] = float(np.var(x) / (np.var(x) + np.mean(su**2)))
    return out


def grid_instances(n_instances=20, n=12, seed=11):
    """Small noisy instances of the reference scenario for the fit oracle."""
    out = []
    for i in range(n_instances):
        rng = np.random.default_rng([seed, i])
        x = rng.uniform(20.0, 180.0, n)
        phi = np.arccos(rng.uniform(0.6, 1.0, n))
        y = 1.2 * x * np.cos(phi + 0.2) + rng.normal(5.0, 2.5, n)
        out.append((x, y, phi))
    return out
