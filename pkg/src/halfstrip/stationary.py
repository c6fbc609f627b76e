"""Explicit stationary distribution and tail decay of half-strip walks.

For a positive-recurrent walk the stationary distribution has a closed
form built from three ingredients: the boundary process censored on layer 0
(a d-state chain whose stationary vector gives the boundary measure), the
downward offspring/fundamental matrices of the branching structure, and a
normalizer equal to the expected return time to layer 0 started from the
censored measure. Layer masses decay geometrically with rate equal to the
spectral radius of the tail's downward offspring matrix.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .branching import (
    DEFAULT_TOL,
    SERIES_HORIZON,
    branching_data,
    series_down_weighted,
)
from .classify import return_time_bound
from .linalg import stationary_left_vector
from .model import CallbackModel

UNDERFLOW_FLOOR = 1e-300
MASS_CUTOFF = 1e-12
LEVEL_CAP = 100_000


class NotPositiveRecurrentError(Exception):
    """The walk is not certified positive recurrent, so no stationary
    distribution exists (or none can be certified)."""


class TailNotPositiveRecurrentError(Exception):
    """The constant tail fails the drift condition (its return-time series
    diverges), so the geometric decay rate is undefined."""


def _require_tail_model(model, what):
    if isinstance(model, CallbackModel):
        raise NotPositiveRecurrentError(
            f"{what} requires a prefix+tail model; level blocks from a "
            "callable admit no limiting certificates")


def censored_matrix(model, data=None, tol=DEFAULT_TOL):
    """Transition matrix of the boundary process watched only on layer 0.

    Equals R0 + P0 Z1 with Z1 the downward exit matrix of level 1: either
    the next step stays on the boundary or the walk rises and is collapsed
    through its eventual first down-crossing. Stochastic exactly when the
    walk is recurrent; substochastic rows expose escape probability.
    """
    _require_tail_model(model, "the censored boundary matrix")
    if data is None:
        data = branching_data(model, tol=tol)
    return model.r0 + model.p0 @ data.exit_down[1]


def censored_measure(model, data=None, tol=DEFAULT_TOL):
    """Stationary probability vector of the censored boundary matrix.

    Raises NotPositiveRecurrentError when the censored matrix is visibly
    substochastic (escape mass above 1e-8) and ReducibleChainError when the
    boundary chain does not communicate.
    """
    _require_tail_model(model, "the censored boundary measure")
    if data is None:
        data = branching_data(model, tol=tol)
    cm = censored_matrix(model, data=data, tol=tol)
    deficit = float(np.max(np.abs(cm.sum(axis=1) - 1.0)))
    if deficit > 1e-8:
        raise NotPositiveRecurrentError(
            f"censored boundary matrix is substochastic (deficit {deficit:.3e}); "
            "the walk leaks upward and has no stationary distribution")
    return stationary_left_vector(cm, row_tol=1e-8)


@dataclass
class StationaryResult:
    """Stationary distribution truncated at level ``levels``.

    nu[n] is the stationary mass row of level n (normalized over the whole
    strip, so sum of all masses approaches 1 from below as levels grows).
    boundary_measure is the censored layer-0 vector; normalizer is the
    expected return time to layer 0 from that vector (mass of layer 0 is
    its reciprocal). decay_rate and empirical_rates describe the geometric
    tail. underflow_levels lists levels where entries below 1e-300 were
    reported as exact zeros.
    """

    nu: list
    normalizer: float
    boundary_measure: np.ndarray
    censored: np.ndarray
    levels: int
    mass: float
    decay_rate: float
    empirical_rates: list
    underflow_levels: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _empirical_rates(nu):
    """Per-phase log nu_n(j) / n at the deepest level where the entry is
    above the underflow floor."""
    d = nu[0].shape[0]
    rates = []
    levels = []
    for j in range(d):
        best = None
        for n in range(len(nu) - 1, 0, -1):
            if nu[n][j] > UNDERFLOW_FLOOR:
                best = n
                break
        if best is None:
            rates.append(math.nan)
            levels.append(0)
        else:
            rates.append(math.log(nu[best][j]) / best)
            levels.append(best)
    return rates, levels


def stationary_dist(model, data=None, levels=None, tol=DEFAULT_TOL,
                    horizon=SERIES_HORIZON, include_unnormalized=False):
    """Stationary distribution of a positive-recurrent walk, in closed form.

    nu_0 = m / Z and nu_n = m P0 A_1 ... A_{n-1} F_n / Z, with m the
    censored boundary measure, A/F the downward offspring and fundamental
    matrices, and Z the normalizer (expected return time to layer 0 from
    m). ``levels`` defaults to the first level whose mass drops below
    1e-12 (capped at 100000). Raises NotPositiveRecurrentError when the
    return-time series cannot be certified finite.
    """
    _require_tail_model(model, "the stationary distribution")
    if data is None:
        depth = max(levels if levels is not None else 0, model.n_prefix + 1)
        data = branching_data(model, n_max=depth, tol=tol)
    rb = return_time_bound(model, data=data, horizon=horizon, tol=tol)
    if rb.status != "finite":
        raise NotPositiveRecurrentError(
            f"return-time series is {rb.status}; a stationary distribution "
            "requires a certified finite expected return time")
    cm = censored_matrix(model, data=data, tol=tol)
    mu0 = censored_measure(model, data=data, tol=tol)
    zser = series_down_weighted(model, data, mu0 @ model.p0, start=1, horizon=horizon)
    normalizer = zser.value + 1.0
    inv_z = 1.0 / normalizer

    nu = [mu0 * inv_z]
    nu_bar = [mu0.copy()] if include_unnormalized else None
    underflow = []
    w = mu0 @ model.p0
    n = 1
    cap = levels if levels is not None else LEVEL_CAP
    while n <= cap:
        row_bar = w @ data.fundamental_down_at(n)
        row = row_bar * inv_z
        tiny = row <= UNDERFLOW_FLOOR
        if np.any(tiny & (row > 0)):
            underflow.append(n)
        row = np.where(tiny, 0.0, row)
        nu.append(row)
        if nu_bar is not None:
            nu_bar.append(row_bar)
        if levels is None and float(row.sum()) < MASS_CUTOFF:
            break
        w = w @ data.offspring_down_at(n)
        n += 1
    mass = float(sum(float(r.sum()) for r in nu))
    rates, rate_levels = _empirical_rates(nu)
    meta = {
        "return_bound": rb.value,
        "z_series_note": zser.note,
        "tol": tol,
        "empirical_rate_levels": rate_levels,
        "truncated_at_cap": levels is None and len(nu) - 1 >= LEVEL_CAP,
    }
    if nu_bar is not None:
        meta["nu_unnormalized"] = nu_bar
    return StationaryResult(
        nu=nu,
        normalizer=normalizer,
        boundary_measure=mu0,
        censored=cm,
        levels=len(nu) - 1,
        mass=mass,
        decay_rate=data.radius_down,
        empirical_rates=rates,
        underflow_levels=underflow,
        meta=meta,
    )


def matrix_product_check(model, data, result, levels=None):
    """Max deviation between nu_n and the matrix-product form nu_0 R_1...R_n
    with R_n = (up block of level n-1) @ (fundamental matrix of level n).

    An algebraic identity makes the two representations equal; deviations
    beyond rounding indicate an implementation fault.
    """
    top = len(result.nu) - 1
    if levels is not None:
        top = min(top, levels)
    prod = result.nu[0].copy()
    dev = 0.0
    for n in range(1, top + 1):
        up_prev = model.p0 if n == 1 else model.block_at(n - 1).up
        r_plus = up_prev @ data.fundamental_down_at(n)
        prod = prod @ r_plus
        dev = max(dev, float(np.max(np.abs(result.nu[n] - prod))))
    return dev


def balance_residual(model, result):
    """l1 norm of the stationary balance residual on interior levels.

    Levels 0 and the truncation level are excluded: mass flowing beyond
    the computed window has nowhere to balance.
    """
    nu = result.nu
    top = len(nu) - 1
    if top < 2:
        return 0.0
    total = 0.0
    for n in range(1, top):
        up_prev = model.p0 if n == 1 else model.block_at(n - 1).up
        t_n = model.block_at(n)
        t_next = model.block_at(n + 1)
        inflow = nu[n - 1] @ up_prev + nu[n] @ t_n.stay + nu[n + 1] @ t_next.down
        total += float(np.sum(np.abs(inflow - nu[n])))
    return total


@dataclass
class DecayReport:
    """Geometric decay rate of the stationary layer masses.

    rate is the spectral radius of the tail's downward offspring matrix;
    empirical[j] gives log nu_n(j) / n at the deepest usable level n (per
    phase), which converges to log(rate).
    """

    rate: float
    empirical: list
    levels: list
    meta: dict = field(default_factory=dict)


def decay_rate(model, data=None, result=None, levels=None, tol=DEFAULT_TOL):
    """Decay rate of the stationary distribution plus finite-level estimates.

    Requires the constant tail itself to be positive recurrent (downward
    offspring radius below 1, certified with the usual margin); otherwise
    raises TailNotPositiveRecurrentError. When ``result`` is omitted the
    stationary distribution is computed here.
    """
    _require_tail_model(model, "the decay rate")
    if data is None:
        data = branching_data(model, tol=tol)
    if data.radius_down >= 1.0 - 1e-10:
        raise TailNotPositiveRecurrentError(
            f"tail offspring radius {data.radius_down:.12g} is not certified "
            "below 1; the tail return-time series diverges and no geometric "
            "decay rate exists")
    if result is None:
        result = stationary_dist(model, data=data, levels=levels, tol=tol)
    rates, rate_levels = _empirical_rates(result.nu)
    return DecayReport(
        rate=data.radius_down,
        empirical=rates,
        levels=rate_levels,
        meta={"stationary_levels": result.levels, "normalizer": result.normalizer},
    )


def result_to_dict(result):
    """JSON-ready dict form of a StationaryResult."""
    return {
        "levels": result.levels,
        "boundary_measure": [float(x) for x in result.boundary_measure],
        "censored": [[float(x) for x in row] for row in result.censored],
        "nu": [[float(x) for x in row] for row in result.nu],
        "normalizer": float(result.normalizer),
        "mass": float(result.mass),
        "decay_rate": float(result.decay_rate),
        "empirical_rates": [float(x) for x in result.empirical_rates],
        "underflow_levels": list(result.underflow_levels),
    }


def result_to_csv(result):
    """CSV form: one row per (level, phase) with the stationary mass and
    the finite-level decay estimate (blank on level 0 and underflowed
    entries)."""
    buf = io.StringIO()
    buf.write("level,phase,nu,log_nu_over_n\n")
    for n, row in enumerate(result.nu):
        for j, val in enumerate(row):
            val = float(val)
            if n >= 1 and val > 0.0:
                rate = repr(math.log(val) / n)
            else:
                rate = ""
            buf.write(f"{n},{j},{val!r},{rate}\n")
    return buf.getvalue()
