"""Exit probabilities and the branching structure of half-strip walks.

For each level n the walk's first passage one level up (resp. down) has an
exit-probability matrix: entry (i, j) is the probability that the passage
from (n, i) first enters the neighboring level at phase j. Around these sit
the mean-offspring matrices (expected level-crossing steps spawned by one
step into a level), per-level expected sojourn vectors, and the fundamental
matrix of a level before downward exit. Everything here is built from the
two exit recursions:

    upward:   E_n = (I - D_n E_{n-1} - S_n)^{-1} U_n     (E_0 from the boundary)
    downward: E_n = (I - U_n E_{n+1} - S_n)^{-1} D_n     (anchored in the tail)

with U/D/S the up/down/stay blocks. Upward exits are stochastic (the
reflected walk eventually rises); downward exits are substochastic and
stochastic exactly when the walk is recurrent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import NoConvergenceError, SingularMatrixError, NotStochasticError, invert, spectral_radius
from .model import CallbackModel

DEFAULT_TOL = 1e-12
FIXED_POINT_BUDGET = 10**5
# Iterations of plain functional iteration before trying the quadratically
# convergent fallback. Plain iteration stalls with error ~ C/k near the
# recurrence boundary, so a small budget here is deliberate.
FUNCTIONAL_WARMUP = 2000
RADIUS_MARGIN = 1e-10
SERIES_HORIZON = 10_000
DIVERGENCE_FLOOR = 1e-12
DIVERGENCE_WINDOW = 100
OVERFLOW_CAP = 1e15


def _stochastic_projection(mat, slack=1e-6):
    """Renormalize rows that are within ``slack`` of summing to 1.

    The upward recursion is stochastic in exact arithmetic but amplifies
    rounding geometrically on positive-recurrent models; projecting back to
    the stochastic manifold removes that unstable error mode. Rows far from
    1 are left alone so genuine substochasticity stays visible.
    """
    sums = mat.sum(axis=1)
    close = np.abs(sums - 1.0) <= slack
    out = np.array(mat, dtype=float)
    if np.any(close):
        out[close] /= sums[close, None]
    return out


def boundary_exit_up(model):
    """First-passage matrix from layer 0 to layer 1: (I - R0)^{-1} P0.

    Equals P0 exactly when the boundary has no stay block.
    """
    d = model.d
    return _stochastic_projection(invert(np.eye(d) - model.r0) @ model.p0)


def exit_up_seq(model, n_max):
    """Upward exit matrices for levels 0..n_max (forward recursion).

    Every element is row-stochastic; each iterate is projected back onto
    the stochastic manifold to keep the recursion numerically stable.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    eye = np.eye(model.d)
    out = [boundary_exit_up(model)]
    for n in range(1, n_max + 1):
        t = model.block_at(n)
        factor = invert(eye - t.down @ out[n - 1] - t.stay)
        out.append(_stochastic_projection(factor @ t.up))
    return out


def _lr_minimal_root(down, stay, up, tol=DEFAULT_TOL, max_sweeps=64):
    """Minimal nonnegative root G of G = down + stay G + up G^2.

    Logarithmic reduction: quadratically convergent off the recurrence
    boundary and linearly at rate 1/2 on it, so 64 sweeps always suffice.
    Returns (root, sweeps); raises NoConvergenceError if increments fail to
    vanish (e.g. an intermediate matrix became singular).
    """
    d = down.shape[0]
    eye = np.eye(d)
    try:
        base = invert(eye - stay)
        high = base @ up
        low = base @ down
        g = low.copy()
        t = high.copy()
        for sweep in range(1, max_sweeps + 1):
            u = high @ low + low @ high
            mid = invert(eye - u)
            high = mid @ (high @ high)
            low = mid @ (low @ low)
            inc = t @ low
            g = g + inc
            t = t @ high
            if float(np.max(np.abs(inc))) <= tol * 0.01:
                return np.clip(g, 0.0, None), sweep
    except SingularMatrixError as exc:
        raise NoConvergenceError(f"reduction step failed: {exc}", estimate=None) from exc
    raise NoConvergenceError("reduction increments did not vanish", estimate=g,
                             iterations=max_sweeps)


def _down_residual(tail, z):
    lhs = (np.eye(tail.d) - tail.up @ z - tail.stay) @ z
    return float(np.max(np.abs(lhs - tail.down)))


def tail_down_iterates(tail, count):
    """First ``count`` functional iterates of the downward tail fixed point,
    starting from zero. They increase entrywise toward the minimal root."""
    d = tail.d
    eye = np.eye(d)
    z = np.zeros((d, d))
    out = []
    for _ in range(count):
        z = invert(eye - tail.up @ z - tail.stay) @ tail.down
        out.append(z)
    return out


def exit_down_tail(tail, tol=DEFAULT_TOL, max_iter=FIXED_POINT_BUDGET):
    """Minimal nonnegative downward exit matrix of a constant tail.

    Runs the monotone functional iteration from zero; if it stalls (it
    converges like C/k near the recurrence boundary), switches to the
    quadratic reduction solver and validates that result against the last
    monotone iterate (which is a lower bound), substochasticity, and the
    fixed-point residual. Returns (matrix, info dict).
    """
    d = tail.d
    eye = np.eye(d)
    z = np.zeros((d, d))
    warmup = min(FUNCTIONAL_WARMUP, max_iter)
    it = 0
    diff = math.inf
    for it in range(1, warmup + 1):
        nxt = invert(eye - tail.up @ z - tail.stay) @ tail.down
        diff = float(np.max(np.abs(nxt - z)))
        z = nxt
        if diff <= tol:
            return z, {"method": "functional", "iterations": it,
                       "residual": _down_residual(tail, z)}
    lower = z
    try:
        root, sweeps = _lr_minimal_root(tail.down, tail.stay, tail.up, tol=tol)
        ok = (
            float(np.min(root - lower)) >= -1e-9
            and float(np.max(root.sum(axis=1))) <= 1.0 + 1e-9
            and _down_residual(tail, root) <= max(10 * tol, 1e-10)
        )
        if ok:
            return np.clip(root, 0.0, None), {
                "method": "reduction", "iterations": it, "sweeps": sweeps,
                "residual": _down_residual(tail, root),
            }
    except NoConvergenceError:
        pass
    for more in range(it + 1, max_iter + 1):
        nxt = invert(eye - tail.up @ z - tail.stay) @ tail.down
        diff = float(np.max(np.abs(nxt - z)))
        z = nxt
        if diff <= tol:
            return z, {"method": "functional", "iterations": more,
                       "residual": _down_residual(tail, z)}
    raise NoConvergenceError(
        f"downward exit fixed point stalled (last step {diff:.3e})",
        estimate=z, iterations=max_iter, residual=_down_residual(tail, z))


def exit_up_tail(tail, tol=DEFAULT_TOL, max_iter=FIXED_POINT_BUDGET, start=None):
    """Stochastic upward exit matrix of a constant tail.

    Projected functional iteration from a stochastic seed. If it stalls,
    the reduction solver for the mirrored equation is tried; its minimal
    root is accepted only when it is itself (near-)stochastic, which is
    exactly the regime (non-positive-recurrent) where the minimal and
    stochastic roots coincide. Returns (matrix, info dict).
    """
    d = tail.d
    eye = np.eye(d)
    z = np.full((d, d), 1.0 / d) if start is None else np.asarray(start, dtype=float)

    def step(cur):
        return _stochastic_projection(invert(eye - tail.down @ cur - tail.stay) @ tail.up)

    warmup = min(FUNCTIONAL_WARMUP, max_iter)
    diff = math.inf
    for it in range(1, warmup + 1):
        nxt = step(z)
        diff = float(np.max(np.abs(nxt - z)))
        z = nxt
        if diff <= tol:
            return z, {"method": "functional", "iterations": it}
    try:
        root, sweeps = _lr_minimal_root(tail.up, tail.stay, tail.down, tol=tol)
        sums = root.sum(axis=1)
        if float(np.min(sums)) >= 1.0 - 1e-6:
            root = root / sums[:, None]
            # a couple of polish steps to pull the projected root tight
            for _ in range(3):
                root = step(root)
            return root, {"method": "reduction", "sweeps": sweeps}
    except NoConvergenceError:
        pass
    for it in range(warmup + 1, max_iter + 1):
        nxt = step(z)
        diff = float(np.max(np.abs(nxt - z)))
        z = nxt
        if diff <= tol:
            return z, {"method": "functional", "iterations": it}
    raise NoConvergenceError(
        f"upward exit fixed point stalled (last step {diff:.3e})",
        estimate=z, iterations=max_iter)


def exit_down_seq(model, n_max=None, tol=DEFAULT_TOL, seed=None, max_doublings=16):
    """Downward exit matrices for levels 1..max(n_max, prefix+1).

    Backward recursion anchored at a level ``a`` inside the constant tail,
    seeded there with ``seed`` (default: the tail's minimal downward exit
    matrix). ``a`` starts at prefix+16 and doubles until the level-1 answer
    moves by less than ``tol``. Returns (list indexed by level with [0]
    unused, info dict).
    """
    n_pref = model.n_prefix
    depth = max(n_max if n_max is not None else n_pref + 1, n_pref + 1)
    eye = np.eye(model.d)
    if seed is None:
        seed_mat, tail_info = exit_down_tail(model.tail, tol=tol)
    else:
        seed_mat = np.asarray(seed, dtype=float)
        tail_info = {"method": "caller-seed"}
    anchor = max(n_pref + 16, depth + 1)
    prev_first = None
    for attempt in range(max_doublings):
        store = [None] * (depth + 1)
        z = seed_mat
        for lev in range(anchor - 1, 0, -1):
            t = model.block_at(lev)
            z = invert(eye - t.up @ z - t.stay) @ t.down
            if lev <= depth:
                store[lev] = z
        delta = math.inf if prev_first is None else float(np.max(np.abs(store[1] - prev_first)))
        if delta < tol:
            return store, {"anchor": anchor, "passes": attempt + 1,
                           "delta": delta, "tail": tail_info}
        prev_first = store[1]
        anchor *= 2
    raise NoConvergenceError(
        f"backward recursion did not settle by anchor {anchor // 2}",
        estimate=prev_first, iterations=max_doublings)


@dataclass
class BranchingData:
    """Per-level exit, offspring, sojourn, and fundamental matrices.

    Lists are indexed by level; index 0 of the downward lists is unused.
    Levels beyond the stored depth are served by the tail fields (the
    recursion is constant there). Upward-tail data is computed lazily via
    tail_up() because only the boundary-visit certificates need it.
    """

    model: object
    depth: int
    exit_up: list
    exit_down: list
    offspring_up: list
    sojourn_up: list
    offspring_down: list
    sojourn_down: list
    fundamental_down: list
    tail_exit_down: np.ndarray
    tail_fundamental_down: np.ndarray
    tail_offspring_down: np.ndarray
    tail_sojourn_down: np.ndarray
    radius_down: float
    meta: dict = field(default_factory=dict)
    _tail_up: tuple = None

    def exit_down_at(self, n):
        if n <= self.depth:
            return self.exit_down[n]
        return self.tail_exit_down

    def offspring_down_at(self, n):
        if n <= self.depth:
            return self.offspring_down[n]
        return self.tail_offspring_down

    def sojourn_down_at(self, n):
        if n <= self.depth:
            return self.sojourn_down[n]
        return self.tail_sojourn_down

    def fundamental_down_at(self, n):
        if n <= self.depth:
            return self.fundamental_down[n]
        return self.tail_fundamental_down

    def tail_up(self, tol=DEFAULT_TOL):
        """(exit matrix, offspring matrix, spectral radius) of the upward tail."""
        if self._tail_up is None:
            tail = self.model.tail
            z, info = exit_up_tail(tail, tol=tol)
            factor = invert(np.eye(tail.d) - tail.down @ z - tail.stay)
            a = factor @ tail.down
            self._tail_up = (z, a, spectral_radius(a), info)
        return self._tail_up


def branching_data(model, n_max=None, tol=DEFAULT_TOL):
    """Build BranchingData for levels up to max(n_max, prefix+1)."""
    if isinstance(model, CallbackModel):
        raise ValueError("level-map models have no limiting tail; "
                         "branching data requires a prefix+tail model")
    n_pref = model.n_prefix
    depth = max(n_max if n_max is not None else n_pref + 1, n_pref + 1)
    d = model.d
    eye = np.eye(d)
    ones = np.ones(d)

    exit_down, down_info = exit_down_seq(model, n_max=depth, tol=tol)
    tail_exit, tail_info = exit_down_tail(model.tail, tol=tol)
    tail_fund = invert(eye - model.tail.up @ tail_exit - model.tail.stay)
    tail_A = tail_fund @ model.tail.up
    tail_u = tail_fund @ ones

    exit_up = exit_up_seq(model, depth)
    offspring_up = [None]
    sojourn_up = [ones.copy()]
    for n in range(1, depth + 1):
        t = model.block_at(n)
        factor = invert(eye - t.down @ exit_up[n - 1] - t.stay)
        offspring_up.append(factor @ t.down)
        sojourn_up.append(factor @ ones)

    offspring_down = [None]
    sojourn_down = [None]
    fundamental_down = [None]
    for n in range(1, depth + 1):
        t = model.block_at(n)
        z_next = exit_down[n + 1] if n + 1 <= depth else tail_exit
        factor = invert(eye - t.up @ z_next - t.stay)
        fundamental_down.append(factor)
        offspring_down.append(factor @ t.up)
        sojourn_down.append(factor @ ones)

    return BranchingData(
        model=model,
        depth=depth,
        exit_up=exit_up,
        exit_down=exit_down,
        offspring_up=offspring_up,
        sojourn_up=sojourn_up,
        offspring_down=offspring_down,
        sojourn_down=sojourn_down,
        fundamental_down=fundamental_down,
        tail_exit_down=tail_exit,
        tail_fundamental_down=tail_fund,
        tail_offspring_down=tail_A,
        tail_sojourn_down=tail_u,
        radius_down=spectral_radius(tail_A),
        meta={"tail": tail_info, "backward": down_info, "tol": tol},
    )


@dataclass
class SeriesValue:
    """Outcome of summing a weighted branching series.

    status: "finite" (value is the certified sum), "infinite" (value is
    inf), or "inconclusive" (value is the partial sum at the horizon).
    """

    status: str
    value: float
    last_level: int
    note: str = ""

    @property
    def finite(self):
        return self.status == "finite"


def series_down_weighted(model, data, weight, start=1, horizon=SERIES_HORIZON):
    r"""Sum of weight @ (offspring_down products) @ sojourn_down over levels.

    Computes sum_{k >= start} w A^-_{start} ... A^-_{k-1} u^-_k for a
    nonnegative row vector w. Terms through the prefix are accumulated
    directly; in the constant tail the remainder has the closed form
    w A (I-A)^{-1} u whenever the tail radius is below 1 - 1e-10, which
    certifies it exactly. Otherwise divergence is certified by terms
    staying above 1e-12 for 100 consecutive levels (or partial sums
    overflowing 1e15) while the radius is >= 1 - 1e-10; anything else is
    inconclusive at the horizon.
    """
    w = np.asarray(weight, dtype=float).copy()
    if np.any(w < 0):
        raise ValueError("series weights must be nonnegative")
    n_pref = model.n_prefix
    total = 0.0
    k = start
    while k <= n_pref:
        total += float(w @ data.sojourn_down_at(k))
        w = w @ data.offspring_down_at(k)
        k += 1
    a_t = data.tail_offspring_down
    u_t = data.tail_sojourn_down
    if data.radius_down < 1.0 - RADIUS_MARGIN:
        remainder = float(w @ invert(np.eye(model.d) - a_t) @ u_t)
        return SeriesValue("finite", total + remainder, k,
                           note="tail summed in closed form")
    streak = 0
    for lev in range(k, horizon + 1):
        term = float(w @ u_t)
        total += term
        if term >= DIVERGENCE_FLOOR:
            streak += 1
            if streak >= DIVERGENCE_WINDOW:
                return SeriesValue("infinite", math.inf, lev,
                                   note="nonvanishing terms at critical tail radius")
        else:
            streak = 0
        if not math.isfinite(total) or total > OVERFLOW_CAP:
            return SeriesValue("infinite", math.inf, lev, note="partial sums overflowed")
        if float(np.max(np.abs(w))) < 1e-250:
            return SeriesValue("finite", total, lev, note="weights vanished")
        w = w @ a_t
    return SeriesValue("inconclusive", total, horizon,
                       note="horizon exhausted without certificate")


@dataclass
class BoundaryVisits:
    """Expected total visits to layer 0, with convergence certificates.

    status "convergent" means value is the (finite) expected visit count;
    "divergent" means the walk is recurrent by the visit criterion;
    "inconclusive" carries the partial sum.
    """

    status: str
    value: float
    terms: list
    partial_sums: list
    horizon: int
    radius_up: float = None
    note: str = ""


def expected_boundary_visits(model, mu=None, horizon=SERIES_HORIZON, data=None,
                             tol=DEFAULT_TOL):
    """Expected number of layer-0 visits for a walk started on layer 0 at mu.

    Term k is mu_k A^+_k ... A^+_1 1 with mu_k the phase distribution upon
    first reaching layer k (term 0 is 1). The series is finite exactly when
    the walk is transient. Certificates come from the upward tail radius:
    convergence needs radius < 1 - 1e-10 and three consecutive terms below
    1e-14; divergence needs radius >= 1 - 1e-10 and 100 consecutive terms
    above 1e-12 (or overflow past 1e15).
    """
    d = model.d
    if mu is None:
        mu = np.full(d, 1.0 / d)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (d,) or np.any(mu < -1e-12) or abs(float(mu.sum()) - 1.0) > 1e-9:
        raise NotStochasticError("mu must be a probability vector over phases")
    eye = np.eye(d)
    z_prev = data.exit_up[0] if data is not None else boundary_exit_up(model)
    has_tail = getattr(model, "tail", None) is not None
    w = np.ones(d)
    m = mu.astype(float).copy()
    terms = [float(m @ w)]
    partial_sums = [terms[0]]
    total = terms[0]
    radius_up = None
    radius_failed = False
    small_streak = 0
    big_streak = 0
    n_pref = model.n_prefix
    for k in range(1, horizon + 1):
        t = model.block_at(k)
        factor = invert(eye - t.down @ z_prev - t.stay)
        a_k = factor @ t.down
        z_k = _stochastic_projection(factor @ t.up)
        m = m @ z_prev
        w = a_k @ w
        term = float(m @ w)
        terms.append(term)
        total += term
        partial_sums.append(total)
        if has_tail and k > n_pref and radius_up is None and not radius_failed:
            try:
                if data is not None:
                    radius_up = data.tail_up(tol)[2]
                else:
                    z_fix, _ = exit_up_tail(model.tail, tol=tol)
                    a_fix = invert(eye - model.tail.down @ z_fix - model.tail.stay) @ model.tail.down
                    radius_up = spectral_radius(a_fix)
            except NoConvergenceError:
                radius_failed = True
        if radius_up is not None:
            if radius_up < 1.0 - RADIUS_MARGIN:
                small_streak = small_streak + 1 if term <= 1e-14 else 0
                if small_streak >= 3:
                    return BoundaryVisits("convergent", total, terms, partial_sums,
                                          k, radius_up)
            else:
                big_streak = big_streak + 1 if term >= DIVERGENCE_FLOOR else 0
                if big_streak >= DIVERGENCE_WINDOW:
                    return BoundaryVisits("divergent", math.inf, terms, partial_sums,
                                          k, radius_up)
        if not math.isfinite(total) or total > OVERFLOW_CAP:
            if radius_up is not None and radius_up >= 1.0 - RADIUS_MARGIN:
                return BoundaryVisits("divergent", math.inf, terms, partial_sums,
                                      k, radius_up, note="partial sums overflowed")
            return BoundaryVisits("inconclusive", total, terms, partial_sums, k,
                                  radius_up, note="partial sums overflowed without a certificate")
        z_prev = z_k
    return BoundaryVisits("inconclusive", total, terms, partial_sums, horizon,
                          radius_up, note="horizon exhausted without certificate")


def offspring_pmf_ascent(model, data, n, phase, count):
    """P(a step into (n, phase) during an upward passage begets ``count``
    down-steps). Matrix-geometric in the count."""
    if not 1 <= n <= data.depth:
        raise ValueError("offspring levels run from 1 to the stored depth")
    if count < 0:
        raise ValueError("count must be >= 0")
    if not 0 <= phase < model.d:
        raise ValueError(f"phase must be in [0, {model.d})")
    t = model.block_at(n)
    d = model.d
    base = invert(np.eye(d) - t.stay)
    kernel = base @ t.down @ data.exit_up[n - 1]
    row = np.zeros(d)
    row[phase] = 1.0
    for _ in range(count):
        row = row @ kernel
    return float(row @ (base @ t.up) @ np.ones(d))


def offspring_pmf_descent(model, data, n, phase, count):
    """P(a step into (n, phase) during a downward passage begets ``count``
    up-steps). Mirror of the ascent pmf."""
    if n < 1:
        raise ValueError("offspring levels start at 1")
    if count < 0:
        raise ValueError("count must be >= 0")
    if not 0 <= phase < model.d:
        raise ValueError(f"phase must be in [0, {model.d})")
    t = model.block_at(n)
    d = model.d
    base = invert(np.eye(d) - t.stay)
    kernel = base @ t.up @ data.exit_down_at(n + 1)
    row = np.zeros(d)
    row[phase] = 1.0
    for _ in range(count):
        row = row @ kernel
    return float(row @ (base @ t.down) @ np.ones(d))


def expected_visits_ascent(model, data, k, mu, n):
    """Expected visits per phase to layer n (0 <= n <= k) before the walk,
    started on layer k at mu, first reaches layer k+1.

    Layer 0 visits include the dwell inside the boundary stay block.
    """
    if not 0 <= n <= k:
        raise ValueError("need 0 <= n <= k")
    if k > data.depth:
        raise ValueError("branching data too shallow for this start layer")
    w = np.asarray(mu, dtype=float).copy()
    for j in range(k, max(n, 0), -1):
        w = w @ data.offspring_up[j]
    if n == 0:
        return w @ invert(np.eye(model.d) - model.r0)
    t = model.block_at(n)
    factor = invert(np.eye(model.d) - t.down @ data.exit_up[n - 1] - t.stay)
    return w @ factor


def expected_visits_descent(model, data, k, mu, n):
    """Expected visits per phase to layer n (n >= k+1) before the walk,
    started on layer k >= 1 at mu, first reaches layer k-1."""
    if k < 1 or n < k + 1:
        raise ValueError("need k >= 1 and n >= k+1")
    w = np.asarray(mu, dtype=float).copy()
    for j in range(k, n):
        w = w @ data.offspring_down_at(j)
    return w @ data.fundamental_down_at(n)
