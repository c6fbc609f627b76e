"""Ground-truth oracles: a truncated linear solve and a seeded simulator.

Both are independent of the branching-structure machinery on purpose.
The truncated solve censors the strip at a cutoff level and solves the
global balance equations dense; the simulator runs the walk itself with a
counter-based generator, one stream per replication, so every estimate is
reproducible bit for bit. Tests and the verify command compare analytic
results against both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import stationary_left_vector

MAX_DENSE_STATES = 6000
UNIFORM_BLOCK = 8192


class MaxStepsExceededError(Exception):
    """Every cycle in a simulation run blew past the step cap, so no
    statistics could be formed. Per-cycle overruns are merely discarded
    and counted; this error means nothing was left."""


@dataclass
class TruncatedSolution:
    """Stationary vector of the strip censored at level ``cutoff``.

    pi is flat over (cutoff+1)*d states, level-major. The top level's up
    block is folded into its stay block (censor-style repair), which keeps
    the matrix stochastic and converges fastest for geometric tails.
    """

    cutoff: int
    d: int
    pi: np.ndarray
    augmentation: str
    residual: float

    def level_rows(self):
        return [self.pi[n * self.d:(n + 1) * self.d] for n in range(self.cutoff + 1)]

    def to_dict(self):
        return {
            "cutoff": self.cutoff,
            "d": self.d,
            "augmentation": self.augmentation,
            "residual": self.residual,
            "pi": [[float(x) for x in row] for row in self.level_rows()],
        }


def truncated_solve(model, cutoff):
    """Dense stationary solve of the strip truncated at ``cutoff`` >= 2.

    Refuses state spaces too large to solve dense; use a smaller cutoff
    (the tail is geometric, so moderate cutoffs already agree with the
    closed form to full tolerance).
    """
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    d = model.d
    n_states = (cutoff + 1) * d
    if n_states > MAX_DENSE_STATES:
        raise ValueError(
            f"{n_states} states is too large for a dense solve; lower the "
            f"cutoff below {MAX_DENSE_STATES // d} levels")
    t = np.zeros((n_states, n_states))
    t[0:d, 0:d] = model.r0
    t[0:d, d:2 * d] = model.p0
    for n in range(1, cutoff + 1):
        blk = model.block_at(n)
        lo = n * d
        t[lo:lo + d, lo - d:lo] = blk.down
        if n < cutoff:
            t[lo:lo + d, lo:lo + d] = blk.stay
            t[lo:lo + d, lo + d:lo + 2 * d] = blk.up
        else:
            t[lo:lo + d, lo:lo + d] = blk.stay + blk.up
    pi = stationary_left_vector(t, row_tol=1e-8)
    residual = float(np.sum(np.abs(pi @ t - pi)))
    return TruncatedSolution(cutoff=cutoff, d=d, pi=pi,
                             augmentation="fold-top-up-into-stay",
                             residual=residual)


@dataclass
class SimConfig:
    """Simulation run parameters. ``cycles`` is the total target across all
    replications; each replication gets its own derived stream."""

    seed: int
    cycles: int = 10_000
    max_steps: int = 10**8
    replications: int = 64


@dataclass
class SimStats:
    """Cycle statistics of a simulated walk.

    Cycles regenerate at every arrival on layer 0. visit_counts[l, p] is
    the mean number of steps per cycle spent in state (l, p); dividing by
    the mean cycle length gives empirical_distribution, the long-run
    occupation frequencies. exit_frequencies is the empirical distribution
    of the arrival phase on layer 0 (estimates the censored boundary
    measure). Standard errors come from per-replication means.
    """

    seed: int
    replications: int
    cycles: int
    discarded: int
    total_steps: int
    mean_return_time: float
    return_time_se: float
    visit_counts: np.ndarray
    visit_se: np.ndarray
    empirical_distribution: np.ndarray
    exit_frequencies: np.ndarray
    exit_frequency_se: np.ndarray
    max_level: int
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "seed": self.seed,
            "replications": self.replications,
            "cycles": self.cycles,
            "discarded": self.discarded,
            "total_steps": self.total_steps,
            "mean_return_time": self.mean_return_time,
            "return_time_se": self.return_time_se,
            "max_level": self.max_level,
            "visit_counts": [[float(x) for x in row] for row in self.visit_counts],
            "visit_se": [[float(x) for x in row] for row in self.visit_se],
            "empirical_distribution": [[float(x) for x in row]
                                       for row in self.empirical_distribution],
            "exit_frequencies": [float(x) for x in self.exit_frequencies],
            "exit_frequency_se": [float(x) for x in self.exit_frequency_se],
        }


def _rep_streams(seed, count, prefix=()):
    root = np.random.SeedSequence(entropy=seed, spawn_key=tuple(prefix))
    return [np.random.Generator(np.random.Philox(child))
            for child in root.spawn(count)]


class _StepTable:
    """Growable per-level cumulative sampling table.

    Row (level, phase) holds the cumulative probabilities of the 3d
    outcomes [down phases | stay phases | up phases]; level 0 has zero
    mass on the down block. The final entry is forced to 1 so a uniform
    in [0,1) always lands."""

    def __init__(self, model):
        self.model = model
        self.d = model.d
        d = model.d
        row0 = np.zeros((d, 3 * d))
        row0[:, d:2 * d] = model.r0
        row0[:, 2 * d:] = model.p0
        self.cum = np.cumsum(row0, axis=1)[None, :, :]
        self.cum[..., -1] = 1.0

    def ensure(self, top_level):
        have = self.cum.shape[0]
        if top_level < have:
            return
        d = self.d
        new = []
        for lev in range(have, top_level + 1):
            blk = self.model.block_at(lev)
            row = np.concatenate([blk.down, blk.stay, blk.up], axis=1)
            row = np.cumsum(row, axis=1)
            row[:, -1] = 1.0
            new.append(row)
        self.cum = np.concatenate([self.cum, np.stack(new)], axis=0)

    def sample(self, level, phase, u):
        rows = self.cum[level, phase]
        k = (rows < u[:, None]).sum(axis=1)
        direction = k // self.d - 1
        return direction, k % self.d


def simulate(model, start=None, config=None):
    """Run the walk and gather regenerative cycle statistics.

    ``start`` is (level, phase distribution); default is layer 0 with the
    uniform phase mix. The walk runs until each replication has completed
    its share of config.cycles cycles (a cycle ends at each arrival on
    layer 0). Starting above layer 0 prepends a warmup segment that is not
    counted. Cycles longer than config.max_steps are discarded and
    counted, with the walker restarted on layer 0 at its cycle-start
    phase; each replication also retires after 2 * max_steps total steps
    (room for one restart) so runs on non-recurrent models terminate. If
    nothing completes, MaxStepsExceededError is raised. Deterministic
    given (model, start, config).
    """
    if config is None:
        raise ValueError("a SimConfig with an explicit seed is required")
    d = model.d
    if start is None:
        start = (0, np.full(d, 1.0 / d))
    start_level, start_dist = start
    start_dist = np.asarray(start_dist, dtype=float)
    reps = max(1, min(config.replications, config.cycles))
    per_rep = -(-config.cycles // reps)
    gens = _rep_streams(config.seed, reps)

    table = _StepTable(model)
    levels_cap = max(start_level + 2, 8)
    table.ensure(levels_cap)

    level = np.full(reps, start_level, dtype=np.int64)
    cum_start = np.cumsum(start_dist)
    cum_start[-1] = 1.0
    first_u = np.array([g.random() for g in gens])
    phase = (cum_start[None, :] < first_u[:, None]).sum(axis=1).astype(np.int64)

    pending = np.zeros((reps, levels_cap + 1, d))
    committed = np.zeros((reps, levels_cap + 1, d))
    arrival_counts = np.zeros((reps, d))
    in_cycle = np.full(reps, start_level == 0)
    cycle_start_phase = phase.copy()
    cyc_len = np.zeros(reps, dtype=np.int64)
    rep_steps = np.zeros(reps, dtype=np.int64)
    completed = np.zeros(reps, dtype=np.int64)
    discarded = np.zeros(reps, dtype=np.int64)
    sum_len = np.zeros(reps, dtype=np.int64)
    if start_level == 0:
        arrival_counts[np.arange(reps), phase] += 1

    buf = np.empty((reps, 0))
    ptr = 0
    active = (completed < per_rep) & (rep_steps < 2 * config.max_steps)
    while np.any(active):
        if ptr >= buf.shape[1]:
            buf = np.stack([g.random(UNIFORM_BLOCK) for g in gens])
            ptr = 0
        u = buf[:, ptr]
        ptr += 1

        act = np.flatnonzero(active)
        lev_a = level[act]
        ph_a = phase[act]
        pending[act, lev_a, ph_a] += 1
        direction, new_phase = table.sample(lev_a, ph_a, u[act])
        new_level = lev_a + direction

        level[act] = new_level
        phase[act] = new_phase
        cyc_len[act] += 1
        rep_steps[act] += 1

        top = int(new_level.max())
        if top + 1 >= pending.shape[1]:
            grow = top + 8
            pad = grow - pending.shape[1] + 1
            pending = np.pad(pending, ((0, 0), (0, pad), (0, 0)))
            committed = np.pad(committed, ((0, 0), (0, pad), (0, 0)))
            table.ensure(grow)
        else:
            table.ensure(top)

        # a cycle that crosses the cap on its closing step is still overlong
        over_mask = cyc_len[act] > config.max_steps
        arrived = act[(new_level == 0) & ~over_mask]
        if arrived.size:
            closing = arrived[in_cycle[arrived]]
            if closing.size:
                committed[closing] += pending[closing]
                sum_len[closing] += cyc_len[closing]
                completed[closing] += 1
            in_cycle[arrived] = True
            pending[arrived] = 0.0
            cyc_len[arrived] = 0
            cycle_start_phase[arrived] = phase[arrived]
            arrival_counts[arrived, phase[arrived]] += 1
        overlong = act[over_mask]
        if overlong.size:
            # restart, but do not record a teleport as an arrival
            discarded[overlong] += 1
            pending[overlong] = 0.0
            cyc_len[overlong] = 0
            level[overlong] = 0
            phase[overlong] = cycle_start_phase[overlong]
            in_cycle[overlong] = True
        active = (completed < per_rep) & (rep_steps < 2 * config.max_steps)

    total_cycles = int(completed.sum())
    if total_cycles == 0:
        raise MaxStepsExceededError(
            "no cycle completed within the step cap; the walk may not be "
            "recurrent or max_steps is too small")
    total_steps = int(sum_len.sum())
    mean_rt = total_steps / total_cycles
    rep_means = sum_len / np.maximum(completed, 1)
    if reps > 1:
        rt_se = float(np.std(rep_means[completed > 0], ddof=1)
                      / math.sqrt(int((completed > 0).sum())))
    else:
        rt_se = math.nan

    visit_total = committed.sum(axis=0)
    visit_mean = visit_total / total_cycles
    rep_visit_means = committed / np.maximum(completed, 1)[:, None, None]
    if reps > 1:
        visit_se = np.std(rep_visit_means, axis=0, ddof=1) / math.sqrt(reps)
    else:
        visit_se = np.full_like(visit_mean, math.nan)
    occupancy = visit_total / total_steps

    # arrival at the start of each completed cycle estimates the censored
    # boundary measure; the trailing arrival of the final cycle is included
    arr_total = arrival_counts.sum(axis=0)
    exit_freq = arr_total / arr_total.sum()
    rep_arr = arrival_counts / np.maximum(arrival_counts.sum(axis=1), 1)[:, None]
    if reps > 1:
        exit_se = np.std(rep_arr, axis=0, ddof=1) / math.sqrt(reps)
    else:
        exit_se = np.full(d, math.nan)

    top_used = int(np.max(np.nonzero(visit_total.sum(axis=1))[0])) if visit_total.any() else 0
    return SimStats(
        seed=config.seed,
        replications=reps,
        cycles=total_cycles,
        discarded=int(discarded.sum()),
        total_steps=total_steps,
        mean_return_time=float(mean_rt),
        return_time_se=rt_se,
        visit_counts=visit_mean[:top_used + 1],
        visit_se=visit_se[:top_used + 1],
        empirical_distribution=occupancy[:top_used + 1],
        exit_frequencies=exit_freq,
        exit_frequency_se=exit_se,
        max_level=top_used,
        meta={"per_replication_cycles": per_rep,
              "requested_cycles": config.cycles},
    )


def cell_deviations(reference, observed, se, samples, bursts=None, min_events=16.0):
    """Worst per-cell deviation between an estimate and its reference, in
    units of 3 standard errors.

    Visits to a rare state arrive in bursts (one excursion yields several
    visits), so for cells that few excursions reach, the replication-based
    standard error is itself noisy. Cells whose expected event count
    (reference * samples) is positive but below ``min_events`` are
    therefore skipped, and the rest get an error floor
    sqrt(reference * burst / samples) - a binomial bound inflated by the
    expected burst size - plus an absolute floor of 1/samples. Cells with
    reference exactly 0 are always compared (structural zeros must stay
    zero). Returns (worst deviation / 3 s.e., compared count, skipped count).
    """
    ref = np.asarray(reference, dtype=float)
    got = np.asarray(observed, dtype=float)
    sed = np.asarray(se, dtype=float)
    if bursts is None:
        bursts = np.ones_like(ref)
    else:
        bursts = np.broadcast_to(np.asarray(bursts, dtype=float), ref.shape)
    worst = 0.0
    compared = 0
    skipped = 0
    for idx in np.ndindex(ref.shape):
        events = ref[idx] * samples
        if 0.0 < events < min_events:
            skipped += 1
            continue
        floor = math.sqrt(max(ref[idx], 0.0) * bursts[idx] / samples)
        se_hat = sed[idx] if math.isfinite(sed[idx]) else 0.0
        se_eff = max(se_hat, floor, 1.0 / samples)
        worst = max(worst, abs(got[idx] - ref[idx]) / (3.0 * se_eff))
        compared += 1
    return worst, compared, skipped


@dataclass
class ExitConfig:
    """Exit-probability estimation parameters; ``samples`` is the number of
    walks started per phase."""

    seed: int
    samples: int = 10_000
    max_steps: int = 10**6


@dataclass
class ExitEstimate:
    """Empirical first-passage phase distribution with binomial errors.

    matrix[i, j] estimates the probability that a walk from (level, i)
    first enters the neighbor level at phase j; rows can sum below 1 if
    some walks never crossed within the step cap (counted in censored).
    """

    level: int
    direction: str
    matrix: np.ndarray
    se: np.ndarray
    samples: int
    censored: np.ndarray

    def to_dict(self):
        return {
            "level": self.level,
            "direction": self.direction,
            "samples": self.samples,
            "matrix": [[float(x) for x in row] for row in self.matrix],
            "se": [[float(x) for x in row] for row in self.se],
            "censored": [int(x) for x in self.censored],
        }


def estimate_exit_probability(model, level, direction, config):
    """Monte Carlo estimate of an exit-probability matrix.

    direction "up" records the phase of first entry into level+1 (the walk
    reflects at 0 as usual); "down" records first entry into level-1 and
    needs level >= 1. Streams are keyed by (seed, start phase), so the
    estimate is deterministic given the config.
    """
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    if direction == "down" and level < 1:
        raise ValueError("downward exit needs level >= 1")
    d = model.d
    target = level + 1 if direction == "up" else level - 1
    table = _StepTable(model)
    table.ensure(max(level + 2, 8))
    gens = _rep_streams(config.seed, d,
                        prefix=(int(level), 0 if direction == "up" else 1))
    counts = np.zeros((d, d), dtype=np.int64)
    censored = np.zeros(d, dtype=np.int64)
    for start_phase in range(d):
        gen = gens[start_phase]
        lev = np.full(config.samples, level, dtype=np.int64)
        ph = np.full(config.samples, start_phase, dtype=np.int64)
        steps = 0
        while lev.size and steps < config.max_steps:
            u = gen.random(lev.size)
            dirn, newp = table.sample(lev, ph, u)
            lev = lev + dirn
            ph = newp
            top = int(lev.max())
            table.ensure(top)
            done = lev == target
            if np.any(done):
                np.add.at(counts[start_phase], ph[done], 1)
                keep = ~done
                lev = lev[keep]
                ph = ph[keep]
            steps += 1
        censored[start_phase] = lev.size
    p_hat = counts / config.samples
    se = np.sqrt(p_hat * (1.0 - p_hat) / config.samples)
    return ExitEstimate(level=level, direction=direction, matrix=p_hat,
                        se=se, samples=config.samples, censored=censored)
