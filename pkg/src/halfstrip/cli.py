"""Command-line interface: model files in, reports out.

Subcommands: classify, stationary, decay, simulate, verify, example.
Reports are JSON objects with a stable field set {command, inputs,
results, checks, version}; identical inputs produce byte-identical output
(no timestamps, sorted keys, seeded randomness only). The example
subcommand prints a bare model file instead of a report so it can be
piped straight into the other commands.

Exit codes: 0 success; 1 malformed input or usage; 2 model validation
failure; 3 precondition failure (e.g. stationary distribution of a
non-positive-recurrent walk); 4 inconclusive classification; 5 verify ran
but at least one check failed.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from .branching import branching_data, boundary_exit_up
from .classify import INCONCLUSIVE, classify
from .linalg import (
    NoConvergenceError,
    NotStochasticError,
    ReducibleChainError,
    SingularMatrixError,
)
from .model import (
    GammaTooSmallError,
    ModelFormatError,
    RetrySchedule,
    build_retrial,
    model_from_dict,
    model_to_dict,
    uniformize,
    validate,
)
from .oracle import (
    ExitConfig,
    MaxStepsExceededError,
    SimConfig,
    cell_deviations,
    estimate_exit_probability,
    simulate,
    truncated_solve,
)
from .stationary import (
    NotPositiveRecurrentError,
    TailNotPositiveRecurrentError,
    balance_residual,
    decay_rate,
    matrix_product_check,
    result_to_csv,
    result_to_dict,
    stationary_dist,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_PRECONDITION = 3
EXIT_INCONCLUSIVE = 4
EXIT_CHECKS_FAILED = 5


class _CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse uses exit status 2 for usage errors, which collides with the
    # validation-failure code; remap to 1
    def error(self, message):
        raise _CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


def _plain(obj):
    """Recursively convert to JSON-safe primitives; non-finite floats become
    strings so the output stays strict JSON."""
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return _plain(obj.item())
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        return obj
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _dump_json(payload):
    return json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n"


def _write_output(text, out_path):
    if out_path and out_path != "-":
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_model(path):
    try:
        if path == "-":
            data = json.load(sys.stdin)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise _CliError(EXIT_USAGE, f"model input is not valid JSON: {exc}")
    except OSError as exc:
        raise _CliError(EXIT_USAGE, f"cannot read model file: {exc}")
    try:
        model = model_from_dict(data)
    except (ModelFormatError, GammaTooSmallError) as exc:
        raise _CliError(EXIT_USAGE, f"model file malformed: {exc}")
    report = validate(model)
    if not report.ok:
        lines = "; ".join(f"{v.code} at {v.where}: {v.detail}" for v in report.errors)
        raise _CliError(EXIT_INVALID, f"model failed validation: {lines}")
    return model, report


def _parse_mu(text, d):
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        mu = np.array([float(p) for p in parts])
    except ValueError:
        raise _CliError(EXIT_USAGE, f"cannot parse phase distribution {text!r}")
    if mu.shape != (d,):
        raise _CliError(EXIT_USAGE, f"phase distribution needs {d} entries")
    return mu


def _report(command, inputs, results, checks):
    return {
        "command": command,
        "inputs": inputs,
        "results": results,
        "checks": checks,
        "version": __version__,
    }


def _fmt(x, digits=6):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.{digits}g}"
    return str(x)


def _emit(report, args, pretty_lines):
    fmt = args.format
    if fmt == "pretty":
        _write_output("".join(line + "\n" for line in pretty_lines), args.output)
    else:
        _write_output(_dump_json(report), args.output)


# ---------------------------------------------------------------- classify


def _cmd_classify(args):
    model, _ = _load_model(args.model)
    mu = _parse_mu(args.mu, model.d) if args.mu else None
    res = classify(model, mu=mu, horizon=args.horizon, tol=args.tol)
    results = {
        "verdict": res.verdict,
        "certificate": res.certificate,
        "return_time_bound": res.return_bound,
        "boundary_visits": res.boundary_visits,
        "tail_radius_up": res.tail_radius_up,
        "tail_radius_down": res.tail_radius_down,
        "return_time": res.return_time,
        "horizon": res.horizon,
        "visit_partial_sums_last": res.visit_partial_sums[-1] if res.visit_partial_sums else None,
    }
    report = _report("classify", _inputs(args, ["model", "tol", "horizon", "mu"]),
                     results, [])
    lines = [
        f"verdict: {res.verdict}",
        f"certificate: {res.certificate}",
        f"return-time bound: {_fmt(res.return_bound)}",
        f"boundary visits: {_fmt(res.boundary_visits)}",
        f"tail radius up: {_fmt(res.tail_radius_up) if res.tail_radius_up is not None else 'not computed'}",
        f"tail radius down: {_fmt(res.tail_radius_down) if res.tail_radius_down is not None else 'not computed'}",
    ]
    if res.return_time is not None:
        lines.append(f"expected return time (given mu): {_fmt(res.return_time)}")
    _emit(report, args, lines)
    return EXIT_INCONCLUSIVE if res.verdict == INCONCLUSIVE else EXIT_OK


# --------------------------------------------------------------- stationary


def _stationary_with_checks(model, levels, tol):
    depth = max(model.n_prefix + 1, (levels or 0) + 1)
    data = branching_data(model, n_max=depth, tol=tol)
    result = stationary_dist(model, data=data, levels=levels, tol=tol)
    deeper = branching_data(model, n_max=max(result.levels + 1, depth), tol=tol) \
        if result.levels + 1 > depth else data
    checks = [
        {
            "name": "matrix-product-form",
            "measured": matrix_product_check(model, deeper, result),
            "tolerance": 1e-10,
        },
        {
            "name": "global-balance-residual",
            "measured": balance_residual(model, result),
            "tolerance": 1e-8,
        },
    ]
    for c in checks:
        c["status"] = "pass" if c["measured"] <= c["tolerance"] else "fail"
    return data, result, checks


def _cmd_stationary(args):
    model, _ = _load_model(args.model)
    _, result, checks = _stationary_with_checks(model, args.levels, args.tol)
    results = result_to_dict(result)
    report = _report("stationary", _inputs(args, ["model", "tol", "levels"]),
                     results, checks)
    if args.format == "csv":
        _write_output(result_to_csv(result), args.output)
        return EXIT_OK
    lines = [
        f"levels computed: 0..{result.levels}",
        f"normalizer (expected return time): {_fmt(result.normalizer, 10)}",
        f"captured mass: {_fmt(result.mass, 10)}",
        f"decay rate: {_fmt(result.decay_rate)}",
        "boundary measure: " + " ".join(_fmt(float(x), 10) for x in result.boundary_measure),
        "layer masses (first 10): "
        + " ".join(_fmt(float(r.sum()), 6) for r in result.nu[:10]),
    ]
    for c in checks:
        lines.append(f"check {c['name']}: {c['status']} "
                     f"(measured {_fmt(c['measured'], 3)}, tolerance {_fmt(c['tolerance'], 3)})")
    _emit(report, args, lines)
    return EXIT_OK if all(c["status"] == "pass" for c in checks) else EXIT_CHECKS_FAILED


# -------------------------------------------------------------------- decay


def _cmd_decay(args):
    model, _ = _load_model(args.model)
    rep = decay_rate(model, levels=args.levels, tol=args.tol)
    results = {
        "rate": rep.rate,
        "log_rate": math.log(rep.rate) if rep.rate > 0 else "-Infinity",
        "empirical": rep.empirical,
        "empirical_levels": rep.levels,
    }
    report = _report("decay", _inputs(args, ["model", "tol", "levels"]), results, [])
    lines = [f"decay rate: {_fmt(rep.rate)}",
             f"log decay rate: {_fmt(math.log(rep.rate)) if rep.rate > 0 else '-inf'}"]
    for j, (emp, lev) in enumerate(zip(rep.empirical, rep.levels)):
        lines.append(f"empirical log-rate, phase {j} (level {lev}): {_fmt(emp)}")
    _emit(report, args, lines)
    return EXIT_OK


# ----------------------------------------------------------------- simulate


def _cmd_simulate(args):
    model, _ = _load_model(args.model)
    cfg = SimConfig(seed=args.seed, cycles=args.cycles, max_steps=args.max_steps,
                    replications=args.replications)
    stats = simulate(model, config=cfg)
    results = stats.to_dict()
    report = _report("simulate",
                     _inputs(args, ["model", "seed", "cycles", "max_steps",
                                    "replications"]),
                     results, [])
    lines = [
        f"cycles completed: {stats.cycles} (discarded {stats.discarded})",
        f"total steps: {stats.total_steps}",
        f"mean return time: {_fmt(stats.mean_return_time, 8)} "
        f"+/- {_fmt(stats.return_time_se, 3)} (s.e.)",
        f"max level visited: {stats.max_level}",
        "layer-0 arrival frequencies: "
        + " ".join(_fmt(float(x), 6) for x in stats.exit_frequencies),
    ]
    _emit(report, args, lines)
    return EXIT_OK


# ------------------------------------------------------------------- verify


def _visit_bursts(model, data, top_level):
    """Per-level variance inflation for visit-count comparisons: one
    excursion that reaches a level contributes a burst of visits there, so
    the per-cycle count is overdispersed relative to binomial by roughly
    the expected burst length. Bounded here by the level's downward sojourn
    (boundary: the stay-block dwell)."""
    from .linalg import invert

    rows = []
    dwell0 = invert(np.eye(model.d) - model.r0) @ np.ones(model.d)
    rows.append(1.0 + 2.0 * float(dwell0.max()))
    for n in range(1, top_level + 1):
        rows.append(1.0 + 2.0 * float(np.max(data.sojourn_down_at(n))))
    return np.asarray(rows)[:, None]


def _check(name, measured, tolerance, context=None):
    entry = {
        "name": name,
        "measured": measured,
        "tolerance": tolerance,
        "status": "pass" if measured <= tolerance else "fail",
    }
    if context:
        entry["context"] = context
    return entry


def _cmd_verify(args):
    model, _ = _load_model(args.model)
    tol = args.tol
    checks = []
    res = classify(model, horizon=args.horizon, tol=tol)
    results = {"verdict": res.verdict, "certificate": res.certificate}
    if res.verdict != "positive-recurrent":
        report = _report("verify",
                         _inputs(args, ["model", "seed", "cycles", "levels",
                                        "tol", "horizon", "samples"]),
                         results,
                         [_check("classification-certified",
                                 0.0 if res.verdict != INCONCLUSIVE else 1.0, 0.5,
                                 context={"verdict": res.verdict})])
        _emit(report, args, _verify_lines(report))
        if res.verdict == INCONCLUSIVE:
            return EXIT_INCONCLUSIVE
        return EXIT_OK

    depth = max(model.n_prefix + 1, 2)
    data = branching_data(model, n_max=depth, tol=tol)
    result = stationary_dist(model, data=data, levels=args.levels, tol=tol)
    full_depth = max(result.levels + 1, depth)
    data = branching_data(model, n_max=full_depth, tol=tol)

    # analytic self-consistency
    sums = np.abs(np.stack([z.sum(axis=1) for z in data.exit_up]) - 1.0)
    checks.append(_check("ascent-exit-stochastic", float(sums.max()), 1e-9))
    checks.append(_check("matrix-product-form",
                         matrix_product_check(model, data, result), 1e-10))
    checks.append(_check("global-balance-residual",
                         balance_residual(model, result), 1e-8))
    kac = abs(1.0 / result.normalizer - float(result.nu[0].sum()))
    checks.append(_check("return-time-reciprocal-is-boundary-mass", kac, 1e-8))

    # oracle 1: truncated dense solve
    cutoff = max(args.levels or 0, min(result.levels + 20, 400), 10)
    trunc = truncated_solve(model, cutoff)
    rows = trunc.level_rows()
    span = min(result.levels, cutoff // 2)
    l1 = sum(float(np.sum(np.abs(rows[n] - result.nu[n]))) for n in range(span + 1))
    checks.append(_check("stationary-vs-truncated-solve", l1, 1e-7,
                         context={"levels_compared": span, "cutoff": cutoff}))

    # oracle 2: seeded simulation
    cfg = SimConfig(seed=args.seed, cycles=args.cycles)
    stats = simulate(model, config=cfg)
    results["simulated_cycles"] = stats.cycles

    span2 = min(stats.max_level, result.levels, 20)
    ref_visits = np.stack([result.nu[n] * result.normalizer
                           for n in range(span2 + 1)])
    bursts = _visit_bursts(model, data, span2)
    viol, compared, skipped = cell_deviations(
        ref_visits, stats.visit_counts[:span2 + 1], stats.visit_se[:span2 + 1],
        stats.cycles, bursts=bursts)
    checks.append(_check("visits-per-cycle-vs-simulation", viol, 1.0,
                         context={"levels_compared": span2, "cells": compared,
                                  "cells_skipped_rare": skipped,
                                  "unit": "deviation / (3 s.e.)"}))

    rt_se = max(stats.return_time_se, 1.0 / stats.cycles)
    rt_dev = abs(stats.mean_return_time - result.normalizer) / (3.0 * rt_se)
    checks.append(_check("return-time-vs-simulation", rt_dev, 1.0,
                         context={"unit": "deviation / (3 s.e.)"}))

    mu0 = result.boundary_measure
    bm_viol, _, bm_skipped = cell_deviations(
        mu0, stats.exit_frequencies, stats.exit_frequency_se, stats.cycles)
    checks.append(_check("boundary-measure-vs-simulation", bm_viol, 1.0,
                         context={"cells_skipped_rare": bm_skipped,
                                  "unit": "deviation / (3 s.e.)"}))

    ecfg = ExitConfig(seed=args.seed, samples=args.samples)
    est_up = estimate_exit_probability(model, 0, "up", ecfg)
    zu = boundary_exit_up(model)
    up_viol, _, up_skipped = cell_deviations(zu, est_up.matrix, est_up.se,
                                             ecfg.samples)
    checks.append(_check("boundary-exit-vs-simulation", up_viol, 1.0,
                         context={"cells_skipped_rare": up_skipped,
                                  "unit": "deviation / (3 s.e.)"}))

    lev_dn = model.n_prefix + 1
    est_dn = estimate_exit_probability(model, lev_dn, "down", ecfg)
    zd = data.exit_down_at(lev_dn)
    dn_viol, _, dn_skipped = cell_deviations(zd, est_dn.matrix, est_dn.se,
                                             ecfg.samples)
    checks.append(_check("descent-exit-vs-simulation", dn_viol, 1.0,
                         context={"level": lev_dn,
                                  "cells_skipped_rare": dn_skipped,
                                  "unit": "deviation / (3 s.e.)"}))

    results.update({
        "normalizer": result.normalizer,
        "decay_rate": result.decay_rate,
        "levels": result.levels,
        "mass": result.mass,
        "checks_passed": sum(1 for c in checks if c["status"] == "pass"),
        "checks_total": len(checks),
    })
    report = _report("verify",
                     _inputs(args, ["model", "seed", "cycles", "levels", "tol",
                                    "horizon", "samples"]),
                     results, checks)
    _emit(report, args, _verify_lines(report))
    return EXIT_OK if all(c["status"] == "pass" for c in checks) else EXIT_CHECKS_FAILED


def _verify_lines(report):
    lines = [f"verdict: {report['results'].get('verdict', '?')}"]
    for c in report["checks"]:
        lines.append(
            f"check {c['name']}: {c['status']} "
            f"(measured {_fmt(float(c['measured']), 4)}, "
            f"tolerance {_fmt(float(c['tolerance']), 4)})")
    return lines


# ------------------------------------------------------------------ example


def _cmd_example(args):
    if args.kind != "retrial":
        raise _CliError(EXIT_USAGE, f"unknown example kind {args.kind!r}")
    try:
        schedule = RetrySchedule.parse(args.theta)
    except (ModelFormatError, ValueError) as exc:
        raise _CliError(EXIT_USAGE, f"bad retry schedule: {exc}")
    gen = build_retrial(args.arrival, args.service, args.servers, schedule,
                        prefix_levels=args.prefix_levels)
    try:
        chain = uniformize(gen, gamma=args.gamma)
    except GammaTooSmallError as exc:
        raise _CliError(EXIT_PRECONDITION, str(exc))
    _write_output(_dump_json(model_to_dict(chain)), args.output)
    return EXIT_OK


# ------------------------------------------------------------------ plumbing


def _inputs(args, names):
    out = {}
    for name in names:
        val = getattr(args, name, None)
        out[name] = val
    return out


def _add_common(p, with_model=True):
    if with_model:
        p.add_argument("model", nargs="?", default="-",
                       help="model JSON file ('-' or omitted reads stdin)")
    p.add_argument("--tol", type=float, default=1e-12,
                   help="fixed-point tolerance (default 1e-12)")
    p.add_argument("-o", "--output", default=None,
                   help="write output to this path instead of stdout")


def build_parser():
    parser = _Parser(prog="halfstrip",
                     description="State-dependent reflecting random walks on a "
                                 "half-strip: classification, stationary "
                                 "distribution, decay rate, and verification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("classify", help="certified recurrence classification",
                       parents=[], add_help=True)
    _add_common(p)
    p.add_argument("--horizon", type=int, default=10_000,
                   help="series horizon (default 10000)")
    p.add_argument("--mu", default=None,
                   help="layer-0 phase distribution, comma separated")
    p.add_argument("--format", choices=["pretty", "json"], default="pretty")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("stationary", help="explicit stationary distribution")
    _add_common(p)
    p.add_argument("--levels", type=int, default=None,
                   help="highest level to report (default: mass-driven)")
    p.add_argument("--format", choices=["pretty", "json", "csv"], default="pretty")
    p.set_defaults(func=_cmd_stationary)

    p = sub.add_parser("decay", help="geometric decay rate of the tail")
    _add_common(p)
    p.add_argument("--levels", type=int, default=None,
                   help="levels for the empirical estimates (default: mass-driven)")
    p.add_argument("--format", choices=["pretty", "json"], default="pretty")
    p.set_defaults(func=_cmd_decay)

    p = sub.add_parser("simulate", help="seeded Monte Carlo cycle statistics")
    _add_common(p)
    p.add_argument("--seed", type=int, required=True, help="stream seed (required)")
    p.add_argument("--cycles", type=int, default=100_000,
                   help="total regeneration cycles (default 100000)")
    p.add_argument("--max-steps", type=int, default=10**8, dest="max_steps",
                   help="per-cycle and per-replication step cap")
    p.add_argument("--replications", type=int, default=64,
                   help="independent streams (default 64)")
    p.add_argument("--format", choices=["pretty", "json"], default="pretty")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("verify",
                       help="cross-check analytics against both oracles")
    _add_common(p)
    p.add_argument("--seed", type=int, required=True, help="stream seed (required)")
    p.add_argument("--cycles", type=int, default=100_000,
                   help="simulation cycles (default 100000)")
    p.add_argument("--levels", type=int, default=None,
                   help="stationary truncation (default: mass-driven)")
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--samples", type=int, default=10_000,
                   help="exit-probability sample size per phase")
    p.add_argument("--format", choices=["json", "pretty"], default="json")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("example", help="emit a generated model file")
    p.add_argument("kind", choices=["retrial"],
                   help="model family (retrial: M/M/c queue with retries)")
    p.add_argument("--lambda", dest="arrival", type=float, required=True,
                   help="arrival rate")
    p.add_argument("--mu", dest="service", type=float, required=True,
                   help="per-server service rate")
    p.add_argument("--c", dest="servers", type=int, required=True,
                   help="number of servers")
    p.add_argument("--theta", required=True,
                   help="retry rate: constant, 'a+b/n', or a JSON table path")
    p.add_argument("--gamma", type=float, default=None,
                   help="uniformization rate (default: model maximum)")
    p.add_argument("--prefix-levels", dest="prefix_levels", type=int, default=None,
                   help="explicit level-dependent prefix length")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_example)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.error("a subcommand is required")
        return args.func(args)
    except _CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except (NotPositiveRecurrentError, TailNotPositiveRecurrentError,
            MaxStepsExceededError, NoConvergenceError, GammaTooSmallError,
            ReducibleChainError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ModelFormatError, NotStochasticError, SingularMatrixError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
