"""Command-line entry point.

Subcommands wire the solver modules end to end on problems stored as
JSON files.  Exit codes: 0 success, 1 usage error, 2 validation or
structural failure (the invariant report is printed), 3 numerical
failure (flow divergence, fatal fit degeneracy).  All failures also emit
a machine-readable JSON object on stderr.  Primary JSON outputs are
deterministic byte-for-byte given identical inputs; CSV floats print in
shortest round-trip form.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import model, riccati, stability, static_opt, workflow

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; remap to 1."""

    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, detail: str, payload: dict = None) -> None:
    record = {"schema_version": SCHEMA_VERSION, "error": kind, "detail": detail}
    if payload:
        record.update(payload)
    print(json.dumps(record), file=sys.stderr)


def _print_json(payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    print(json.dumps(payload, indent=2))


def _parse_x0(text: str, n: int) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        vec = np.array([float(p) for p in parts])
    except ValueError as err:
        raise UsageError(f"could not parse --x0 {text!r}: {err}") from None
    if vec.shape != (n,):
        raise UsageError(f"--x0 must supply {n} numbers, got {len(vec)}")
    return vec


def _load(path: str) -> model.LQProblem:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise UsageError(f"cannot read problem file {path!r}: {err}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise model.DimensionError(f"problem file {path!r} is not valid JSON: {err}")
    return model.LQProblem.from_dict(data)


def _load_valid(path: str):
    """Parse, validate, and reduce; validation failure is terminal."""
    problem = _load(path)
    report = model.validate(problem)
    if not report.ok:
        _emit_error("validation", "problem violates invariants",
                    {"report": report.to_dict()})
        print(json.dumps({"schema_version": SCHEMA_VERSION,
                          "validation": report.to_dict()}, indent=2))
        raise SystemExit(EXIT_VALIDATION)
    return problem, model.reduce_problem(problem)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _mat_labels(prefix: str, shape) -> list:
    r, c = shape
    return [f"{prefix}_{i}{j}" for i in range(r) for j in range(c)]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_check_stability(args) -> int:
    problem, reduced = _load_valid(args.problem)
    if args.closed_loop:
        are = riccati.solve_are(reduced, h=args.h)
        A = reduced.Ahat + reduced.B @ are.theta
        C = reduced.Chat + reduced.D @ are.theta
        mode = "closed-loop"
    else:
        A, C = problem.A, problem.C
        mode = "open-loop"
    report = stability.is_ms_stable(A, C)
    _print_json({"mode": mode, **report.to_dict()})
    return EXIT_OK


def _cmd_solve_are(args) -> int:
    _, reduced = _load_valid(args.problem)
    are = riccati.solve_are(reduced, h=args.h, tol=args.tol)
    payload = are.to_dict()
    try:
        fit = riccati.measure_decay_rate(are.sigma, are.P)
        payload["rate"] = {"amplitude": fit.amplitude, "rate": fit.rate,
                           "window": list(fit.window), "n_points": fit.n_points}
    except ValueError as err:
        payload["rate"] = None
        payload["rate_note"] = str(err)
    _print_json(payload)
    return EXIT_OK


def _cmd_static(args) -> int:
    _, reduced = _load_valid(args.problem)
    are = riccati.solve_are(reduced, h=args.h)
    comparison = static_opt.static_divergence_report(reduced, are)
    _print_json(comparison.to_dict())
    return EXIT_OK


def _cmd_riccati(args) -> int:
    _, reduced = _load_valid(args.problem)
    pt = riccati.finite_horizon_riccati(reduced, args.T, args.h)
    gains = riccati.gain_schedule(reduced, pt)
    phi = riccati.phi_value_ode(reduced, pt, gains=gains)
    header = (["t"] + _mat_labels("P", pt.values.shape[1:])
              + _mat_labels("K", gains.values.shape[1:])
              + [f"phi_{i}" for i in range(reduced.n)])
    rows = (
        [t] + list(P.ravel()) + list(K.ravel()) + list(f)
        for t, P, K, f in zip(pt.grid, pt.values, gains.values, phi.values)
    )
    _write_csv(args.out, header, rows)
    _print_json({"written": args.out, "rows": len(pt.grid),
                 "T": args.T, "h": pt.step})
    return EXIT_OK


def _cmd_value(args) -> int:
    _, reduced = _load_valid(args.problem)
    x0 = _parse_x0(args.x0, reduced.n)
    hs = workflow.solve_horizon(reduced, args.T, h=args.h)
    v = hs.value(x0)
    _print_json({"T": args.T, "x0": x0.tolist(), "V_T": v, "V_T_over_T": v / args.T})
    return EXIT_OK


def _cmd_simulate(args) -> int:
    _, reduced = _load_valid(args.problem)
    x0 = _parse_x0(args.x0, reduced.n)
    hs = workflow.solve_horizon(reduced, args.T, h=args.h)
    mean = hs.mean(x0)
    ensemble = hs.monte_carlo(x0, args.paths, args.seed)
    header = (["t"]
              + [f"EX_{i}" for i in range(reduced.n)]
              + [f"Eu_{j}" for j in range(reduced.m)]
              + [f"EY_{i}" for i in range(reduced.n)]
              + [f"mc_EX_{i}" for i in range(reduced.n)]
              + [f"mc_se_{i}" for i in range(reduced.n)])
    rows = (
        [t] + list(ex) + list(eu) + list(ey) + list(mx) + list(ms)
        for t, ex, eu, ey, mx, ms in zip(mean.grid, mean.EX, mean.Eu, mean.EY,
                                         ensemble.mean_X, ensemble.se_X)
    )
    _write_csv(args.out, header, rows)
    _print_json({
        "written": args.out, "T": args.T, "h": hs.pt.step,
        "paths": args.paths, "seed": args.seed,
        "flagged_paths": ensemble.n_flagged,
        "mc_cost": ensemble.mean_cost, "mc_cost_se": ensemble.se_cost,
        "value_function": hs.value(x0),
    })
    return EXIT_OK


def _cmd_turnpike(args) -> int:
    _, reduced = _load_valid(args.problem)
    x0 = _parse_x0(args.x0, reduced.n)
    T_list = args.T or [20.0]
    study = workflow.turnpike_study(reduced, x0, T_list, h=args.h,
                                    delta=args.delta, with_integral_ms=True)
    values = {"runs": study.to_dict()}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, **values}, fh, indent=2)
        fh.write("\n")

    csv_path = args.out + ".csv" if not args.out.endswith(".json") \
        else args.out[:-5] + ".csv"
    rows = []
    for mean, fit in zip(study.means, study.fits):
        dev = mean.turnpike_deviation()
        rows.extend([fit.T, t, d] for t, d in zip(mean.grid, dev))
    _write_csv(csv_path, ["T", "t", "deviation"], rows)

    _print_json({"written": [args.out, csv_path],
                 "fits": [f.to_dict() for f in study.fits],
                 "value_average": study.value_average.to_dict()})
    if any(f.degenerate for f in study.fits):
        return EXIT_OK        # degenerate fit is reported, not fatal
    return EXIT_OK


def _cmd_examples(args) -> int:
    checks = []

    def record(name, ok, got, want):
        checks.append((name, bool(ok), got, want))

    # First bundled instance: stationary solve, operating point, naive gap.
    r1 = model.reduce_problem(model.example_problem(1))
    are1 = riccati.solve_are(r1, h=2e-3)
    st1 = static_opt.solve_static(r1, are1)
    cmp1 = static_opt.static_divergence_report(r1, are1)
    record("example-1 stationary P", abs(are1.P[0, 0] - 2.0) < 1e-8,
           are1.P[0, 0], 2.0)
    record("example-1 gain", abs(are1.theta[0, 0] + 2.0) < 1e-8,
           are1.theta[0, 0], -2.0)
    record("example-1 x*", abs(st1.x_star[0] + 0.5) < 1e-10, st1.x_star[0], -0.5)
    record("example-1 u*", abs(st1.u_star[0]) < 1e-10, st1.u_star[0], 0.0)
    record("example-1 naive point", cmp1.naive.feasible
           and abs(cmp1.naive.x[0]) < 1e-10 and abs(cmp1.naive.u[0]) < 1e-10,
           None if not cmp1.naive.feasible else (cmp1.naive.x[0], cmp1.naive.u[0]),
           (0.0, 0.0))
    record("example-1 naive disagrees", cmp1.agrees is False, cmp1.agrees, False)

    # Second bundled instance: irrational stationary solution, infeasible
    # naive problem.
    r2 = model.reduce_problem(model.example_problem(2))
    are2 = riccati.solve_are(r2, h=2e-3)
    st2 = static_opt.solve_static(r2, are2)
    naive2 = static_opt.solve_naive_static(r2)
    p_expect = 2.0 + np.sqrt(5.0)
    record("example-2 stationary P", abs(are2.P[0, 0] - p_expect) < 1e-8,
           are2.P[0, 0], p_expect)
    record("example-2 naive infeasible", not naive2.feasible, naive2.status,
           "infeasible")
    record("example-2 x*", abs(st2.x_star[0] + 0.5) < 1e-9, st2.x_star[0], -0.5)
    record("example-2 u*", abs(st2.u_star[0] + 0.5) < 1e-9, st2.u_star[0], -0.5)
    record("example-2 KKT residual", st2.stationarity_residual <= 1e-10,
           st2.stationarity_residual, "<=1e-10")

    width = max(len(name) for name, *_ in checks)
    all_ok = True
    for name, ok, got, want in checks:
        all_ok &= ok
        status = "pass" if ok else "FAIL"
        detail = "" if ok else f"   (got {got!r}, want {want!r})"
        print(f"{name:<{width}}  {status}{detail}")
    print(f"{'overall':<{width}}  {'pass' if all_ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slq-turnpike",
                     description="Stochastic LQ control: stationary solves, "
                                 "finite horizons, and turnpike certificates.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_problem(p):
        p.add_argument("--problem", required=True, help="problem JSON file")

    p = sub.add_parser("check-stability", help="mean-square stability report")
    add_problem(p)
    p.add_argument("--closed-loop", action="store_true",
                   help="test the loop closed by the stationary gain")
    p.add_argument("--h", type=float, default=1e-3, help="integrator step")
    p.set_defaults(func=_cmd_check_stability)

    p = sub.add_parser("solve-are", help="stationary Riccati solve")
    add_problem(p)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-9,
                   help="flow stall tolerance before Newton polish")
    p.set_defaults(func=_cmd_solve_are)

    p = sub.add_parser("static", help="stationary optimization problem "
                                      "and its naive variant")
    add_problem(p)
    p.add_argument("--h", type=float, default=1e-3)
    p.set_defaults(func=_cmd_static)

    p = sub.add_parser("riccati", help="finite-horizon Riccati path to CSV")
    add_problem(p)
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=_cmd_riccati)

    p = sub.add_parser("value", help="finite-horizon optimal value")
    add_problem(p)
    p.add_argument("--x0", required=True, help="initial state, e.g. '1.0' or '1,0'")
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.set_defaults(func=_cmd_value)

    p = sub.add_parser("simulate", help="closed-loop means plus Monte Carlo "
                                        "cross-check to CSV")
    add_problem(p)
    p.add_argument("--x0", required=True)
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("turnpike", help="multi-horizon turnpike certificate")
    add_problem(p)
    p.add_argument("--x0", required=True)
    p.add_argument("--T", type=float, action="append",
                   help="horizon; repeat for several (default 20)")
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--out", required=True, help="JSON report path "
                                                "(a companion CSV is written)")
    p.set_defaults(func=_cmd_turnpike)

    p = sub.add_parser("examples", help="run the bundled demo instances "
                                        "end to end and print a pass/fail table")
    p.set_defaults(func=_cmd_examples)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        _emit_error("usage", str(err))
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as err:
        _emit_error("usage", str(err))
        return EXIT_USAGE
    except SystemExit as err:
        return int(err.code)
    except model.DimensionError as err:
        _emit_error("structural", str(err))
        return EXIT_VALIDATION
    except model.InvalidProblemError as err:
        _emit_error("validation", str(err), {"report": err.report.to_dict()})
        return EXIT_VALIDATION
    except (riccati.FlowDivergence, riccati.ConvergenceBudgetError) as err:
        _emit_error("numerical", str(err))
        return EXIT_NUMERICAL
    except (RuntimeError, ValueError) as err:
        _emit_error("numerical", str(err))
        return EXIT_NUMERICAL


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
