"""Command-line front end.

Every subcommand prints a JSON report to stdout and, with ``--out``, also
writes ``report.json`` and its CSV data files there.  Exit codes: 0 for a
passing or valid result, 1 for a failing or invalid one, 2 for a refusal or
a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import global_iss, local_stability as ls, oracle
from .dynamics import Gains, LoopState, check_conditions
from .errors import PistabError, RefusalError, ScenarioFileError
from .roots import bisect
from .scenarios import EXAMPLES, dump_scenario_file, example, load_scenario_file
from .sim import DisturbanceSequence, convergence_metric, detect_saturation, rollout_full

EXIT_PASS, EXIT_FAIL, EXIT_REFUSED = 0, 1, 2
CONDITION_LABELS = {"complex": "I", "real": "II", "unstable": None}
PROPS = {"21": "linearized", "22": "gain_matched"}
# (s, k2) window that contains the whole stability triangle
TRIANGLE_S = (-2.0, 1.0)
TRIANGLE_K2 = (0.0, 3.0)


class UsageError(Exception):
    pass


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f + 0.0 if math.isfinite(f) else str(f)
    return obj


def write_csv(path: Path, header, columns) -> None:
    """Comma-separated columns with a header row, numbers at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in zip(*columns):
            out.writerow(_cell(v) for v in row)


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return v


def read_column(path, dtype=float) -> np.ndarray:
    """Read a single-column CSV, skipping a non-numeric header line."""
    values = []
    with open(path, newline="") as fh:
        for n, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                values.append(dtype(float(row[0])))
            except ValueError:
                if n == 0:
                    continue
                raise UsageError(f"{path}: line {n + 1}: not a number: {row[0]!r}") from None
    if not values:
        raise UsageError(f"{path}: no values")
    return np.asarray(values, dtype=dtype)


# --- loading ---------------------------------------------------------------

def _load(args):
    if getattr(args, "scenario", None):
        sf = load_scenario_file(args.scenario)
    elif getattr(args, "example", None):
        sf = example(args.example)
    else:
        raise UsageError("give --scenario FILE or --example ID")
    if getattr(args, "k1", None) is not None or getattr(args, "k2", None) is not None:
        k1 = sf.gains.k1 if args.k1 is None else args.k1
        k2 = sf.gains.k2 if args.k2 is None else args.k2
        sf = type(sf)(sf.scenario, sf.model, Gains(k1, k2), sf.h2)
    return sf


def _outdir(args):
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- report builders ---------------------------------------------------------

def _local_report(sf):
    rows = []
    for d, member in enumerate(sf.model.members):
        fp = float(member.slope(sf.scenario.x_star))
        v = ls.local_verdict(fp, sf.gains)
        rows.append({
            "member": d, "fprime": fp, "b": v.b, "c": v.c, "stable": v.stable, "branch": v.branch,
            "condition": CONDITION_LABELS[v.branch], "triangle_margins": list(v.triangle),
        })
    return {"members": rows, "stable": all(r["stable"] for r in rows)}


def _certificate_report(cert):
    return {
        "kind": cert.kind, "F": cert.F, "g": cert.g, "M": cert.M, "L": cert.L, "eta": cert.eta,
        "rho": cert.rho, "rho_terms": list(cert.rho_terms), "effective_L": cert.effective_L,
        "lambda_contraction": cert.lambda_contraction, "M_interval_at_effective_L": list(cert.M_interval),
    }


def _build_certificate(sf, kind):
    maker = ls.linearized_certificate if kind == "linearized" else ls.gain_matched_certificate
    return maker(sf.model, sf.scenario, sf.gains)


def _iss_report(sf, grid_n):
    rep = global_iss.h2_verify(sf.model, sf.scenario, sf.gains, sf.h2, grid_n)
    cert = global_iss.iss_certificate(sf.gains, sf.h2, sf.scenario)
    margins = {
        k: {"worst": m.worst, "refined_worst": m.refined_worst, "member": m.d, "x": m.x, "passed": m.passed}
        for k, m in rep.margins.items()
    }
    return rep, cert, {
        "h2": {"passed": rep.passed, "grid_n": rep.grid_n, "margins": margins, "disagreements": rep.disagreements},
        "certificate": {
            "lambda": cert.lam, "gamma": cert.gamma, "saturation_margin": cert.margin,
            "rate_condition": {"lhs": cert.rate_condition[0], "rhs": cert.rate_condition[1],
                               "passed": cert.rate_condition[2]},
            "weight_condition": {"lower": cert.weight_condition[0], "M": cert.weight_condition[1],
                                 "upper": cert.weight_condition[2], "passed": cert.weight_condition[3]},
            "violations": cert.violations, "notes": cert.notes, "valid": cert.valid,
        },
    }


def _roots_rows(roots):
    return [{"member": r.d, "root": r.root, "bracket": list(r.bracket), "residual": r.residual} for r in roots]


def _necessary_report(sf, tol):
    rep = global_iss.necessary_conditions(sf.model, sf.scenario, sf.gains, tol=tol)
    witnesses = [
        {"member": r.d, "y": r.root, "fixed_point_residual":
            global_iss.spurious_equilibrium_residual(sf.scenario, sf.model, sf.gains, r)}
        for r in rep.spurious_roots(sf.scenario.x_star)
    ]
    return rep, {
        "k2_positive": rep.k2_positive,
        "upper_roots": _roots_rows(rep.upper_roots), "upper_verdict": rep.upper_verdict,
        "lower_roots": _roots_rows(rep.lower_roots), "lower_verdict": rep.lower_verdict,
        "spurious_equilibria": witnesses, "tangency_warnings": rep.tangencies,
        "global_iss_possible": rep.global_iss_possible,
        "verdict": "global ISS possible" if rep.global_iss_possible else "global ISS impossible",
    }


def _write_boundaries(path, certs):
    xs, ws, labels = [], [], []
    for cert in certs:
        px, pw = ls.roa_boundary(cert)
        xs.append(px)
        ws.append(pw)
        labels.extend([cert.kind] * px.size)
    write_csv(path, ["certificate", "x", "w"], [labels, np.concatenate(xs), np.concatenate(ws)])


def _write_envelope(path, sf, n=2001):
    env = global_iss.h2_envelope(sf.model, sf.scenario, sf.gains, sf.h2, n)
    members = range(len(sf.model))
    header = ["x", "lower", "upper"] + [f"f{d}" for d in members] + [f"margin{d}" for d in members]
    write_csv(path, header, [env[k] for k in header])
    return env


def _triangle(sf, resolution):
    fp = float(sf.model.members[0].slope(sf.scenario.x_star))
    return ls.gain_triangle_map(fp, TRIANGLE_S, TRIANGLE_K2, resolution)


def _write_triangle(path, tm):
    write_csv(path, ["s", "k2", "k1", "stable", "branch", "linearized_applicable"],
              [a.ravel() for a in (tm.s, tm.k2, tm.k1, tm.stable, tm.branch, tm.linearized_applicable)])
    return tm


# --- subcommands -------------------------------------------------------------

def cmd_check(args):
    sf = _load(args)
    rep = check_conditions(sf.scenario, sf.model, max(args.grid_n, 2))
    report = {
        "outflow_bound": rep.outflow_bound_ok, "equilibrium": rep.equilibrium_ok,
        "capacity_condition": rep.capacity_ok, "problems": rep.problems, "ok": rep.ok,
    }
    return (EXIT_PASS if rep.ok else EXIT_FAIL), report, {}


def cmd_local(args):
    report = _local_report(_load(args))
    return (EXIT_PASS if report["stable"] else EXIT_FAIL), report, {}


def cmd_roa(args):
    sf = _load(args)
    kinds = list(PROPS.values()) if args.prop == "both" else [PROPS[args.prop]]
    certs = [_build_certificate(sf, k) for k in kinds]
    report = {"certificates": [_certificate_report(c) for c in certs]}
    if len(certs) == 1:
        report["rho"] = certs[0].rho
    writers = {"roa_boundaries.csv": lambda p: _write_boundaries(p, certs)}
    if args.brute_force:
        s = sf.scenario
        grid = oracle.brute_force_roa(s, sf.model, sf.gains, (0.0, 2 * s.x_star), (s.b_min, s.b_max),
                                      args.grid_n, args.grid_n, args.horizon, args.tol)
        X, W = grid.mesh()
        inside = {c.kind: ls.in_roa(c, X, W) for c in certs}
        report["brute_force"] = {
            "counts": grid.counts(), "horizon": grid.T, "tol": grid.tol,
            "inside_not_converged": {k: int(np.sum(m & (grid.verdict != oracle.CONVERGED))) for k, m in inside.items()},
        }
        labels = np.array(oracle.VERDICTS, dtype=object)[grid.verdict.ravel()]
        writers["roa_grid.csv"] = lambda p: write_csv(p, ["x", "w", "verdict", "steps"],
                                                      [X.ravel(), W.ravel(), labels, grid.steps.ravel()])
    return EXIT_PASS, report, writers


def cmd_iss(args):
    sf = _load(args)
    if sf.h2 is None:
        raise UsageError("scenario has no h2 section")
    rep, cert, report = _iss_report(sf, args.grid_n)
    ok = rep.passed and cert.valid
    report["verdict"] = "global ISS certified" if ok else "not certified"
    writers = {"h2_envelope.csv": lambda p: _write_envelope(p, sf)}
    return (EXIT_PASS if ok else EXIT_FAIL), report, writers


def cmd_necessary(args):
    sf = _load(args)
    rep, report = _necessary_report(sf, args.tol)
    rows = [("upper", r) for r in rep.upper_roots] + [("lower", r) for r in rep.lower_roots]
    writers = {"roots.csv": lambda p: write_csv(
        p, ["equation", "member", "root", "bracket_lo", "bracket_hi", "residual"],
        list(zip(*[(k, r.d, r.root, r.bracket[0], r.bracket[1], r.residual) for k, r in rows])) or [[]] * 6)}
    return (EXIT_PASS if rep.global_iss_possible else EXIT_FAIL), report, writers


def cmd_simulate(args):
    sf = _load(args)
    s = sf.scenario
    v = read_column(args.v_seq) if args.v_seq else np.array([s.v_star])
    d = read_column(args.d_seq, int) if args.d_seq else np.array([0])
    initial = LoopState(
        s.x_star if args.x0 is None else args.x0,
        (s.x_star if args.x0 is None else args.x0) if args.y0 is None else args.y0,
        s.u_star if args.w0 is None else args.w0,
    )
    traj = rollout_full(s, sf.model, sf.gains, initial, DisturbanceSequence(d, v), args.horizon)
    report = {
        "horizon": traj.horizon, "initial": list(initial), "final": traj.states[-1].tolist(),
        "final_window_max_deviation": convergence_metric(traj, s.x_star),
        "saturation_detected": detect_saturation(traj, s.a),
    }
    t = np.arange(traj.horizon + 1)
    u = np.concatenate([[np.nan], traj.applied_u])
    writers = {"trajectory.csv": lambda p: write_csv(p, ["t", "x", "y", "w", "u"],
                                                     [t, *traj.states.T, u])}
    return EXIT_PASS, report, writers


def cmd_sweep(args):
    sf = _load(args)
    fp = float(sf.model.members[0].slope(sf.scenario.x_star))
    tm = ls.gain_triangle_map(fp, TRIANGLE_S, TRIANGLE_K2, args.grid_n)
    report = {
        "fprime": fp, "resolution": args.grid_n, "stable_fraction": float(tm.stable.mean()),
        "linearized_applicable_fraction": float(tm.linearized_applicable.mean()),
    }
    return EXIT_PASS, report, {"gain_triangle.csv": lambda p: _write_triangle(p, tm)}


def cmd_reproduce(args):
    if args.example_id not in EXAMPLES:
        raise UsageError(f"unknown example {args.example_id!r}; choose from {sorted(EXAMPLES)}")
    if not args.out:
        raise UsageError("reproduce needs --out DIR")
    sf = example(args.example_id)
    s = sf.scenario
    cond = check_conditions(s, sf.model)
    certs = [_build_certificate(sf, k) for k in PROPS.values()]
    summary = {
        "example": args.example_id,
        "conditions_ok": cond.ok, "capacity_condition": cond.capacity_ok,
        "local": _local_report(sf),
        "certificates": [_certificate_report(c) for c in certs],
    }
    fig_roa = "fig3_roa_boundaries.csv" if args.example_id == "4.1" else "fig5_roa_boundaries.csv"
    writers = {
        "scenario.json": lambda p: dump_scenario_file(sf, p),
        "fig1_triangle.csv": lambda p: _write_triangle(p, _triangle(sf, min(args.grid_n, 201))),
        fig_roa: lambda p: _write_boundaries(p, certs),
    }
    _, necessary = _necessary_report(sf, args.tol)
    summary["necessary"] = necessary
    ok = cond.ok
    if sf.h2 is not None:
        rep, cert, iss = _iss_report(sf, args.grid_n)
        env = global_iss.h2_envelope(sf.model, s, sf.gains, sf.h2)
        iss["envelope_min_margin"] = float(min(env[f"margin{d}"].min() for d in range(len(sf.model))))
        summary["iss"] = iss
        summary["verdict"] = "global exponential stability certified" if rep.passed and cert.valid else "not certified"
        ok = ok and rep.passed and cert.valid
        writers["fig2_envelope.csv"] = lambda p: _write_envelope(p, sf)
    else:
        gm = certs[1]
        lo = [r for r in necessary["lower_roots"] if r["root"] > s.x_star]
        summary["verdict"] = "local stabilization only; global ISS impossible"
        summary["rho_below_spurious_gap"] = {
            "rho": gm.rho, "gap": min(r["root"] for r in lo) - s.x_star if lo else None,
        }
        if lo:
            y_star = bisect(lambda y: float(sf.model.value(0, y)) - min(s.b_min + s.v_star, s.a - y),
                            *lo[0]["bracket"], tol=0.0)
            grid = oracle.brute_force_roa(s, sf.model, sf.gains, (0.0, 2 * s.x_star), (s.b_min, s.b_max),
                                          200, 200, args.horizon, 1e-6, anchor=(y_star, s.b_min))
            X, W = grid.mesh()
            i, j = grid.nearest(y_star, s.b_min)
            summary["brute_force"] = {
                "counts": grid.counts(), "spurious_cell_verdict": grid.label(i, j),
                "inside_not_converged": {c.kind: int(np.sum(ls.in_roa(c, X, W) & (grid.verdict != oracle.CONVERGED)))
                                         for c in certs},
            }
    return (EXIT_PASS if ok else EXIT_FAIL), summary, writers


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pistab", description="Stability analysis of a saturated PI storage loop.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            src = p.add_mutually_exclusive_group()
            src.add_argument("--scenario", help="scenario JSON file")
            src.add_argument("--example", choices=sorted(EXAMPLES), help="shipped example instead of a file")
            p.add_argument("--k1", type=float, help="override the proportional gain")
            p.add_argument("--k2", type=float, help="override the integral gain")
        p.add_argument("--out", help="directory for report.json and CSV files")
        p.add_argument("--grid-n", type=int, default=10_000, help="grid points per inequality or axis")
        p.add_argument("--horizon", type=int, default=100_000, help="simulation horizon")
        p.add_argument("--tol", type=float, default=1e-10, help="root-finding or convergence tolerance")

    for name, fn, help_ in (
        ("check", cmd_check, "validate the outflow bound and equilibrium"),
        ("local", cmd_local, "local stability of the set-point"),
        ("iss", cmd_iss, "verify the sector conditions and the ISS certificate"),
        ("necessary", cmd_necessary, "necessary conditions for global ISS"),
        ("simulate", cmd_simulate, "roll out the closed loop"),
        ("sweep", cmd_sweep, "classify the gain triangle"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.set_defaults(func=fn)
        if name == "simulate":
            p.add_argument("--v-seq", help="single-column CSV of uncontrolled inflows")
            p.add_argument("--d-seq", help="single-column CSV of member indices")
            p.add_argument("--x0", type=float)
            p.add_argument("--y0", type=float)
            p.add_argument("--w0", type=float)
            p.set_defaults(horizon=1000)
        if name == "sweep":
            p.set_defaults(grid_n=101)

    p = sub.add_parser("roa", help="region-of-attraction certificates")
    common(p)
    p.add_argument("--prop", choices=["21", "22", "both"], default="both",
                   help="21: linearized certificate, 22: gain-matched certificate")
    p.add_argument("--brute-force", action="store_true", help="also classify a grid by simulation")
    p.set_defaults(func=cmd_roa, grid_n=200, tol=1e-6)

    p = sub.add_parser("reproduce", help="regenerate an example's figure data and verdicts")
    p.add_argument("example_id", metavar="EXAMPLE", help=f"one of {sorted(EXAMPLES)}")
    common(p, scenario=False)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_REFUSED if exc.code else EXIT_PASS
    try:
        code, report, writers = args.func(args)
    except (UsageError, ScenarioFileError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_REFUSED
    except RefusalError as exc:
        print(json.dumps(_clean({"refused": str(exc)})), file=sys.stderr)
        return EXIT_REFUSED
    except PistabError as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return EXIT_FAIL
    out = _outdir(args)
    report = _clean({"command": args.command, **report, "exit_code": code})
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False)
    print(text)
    if out is not None:
        (out / "report.json").write_text(text + "\n")
        for name, write in writers.items():
            write(out / name)
    return code


if __name__ == "__main__":
    sys.exit(main())
