"""Command-line front end: ``hinfnet design | simulate | verify``.

Exit codes: 0 ok, 1 usage error, 2 parse error, 3 infeasible design,
4 solver failure, 5 Riccati failure, 6 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import (InfeasibleInput, Phase1Infeasible, RecoveredZbarNotPD, RiccatiError,
                     SingularInitialWeight, SolverError)
from .filter_design import FilterDesign, recover_design
from .lmi import EPS_REL
from .network import REFERENCE_LEVELS, chua_benchmark, load_model
from .riccati import DT
from .simulator import (Scenario, attenuation_report, convergence_check, ensemble_attenuation,
                        noise_scenario, run_scenario)
from .synthesis import DesignOptions, optimize_design

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_RICCATI, EXIT_FAIL = range(7)
SUITES = ("p1", "p2", "p3", "all")
P1_T_FINAL = 10.0
ENSEMBLE_T_FINAL = 20.0

log = logging.getLogger("hinfnet")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--case", choices=("sim1", "sim2"), help="built-in benchmark case")
    common.add_argument("--design", help="design JSON file (computed when omitted)")
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--epsilon", type=float, default=EPS_REL,
                        help="relative margin of strict inequalities (default %(default)g)")
    common.add_argument("--tol", type=float, default=1e-8,
                        help="solver gap tolerance (default %(default)g)")
    common.add_argument("--dt", type=float, default=DT, help="RK4 step (default %(default)g)")
    common.add_argument("--t-final", type=float, default=None, help="simulation horizon")
    common.add_argument("--trials", type=int, default=20, help="ensemble size (default 20)")
    common.add_argument("--seed", type=int, default=0, help="ensemble seed (default 0)")
    common.add_argument("--zbar-min", type=float, default=None,
                        help="lower bound on every Zbar (default: case value or 0)")
    common.add_argument("--out-dir", default=".", help="output directory (default .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log solver progress")

    p = _Parser(prog="hinfnet", description="Distributed H-infinity filter design and checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("design", parents=[common], help="solve the design problem")
    sim = sub.add_parser("simulate", parents=[common], help="simulate one scenario")
    sim.add_argument("--zero-cross-gains", action="store_true",
                     help="drop every inter-node gain in the filter")
    ver = sub.add_parser("verify", parents=[common], help="run the property checks")
    ver.add_argument("--suite", choices=SUITES, default="all")
    ver.add_argument("--zero-cross-gains", action="store_true",
                     help="drop every inter-node gain in the filter")
    return p


# -- inputs ----------------------------------------------------------------------

def _check_file(path, what):
    if not os.path.isfile(path):
        raise CliError(f"{what} file not found: {path}", EXIT_USAGE)


def _parse_error(path, exc):
    if isinstance(exc, json.JSONDecodeError):
        return CliError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}", EXIT_PARSE)
    return CliError(f"{path}: {type(exc).__name__}: {exc}", EXIT_PARSE)


def _load(loader, path, what):
    _check_file(path, what)
    try:
        return loader(path)
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise _parse_error(path, exc) from exc


def validate_args(args) -> None:
    """Reject inconsistent flags and missing files before any computation."""
    if (args.model is None) == (args.case is None):
        raise CliError("exactly one of --model or --case is required", EXIT_USAGE)
    if args.trials < 1:
        raise CliError(f"--trials must be at least 1, got {args.trials}", EXIT_USAGE)
    for name in ("epsilon", "tol", "dt"):
        if not getattr(args, name) > 0:
            raise CliError(f"--{name} must be positive", EXIT_USAGE)
    if args.t_final is not None and not args.t_final > 0:
        raise CliError("--t-final must be positive", EXIT_USAGE)
    if args.zbar_min is not None and args.zbar_min < 0:
        raise CliError("--zbar-min must be nonnegative", EXIT_USAGE)
    for name in ("model", "design", "scenario"):
        path = getattr(args, name)
        if path is not None:
            _check_file(path, name)


def load_problem(args):
    """``(model, weights, zbar_min)`` from ``--case`` or ``--model``."""
    if args.case is not None:
        bench = chua_benchmark(args.case)
        model, weights, zmin = bench.model, bench.weights, bench.zbar_min
    else:
        model, weights = _load(load_model, args.model, "model")
        zmin = 0.0
    if args.zbar_min is not None:
        zmin = args.zbar_min
    return model, weights, zmin


# -- design ----------------------------------------------------------------------

def compute_design(model, weights, zbar_min, args):
    opts = DesignOptions(eps_rel=args.epsilon, tol=args.tol, zbar_min=zbar_min)
    t0 = time.perf_counter()
    try:
        rep1, rep3 = optimize_design(model, weights, opts)
        design = recover_design(rep3, model, weights)
    except Phase1Infeasible as exc:
        raise CliError(f"infeasible: {exc}", EXIT_INFEASIBLE) from exc
    except SolverError as exc:
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER) from exc
    except (InfeasibleInput, RecoveredZbarNotPD) as exc:
        raise CliError(f"infeasible: {exc}", EXIT_INFEASIBLE) from exc
    return design, rep1, rep3, time.perf_counter() - t0


def stage_reports(rep1, rep3):
    stages = [("phase1", rep1)]
    if rep3.meta.get("floor_report") is not None:
        stages.append(("floor", rep3.meta["floor_report"]))
    return stages + [("refinement", rep3)]


def design_report(design: FilterDesign, rep1, rep3, runtime, case=None) -> dict:
    N = design.N
    doc = {
        "gamma2": design.gamma2,
        "gamma2_phase1": 1.0 / rep1.objective,
        "gammabar2": design.gammabar2.tolist(),
        "min_zbar": [design.min_zbar_eig(i) for i in range(N)],
        "solver": [
            {"stage": name, "status": r.status, "iterations": r.iterations,
             "rel_gap": r.rel_gap, "primal_residual": r.primal_residual,
             "dual_residual": r.dual_residual, "worst_margin": r.margins.worst,
             "margins": {k: float(v) for k, v in r.margins.family_min().items()}}
            for name, r in stage_reports(rep1, rep3)
        ],
        "runtime_s": runtime,
        "provenance": dict(design.provenance),
    }
    if case in REFERENCE_LEVELS:
        ref = REFERENCE_LEVELS[case]
        rel = lambda ours, theirs: (ours - theirs) / theirs  # noqa: E731
        doc["reference"] = {
            "case": case,
            "gamma2": ref["gamma2"],
            "gammabar2": ref["gammabar2"],
            "min_zbar": ref["min_zbar"],
            "rel_dev_gamma2_phase1": rel(doc["gamma2_phase1"], ref["gamma2"]),
            "rel_dev_gamma2": rel(doc["gamma2"], ref["gamma2"]),
            "rel_dev_gammabar2": [rel(a, b) for a, b in zip(doc["gammabar2"], ref["gammabar2"])],
            "rel_dev_min_zbar": [rel(a, b) for a, b in zip(doc["min_zbar"], ref["min_zbar"])],
        }
    return doc


def format_design_table(doc: dict) -> str:
    """Text table of a design report; every number is read from ``doc``."""
    ref = doc.get("reference")
    lines = [f"gamma^2={doc['gamma2']:.4f}  (phase-1 optimum {doc['gamma2_phase1']:.4f})"]
    if ref:
        lines[0] += (f"  reference {ref['gamma2']:.4f}"
                     f"  rel.dev {ref['rel_dev_gamma2_phase1']:+.2%}")
        lines.append(f"{'node':>4}  {'gammabar^2':>11} {'ref':>8} {'rel.dev':>8}"
                     f"  {'min eig Zbar':>12} {'ref':>10} {'rel.dev':>9}")
    else:
        lines.append(f"{'node':>4}  {'gammabar^2':>11}  {'min eig Zbar':>12}")
    for i, (g, z) in enumerate(zip(doc["gammabar2"], doc["min_zbar"])):
        if ref:
            lines.append(f"{i:>4}  {g:>11.4f} {ref['gammabar2'][i]:>8.4f} "
                         f"{ref['rel_dev_gammabar2'][i]:>+8.1%}  {z:>12.4e} "
                         f"{ref['min_zbar'][i]:>10.4e} {ref['rel_dev_min_zbar'][i]:>+9.1%}")
        else:
            lines.append(f"{i:>4}  {g:>11.4f}  {z:>12.4e}")
    for s in doc["solver"]:
        lines.append(f"{s['stage']}: {s['status']}, {s['iterations']} iterations, "
                     f"rel.gap {s['rel_gap']:.1e}, worst margin {s['worst_margin']:.1e}")
    lines.append(f"runtime {doc['runtime_s']:.1f} s")
    return "\n".join(lines)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
    log.info("wrote %s", path)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def get_design(args, model, weights, zbar_min):
    if args.design is not None:
        design = _load(FilterDesign.load, args.design, "design")
        if design.N != model.N:
            raise CliError(f"design has {design.N} nodes, model has {model.N}", EXIT_PARSE)
        return design
    design, *_ = compute_design(model, weights, zbar_min, args)
    return design


def cmd_design(args) -> int:
    model, weights, zmin = load_problem(args)
    design, rep1, rep3, runtime = compute_design(model, weights, zmin, args)
    # reference values apply only to the cases as defined
    ref_case = args.case if args.case and zmin == chua_benchmark(args.case).zbar_min else None
    doc = design_report(design, rep1, rep3, runtime, ref_case)
    design.save(os.path.join(args.out_dir, "design.json"))
    _write_json(os.path.join(args.out_dir, "design_report.json"), doc)
    print(format_design_table(doc))
    return EXIT_OK


# -- simulate --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    model, weights, zmin = load_problem(args)
    if args.scenario is not None:
        scenario = _load(Scenario.load, args.scenario, "scenario")
        if args.t_final is not None or args.dt != DT:
            scenario = Scenario(scenario.x0, scenario.xi, scenario.w, scenario.v, scenario.eps,
                                args.t_final or scenario.t_final, args.dt)
        try:
            scenario.validate(model)
        except ValueError as exc:
            raise _parse_error(args.scenario, exc) from exc
    else:
        scenario = noise_scenario(model, args.seed, 0, args.t_final or ENSEMBLE_T_FINAL, args.dt)
    design = get_design(args, model, weights, zmin)
    if args.zero_cross_gains:
        design = design.zero_cross_gains()
    result = run_scenario(model, design, scenario)
    perf = attenuation_report(result, model, design, weights)
    doc = {"scenario": scenario.to_json(), "substeps": result.substeps,
           "cross_gains": result.cross_gains, "performance": perf.to_json(),
           "pass": perf.p2_pass and perf.p3_pass}
    result.to_csv(os.path.join(args.out_dir, "trajectory.csv"))
    _write_json(os.path.join(args.out_dir, "simulation_report.json"), doc)
    print(f"ratio={perf.ratio:.6g} gamma2={perf.gamma2:.6g} "
          f"p2={'PASS' if perf.p2_pass else 'FAIL'} p3={'PASS' if perf.p3_pass else 'FAIL'}")
    return EXIT_OK


# -- verify ----------------------------------------------------------------------

def _fail_nodes(mask):
    return [int(i) for i in np.flatnonzero(~np.asarray(mask))]


def run_suite(model, weights, design, suite, trials, seed, dt, t_final=None) -> dict:
    """Machine-readable PASS/FAIL per selected property."""
    out = {}
    if suite in ("p1", "all"):
        conv = convergence_check(model, design, trials, seed, t_final or P1_T_FINAL, dt)
        out["p1"] = {"pass": conv.passed, "fail_nodes": _fail_nodes(conv.node_pass),
                     "max_ratio": float(conv.ratios.max()), **conv.to_json()}
    if suite in ("p2", "p3", "all"):
        reps = ensemble_attenuation(model, design, weights, trials, seed,
                                    t_final or ENSEMBLE_T_FINAL, dt)
        if suite in ("p2", "all"):
            ok = [r.p2_pass for r in reps]
            out["p2"] = {"pass": all(ok), "fail_trials": [k for k, v in enumerate(ok) if not v],
                         "max_ratio": max(r.ratio for r in reps), "gamma2": design.gamma2,
                         "trials": [r.to_json() for r in reps]}
        if suite in ("p3", "all"):
            node_ok = np.all([r.lhs_local <= r.rhs_local for r in reps], axis=0)
            out["p3"] = {"pass": bool(node_ok.all()), "fail_nodes": _fail_nodes(node_ok),
                         "pass_configured_offsets": all(r.p3_pass_config for r in reps),
                         "max_local_ratio": float(max((r.lhs_local / r.rhs_local).max()
                                                      for r in reps))}
            if "p2" not in out:
                out["p3"]["trials"] = [r.to_json() for r in reps]
    return out


def cmd_verify(args) -> int:
    model, weights, zmin = load_problem(args)
    design = get_design(args, model, weights, zmin)
    if args.zero_cross_gains:
        design = design.zero_cross_gains()
    res = run_suite(model, weights, design, args.suite, args.trials, args.seed, args.dt,
                    args.t_final)
    ok = all(r["pass"] for r in res.values())
    _write_json(os.path.join(args.out_dir, "verify_report.json"),
                {"suite": args.suite, "trials": args.trials, "seed": args.seed,
                 "cross_gains": not design.cross_gains_zeroed, "pass": ok, "results": res})
    for name, r in res.items():
        line = f"{name}: {'PASS' if r['pass'] else 'FAIL'}"
        if not r["pass"] and r.get("fail_nodes"):
            line += f" (nodes {', '.join(map(str, r['fail_nodes']))})"
        print(line)
    print(f"overall: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        validate_args(args)
        os.makedirs(args.out_dir, exist_ok=True)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"hinfnet: {exc}", file=sys.stderr)
        return exc.code
    except RiccatiError as exc:
        print(f"hinfnet: Riccati failure at t={exc.t:.6g} (node {exc.node}): {exc}",
              file=sys.stderr)
        return EXIT_RICCATI
    except SingularInitialWeight as exc:
        print(f"hinfnet: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
