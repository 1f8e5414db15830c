"""Command-line entry point.

Exit codes: 0 when every verdict of the invocation passes, 1 when any fails,
2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bounds import bound_report
from .config import load_config
from .engine import RunConfig, enumerate_batch_moments, sgd_run
from .errors import ConfigError, DivergedError, EnumerationTooLargeError, PlanError
from .harness import sweep, verify, write_manifest
from .problems import certify_constants
from .schedules import lr_array, bs_array, validate_plan

SEED_ENV = "SCHED_BOUND_SEED"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return "-" if v is None else str(v)


def table(rows, header=None):
    """Align rows of cells into columns."""
    rows = [[_fmt(c) for c in r] for r in rows]
    if header:
        rows.insert(0, list(header))
    if not rows:
        return ""
    w = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w[i]) for i, c in enumerate(r)).rstrip() for r in rows)


def _resolve_seed(args, cfg):
    if args.seed is not None:
        return args.seed
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0


def _emit(args, name, text):
    """Write ``text`` to ``--out/name`` if an output directory is set, else stdout."""
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, name), "w", newline="") as fh:
            fh.write(text)
        return name
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return None


def _finish(args, files):
    files = [f for f in files if f]
    if args.out and files:
        write_manifest(args.out, files)


def cmd_schedule(args, cfg):
    plan = cfg.plan
    eta, b = lr_array(plan), bs_array(plan)
    every = max(1, args.every)
    ts = range(0, plan.T, every)
    if args.format == "json":
        doc = {
            "case": plan.case_tag.value if plan.case_tag else None,
            "T": plan.T,
            "validation": validate_plan(plan).to_dict(),
            "t": list(ts),
            "eta": [float(eta[t]) for t in ts],
            "b": [int(b[t]) for t in ts],
        }
        f = _emit(args, "schedule.json", json.dumps(doc, indent=1))
    else:
        lines = ["t,eta,b"] + [f"{t},{float(eta[t])!r},{int(b[t])}" for t in ts]
        f = _emit(args, "schedule.csv", "\n".join(lines) + "\n")
    _finish(args, [f])
    return EXIT_OK


def cmd_bounds(args, cfg):
    files, ok = [], True
    for name, plan in zip(cfg.plan_names, cfg.plans):
        consts = certify_constants(cfg.problem).constants(cfg.problem, cfg.theta0, plan.eta_max)
        rep = bound_report(plan, consts)
        ok &= rep.ok
        if args.format == "json":
            files.append(_emit(args, f"bounds_{name}.json", rep.to_json(indent=1)))
            continue
        d = rep.to_dict()
        flags = d.pop("dominated")
        if args.format == "csv":
            keys = list(d)
            row = ",".join(_fmt(d[k]).replace(",", ";") for k in keys)
            text = ",".join(keys) + ",B_dominated,V_dominated\n" + row + (
                f",{flags.get('B', '')},{flags.get('V', '')}\n"
            )
            files.append(_emit(args, f"bounds_{name}.csv", text))
            continue
        rows = [
            ("B_T", rep.B_exact, rep.B_bound, _verdict(flags.get("B"))),
            ("V_T", rep.V_exact, rep.V_bound, _verdict(flags.get("V"))),
            ("stationarity RHS", rep.stationarity_rhs_exact, rep.stationarity_rhs_bound, _verdict(flags.get("stationarity"))),
            ("convex RHS", rep.convex_rhs_exact, rep.convex_rhs_bound, ""),
            ("limsup asymptote", rep.limsup_asymptote, None, ""),
        ]
        text = f"{name}: case={rep.case} row={rep.row} T={rep.T}\n"
        text += table(rows, ("quantity", "exact", "closed form", "exact<=closed"))
        if rep.note:
            text += f"\nnote: {rep.note}"
        print(text)
    _finish(args, files)
    return EXIT_OK if ok else EXIT_FAIL


def _verdict(flag):
    return "" if flag is None else ("pass" if flag else "FAIL")


def cmd_run(args, cfg):
    seed = _resolve_seed(args, cfg)
    rc = RunConfig(cfg.plan, cfg.problem, cfg.theta0, seed, args.stream, cfg.record_every)
    try:
        tr = sgd_run(rc)
    except DivergedError as exc:
        print(f"diverged: {exc} (last finite step {exc.last_finite_t})", file=sys.stderr)
        return EXIT_FAIL
    if args.format == "json":
        f = _emit(args, tr.filename.replace(".csv", ".json"), tr.to_json())
    else:
        f = _emit(args, tr.filename, tr.to_csv())
    _finish(args, [f])
    return EXIT_OK


def cmd_verify(args, cfg):
    seed = _resolve_seed(args, cfg)
    exps = cfg.experiments(seeds=args.seeds, seed=seed)
    reports = [verify(e, jobs=args.jobs) for e in exps]
    files = []
    for r in reports:
        print(table(r.summary_rows()))
        print()
    if args.out:
        files.append(
            _emit(args, "verdicts.json", json.dumps([r.to_dict() for r in reports], indent=1))
        )
    _finish(args, files)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_sweep(args, cfg):
    seed = _resolve_seed(args, cfg)
    exps = cfg.experiments(seeds=args.seeds, seed=seed)
    reports, text = sweep(exps, jobs=args.jobs, out=args.out, write_traces=args.traces)
    rows = [(r.name, r.case, r.min_mean, r.rhs_exact, r.rhs_bound, r.verdict) for r in reports]
    print(table(rows, ("experiment", "case", "min mean", "RHS exact", "RHS closed", "verdict")))
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_enumerate(args, cfg):
    prob = cfg.problem
    theta = cfg.theta0
    cert = certify_constants(prob)
    try:
        mom = enumerate_batch_moments(prob, theta, args.b)
    except EnumerationTooLargeError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    g = prob.full_gradient(theta)
    err = float(np.max(np.abs(mom.mean - g)) / max(np.max(np.abs(g)), 1e-300))
    limit = cert.sigma2 / args.b
    ok_mean = err <= 1e-12 or np.array_equal(mom.mean, g)
    ok_var = mom.variance <= limit * (1 + 1e-12) + 1e-12
    doc = {
        "b": args.b,
        "batches": mom.count,
        "mean": mom.mean.tolist(),
        "full_gradient": g.tolist(),
        "mean_rel_error": err,
        "variance": mom.variance,
        "sigma2_over_b": limit,
        "unbiased": bool(ok_mean),
        "variance_within_bound": bool(ok_var),
    }
    if args.format == "json":
        f = _emit(args, "enumerate.json", json.dumps(doc, indent=1))
    else:
        rows = [(k, v) for k, v in doc.items() if k not in ("mean", "full_gradient")]
        f = _emit(args, "enumerate.txt", table(rows) + "\n")
    _finish(args, [f])
    return EXIT_OK if ok_mean and ok_var else EXIT_FAIL


def cmd_constants(args, cfg):
    cert = certify_constants(cfg.problem)
    doc = {"problem": repr(cfg.problem), "certificate": cert.to_dict()}
    try:
        doc["run_constants"] = cert.constants(cfg.problem, cfg.theta0, cfg.plan.eta_max).to_dict()
    except ValueError as exc:
        doc["run_constants"] = None
        doc["note"] = str(exc)
    if args.format == "json":
        f = _emit(args, "constants.json", json.dumps(doc, indent=1))
    else:
        rows = [(k, v) for k, v in cert.to_dict().items() if k != "theta_star"]
        if doc["run_constants"]:
            rows += [(f"run.{k}", v) for k, v in doc["run_constants"].items()]
        f = _emit(args, "constants.txt", table(rows) + "\n")
    _finish(args, [f])
    return EXIT_OK


COMMANDS = {
    "schedule": (cmd_schedule, "print the eta_t / b_t table of the plan"),
    "bounds": (cmd_bounds, "exact sums, closed-form bounds and right-hand sides"),
    "run": (cmd_run, "one seeded run, written as a trace"),
    "verify": (cmd_verify, "multi-seed check of the bound inequalities"),
    "sweep": (cmd_sweep, "run and verify every plan of the config over a seed grid"),
    "enumerate": (cmd_enumerate, "exact mini-batch moments by enumerating all batches"),
    "constants": (cmd_constants, "certified problem constants"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment JSON file")
    common.add_argument("--seed", type=int, default=None, help=f"master seed (fallback: ${SEED_ENV})")
    common.add_argument("--seeds", type=int, default=None, help="number of runs per plan")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--format", choices=("csv", "json", "table"), default="table")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")

    parser = argparse.ArgumentParser(prog="schedsgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}
    for name, (_, help_) in COMMANDS.items():
        subs[name] = sub.add_parser(name, parents=[common], help=help_)
    sub.add_parser("dump-constants", parents=[common], help="alias of constants")
    subs["schedule"].add_argument("--every", type=int, default=1, help="print every k-th step")
    subs["run"].add_argument("--stream", type=int, default=0, help="run index under the seed")
    subs["sweep"].add_argument("--traces", action="store_true", help="also write per-run traces")
    subs["enumerate"].add_argument("--b", type=int, default=2, help="batch size")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.seeds is not None and args.seeds < 1:
        print("--seeds must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    name = "constants" if args.command == "dump-constants" else args.command
    try:
        cfg = load_config(args.config)
        return COMMANDS[name][0](args, cfg)
    except (ConfigError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
