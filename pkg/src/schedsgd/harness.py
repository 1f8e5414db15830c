"""Multi-seed experiments: aggregation, bound verdicts, rate fits and sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .bounds import bound_B, bound_V, convex_rhs, exact_B, exact_V, stationarity_rhs
from .errors import ConstraintError, DivergedError, UnsupportedScheduleError
from .engine import RunConfig, run_many
from .problems import certify_constants
from .schedules import CaseTag

__all__ = [
    "Measure",
    "Experiment",
    "Estimates",
    "VerdictReport",
    "RateFit",
    "run_experiment",
    "aggregate",
    "verify_stationarity",
    "verify_convex",
    "verify",
    "rate_fit",
    "min_estimate",
    "sweep",
    "aggregate_csv",
    "write_manifest",
    "SEED_CHUNK",
]

# Runs are handed to workers in fixed groups of this many seeds.
SEED_CHUNK = 25


class Measure(str, Enum):
    GRAD_NORM2 = "GradNorm2"
    GRAD_NORM = "GradNorm"
    SUBOPTIMALITY = "Suboptimality"

    @property
    def trace_key(self):
        return {"GradNorm2": "grad_norm2", "GradNorm": "grad_norm", "Suboptimality": "subopt"}[
            self.value
        ]


@dataclass(frozen=True)
class Experiment:
    """``seeds`` runs of one plan on one problem; run ``i`` uses stream ``(seed, i)``."""

    name: str
    plan: object
    problem: object
    theta0: np.ndarray | None = None
    seeds: int = 100
    seed: int = 0
    record_every: int = 1
    measure: Measure = Measure.GRAD_NORM2
    slack_se: float = 2.0

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("an experiment needs at least one run")
        if self.slack_se < 0:
            raise ValueError("slack_se must be >= 0")
        object.__setattr__(self, "measure", Measure(self.measure))
        th = np.zeros(self.problem.dim) if self.theta0 is None else np.asarray(self.theta0, float)
        object.__setattr__(self, "theta0", th)

    @property
    def keys(self):
        return [(self.seed, i) for i in range(self.seeds)]

    @property
    def runs(self):
        return [
            RunConfig(self.plan, self.problem, self.theta0, s, r, self.record_every)
            for s, r in self.keys
        ]

    def constants(self):
        return certify_constants(self.problem).constants(
            self.problem, self.theta0, self.plan.eta_max
        )


def _run_chunk(args):
    plan, problem, theta0, keys, record_every = args
    return run_many(plan, problem, theta0, keys, record_every)


def _chunks(exp):
    keys = exp.keys
    return [
        (exp.plan, exp.problem, exp.theta0, keys[i : i + SEED_CHUNK], exp.record_every)
        for i in range(0, len(keys), SEED_CHUNK)
    ]


def run_experiment(exp, jobs=1):
    """All traces of ``exp`` in run order."""
    return run_experiments([exp], jobs)[0]


def run_experiments(exps, jobs=1):
    tasks, owner = [], []
    for k, exp in enumerate(exps):
        for task in _chunks(exp):
            tasks.append(task)
            owner.append(k)
    if jobs <= 1 or len(tasks) == 1:
        results = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_chunk, tasks))
    out = [[] for _ in exps]
    for k, res in zip(owner, results):
        out[k].extend(res)
    return out


@dataclass(frozen=True)
class Estimates:
    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: int

    @property
    def argmin(self):
        return int(np.argmin(self.mean))


def aggregate(traces, measure=Measure.GRAD_NORM2):
    """Per recorded step: mean over runs and its standard error (0 for one run)."""
    if not traces:
        raise ValueError("no traces to aggregate")
    t = traces[0].t
    for tr in traces[1:]:
        if not np.array_equal(tr.t, t):
            raise ValueError("traces are recorded at different steps")
    key = Measure(measure).trace_key
    X = np.stack([tr.measure(key) for tr in traces])
    k = len(traces)
    mean = X.mean(axis=0)
    # spread measured about the first run: identical runs give exactly zero
    se = (X - X[0]).std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    return Estimates(t.copy(), mean, se, k)


@dataclass
class VerdictReport:
    name: str
    kind: str
    measure: str
    case: str | None
    seeds: int
    t: list
    mean: list
    se: list
    min_t: int | None
    min_mean: float | None
    min_se: float | None
    slack_se: float
    rhs_exact: float | None
    rhs_bound: float | None = None
    pass_exact: bool = False
    pass_bound: bool | None = None
    vacuous_exact: bool = False
    vacuous_bound: bool | None = None
    verdict: str = "fail"
    warnings: list = field(default_factory=list)
    rate_fit: dict | None = None
    diagnostic: str = ""
    # mean over runs of each run's own minimum; informational, never used in verdicts
    mean_of_run_minima: float | None = None

    @property
    def passed(self):
        return self.verdict in ("pass", "vacuous-pass")

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def summary_rows(self):
        rows = [
            ("experiment", self.name),
            ("check", self.kind),
            ("case", self.case),
            ("measure", self.measure),
            ("seeds", self.seeds),
            ("min_t", self.min_t),
            ("min mean", self.min_mean),
            ("SE at min", self.min_se),
            ("RHS (exact sums)", self.rhs_exact),
            ("RHS (closed form)", self.rhs_bound),
            ("pass (exact)", self.pass_exact),
            ("pass (closed form)", self.pass_bound),
            ("vacuous (exact)", self.vacuous_exact),
            ("verdict", self.verdict),
        ]
        return rows + [("warning", w) for w in self.warnings]


def _fail(exp, kind, msg):
    return VerdictReport(
        name=exp.name,
        kind=kind,
        measure=exp.measure.value,
        case=exp.plan.case_tag.value if exp.plan.case_tag else None,
        seeds=exp.seeds,
        t=[],
        mean=[],
        se=[],
        min_t=None,
        min_mean=None,
        min_se=None,
        slack_se=exp.slack_se,
        rhs_exact=None,
        verdict="fail",
        diagnostic=msg,
    )


def _verify(exp, kind, rhs_fn, traces=None, jobs=1):
    if traces is None:
        try:
            traces = run_experiment(exp, jobs)
        except DivergedError as exc:
            return _fail(exp, kind, f"diverged: {exc} (last finite step {exc.last_finite_t})")
    est = aggregate(traces, exp.measure)
    consts = exp.constants()
    warnings = []
    root = exp.measure is Measure.GRAD_NORM

    def finish(x):
        return math.sqrt(x) if root else x

    try:
        rhs_exact = finish(rhs_fn(consts, exact_B(exp.plan), exact_V(exp.plan)))
    except ConstraintError as exc:
        return _fail(exp, kind, str(exc))
    try:
        rhs_bound = finish(rhs_fn(consts, bound_B(exp.plan), bound_V(exp.plan)))
    except (UnsupportedScheduleError, ConstraintError) as exc:
        rhs_bound = None
        warnings.append(f"no closed-form bound: {exc}")

    i = est.argmin
    m, s = float(est.mean[i]), float(est.se[i])
    allowed = lambda rhs: m <= rhs + exp.slack_se * s
    start = float(est.mean[0])
    rep = VerdictReport(
        name=exp.name,
        kind=kind,
        measure=exp.measure.value,
        case=exp.plan.case_tag.value if exp.plan.case_tag else None,
        seeds=est.count,
        t=est.t.tolist(),
        mean=est.mean.tolist(),
        se=est.se.tolist(),
        min_t=int(est.t[i]),
        min_mean=m,
        min_se=s,
        slack_se=exp.slack_se,
        rhs_exact=rhs_exact,
        rhs_bound=rhs_bound,
        pass_exact=allowed(rhs_exact),
        pass_bound=None if rhs_bound is None else allowed(rhs_bound),
        vacuous_exact=rhs_exact >= start,
        vacuous_bound=None if rhs_bound is None else rhs_bound >= start,
        warnings=warnings,
        mean_of_run_minima=float(
            np.mean([tr.measure(exp.measure.trace_key).min() for tr in traces])
        ),
    )
    ok = rep.pass_exact and rep.pass_bound is not False
    control = exp.plan.case_tag is CaseTag.CONTROL
    if control:
        rep.warnings.append("divergent bound: with a decaying batch size V_T grows with T")
    if ok and (rep.vacuous_exact or control):
        rep.verdict = "vacuous-pass"
        if rep.vacuous_exact:
            rep.warnings.append("RHS is not below the starting value; the check carries no information")
    else:
        rep.verdict = "pass" if ok else "fail"
    return rep


def verify_stationarity(exp, traces=None, jobs=1):
    """Best seed-mean gradient measure against the stationarity RHS (both flavors)."""
    if exp.measure is Measure.SUBOPTIMALITY:
        raise ValueError("verify_stationarity needs a gradient measure")
    return _verify(exp, "stationarity", stationarity_rhs, traces, jobs)


def verify_convex(exp, traces=None, jobs=1):
    """Best seed-mean suboptimality against the convex RHS."""
    if exp.measure is not Measure.SUBOPTIMALITY:
        exp = Experiment(**{**_fields(exp), "measure": Measure.SUBOPTIMALITY})
    if certify_constants(exp.problem).theta_star is None:
        raise ValueError("convex verification needs a problem with a known minimizer")
    return _verify(exp, "convex", convex_rhs, traces, jobs)


def verify(exp, traces=None, jobs=1):
    """Dispatch on the experiment's measure."""
    if exp.measure is Measure.SUBOPTIMALITY:
        return verify_convex(exp, traces, jobs)
    return verify_stationarity(exp, traces, jobs)


def _fields(exp):
    return {k: getattr(exp, k) for k in exp.__dataclass_fields__}


def min_estimate(exp, traces=None, jobs=1):
    """``(min_t seed-mean, SE at the argmin)`` of the experiment's measure."""
    if traces is None:
        traces = run_experiment(exp, jobs)
    est = aggregate(traces, exp.measure)
    i = est.argmin
    return float(est.mean[i]), float(est.se[i])


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    mode: str
    points: int

    def to_dict(self):
        return asdict(self)


def rate_fit(x, y, mode="loglog"):
    """Least-squares line through ``(log x, log y)`` or ``(x, log y)``.

    ``residual`` is the root-mean-square deviation from the fitted line.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    if len(x) < 4:
        raise ValueError("a rate fit needs at least 4 points")
    if np.any(y <= 0):
        raise ValueError("rate fit needs positive estimates")
    if mode == "loglog":
        u = np.log(x)
    elif mode == "loglinear":
        u = x
    else:
        raise ValueError(f"unknown fit mode {mode!r}")
    v = np.log(y)
    slope, intercept = np.polyfit(u, v, 1)
    res = v - (slope * u + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(res**2))), mode, len(x))


# -- sweeps and files -------------------------------------------------------


def aggregate_csv(names, estimates):
    """Deterministic CSV text of per-step estimates for several experiments."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "t", "mean", "se", "count"])
    for name, est in zip(names, estimates):
        for t, m, s in zip(est.t, est.mean, est.se):
            w.writerow([name, int(t), repr(float(m)), repr(float(s)), est.count])
    return buf.getvalue()


def sweep(exps, jobs=1, out=None, write_traces=False):
    """Run and verify every experiment; the coordinator writes all outputs.

    Returns ``(reports, aggregate_csv_text)``.
    """
    try:
        all_traces = run_experiments(exps, jobs)
    except DivergedError:
        all_traces = []
        for exp in exps:
            try:
                all_traces.append(run_experiment(exp, jobs))
            except DivergedError:
                all_traces.append(None)
    reports, ests, names = [], [], []
    for exp, traces in zip(exps, all_traces):
        if traces is None:
            reports.append(_fail(exp, "stationarity", "diverged"))
            continue
        reports.append(verify(exp, traces))
        ests.append(aggregate(traces, exp.measure))
        names.append(exp.name)
    text = aggregate_csv(names, ests)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        files = []
        if write_traces:
            for exp, traces in zip(exps, all_traces):
                for tr in traces or []:
                    fn = f"{exp.name}__{tr.filename}"
                    with open(os.path.join(out, fn), "w", newline="") as fh:
                        tr.to_csv(fh)
                    files.append(fn)
        with open(os.path.join(out, "aggregate.csv"), "w", newline="") as fh:
            fh.write(text)
        with open(os.path.join(out, "verdicts.json"), "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=1)
        files += ["aggregate.csv", "verdicts.json"]
        write_manifest(out, files)
    return reports, text


def write_manifest(out, files, extra=None):
    """List produced files with size and SHA-256 in ``out/manifest.json``."""
    entries = []
    for fn in files:
        path = os.path.join(out, fn)
        with open(path, "rb") as fh:
            data = fh.read()
        entries.append({"file": fn, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    doc = {"files": entries}
    if extra:
        doc.update(extra)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1)
    return doc
