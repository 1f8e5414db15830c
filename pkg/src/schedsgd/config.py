"""JSON experiment configs.

Layout (``spec_version`` 1)::

    {
      "spec_version": 1,
      "name": "caseii",
      "problem": {"kind": "quadratic", "n": 64, "dim": 10, "lam": 1.0, "seed": 0,
                  "center_offset": 1.0, "center_scale": 1.0},
      "plan": {"lr": {"family": "constant", "eta_max": 0.1},
               "bs": {"family": "exponential_growth", "b0": 2, "delta": 2},
               "epochs_per_block": [50, 50, 50, 50, 50]},
      "run": {"seeds": 100, "seed": 0, "record_every": 1, "theta0": null,
              "measure": "GradNorm2", "slack_se": 2.0},
      "sweep": {"plans": [{"name": "...", "lr": {...}, "bs": {...},
                           "epochs_per_block": [...]}]}
    }

Problem kinds: ``quadratic`` and ``sine_quadratic`` (``lam``, ``amp``, and either
explicit ``centers`` or generated ones) and ``logistic`` (explicit ``X``/``y`` or
generated with ``feature_scale``, ``label_noise``). ``theta0`` is null (origin), a
scalar (filled) or a list. Unknown keys are errors.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PlanError
from .harness import Experiment, Measure
from .problems import (
    ProblemKind,
    logistic,
    make_logistic,
    make_quadratic,
    make_sine_quadratic,
    quadratic,
    sine_quadratic,
)
from .schedules import BsSchedule, LrSchedule, make_plan

__all__ = ["Config", "load_config", "parse_config", "SPEC_VERSION"]

SPEC_VERSION = 1

_TOP = {"spec_version", "name", "problem", "plan", "run", "sweep"}
_PROBLEM = {
    "kind", "n", "dim", "lam", "amp", "seed", "center_offset", "center_scale",
    "centers", "X", "y", "feature_scale", "label_noise",
}
_PLAN = {"name", "lr", "bs", "epochs_per_block"}
_LR = {"family", "eta_max", "eta_min", "eta0", "p", "gamma", "a2", "c2", "Mw", "Ew"}
_BS = {"family", "b0", "a", "c", "delta"}
_RUN = {"seeds", "seed", "record_every", "theta0", "measure", "slack_se"}


class _Doc:
    """Raw text plus a helper mapping a key path to a line number."""

    def __init__(self, text, source):
        self.text = text
        self.source = source

    def line_of(self, path):
        pos, line = 0, None
        for key in path:
            if isinstance(key, int):
                continue
            m = re.compile(r'"%s"\s*:' % re.escape(key)).search(self.text, pos)
            if m is None:
                break
            pos = m.end()
            line = self.text.count("\n", 0, m.start()) + 1
        return line

    def error(self, path, msg):
        where = ".".join(str(p) for p in path)
        return ConfigError(f"{where}: {msg}" if where else msg, line=self.line_of(path), source=self.source)


@dataclass
class Config:
    name: str
    problem: object
    plans: list
    plan_names: list
    seeds: int
    seed: int | None
    record_every: int
    theta0: np.ndarray
    measure: Measure
    slack_se: float
    raw: dict

    @property
    def plan(self):
        return self.plans[0]

    def experiments(self, seeds=None, seed=None):
        s = self.seed if seed is None else seed
        return [
            Experiment(
                name=nm,
                plan=pl,
                problem=self.problem,
                theta0=self.theta0,
                seeds=self.seeds if seeds is None else seeds,
                seed=0 if s is None else s,
                record_every=self.record_every,
                measure=self.measure,
                slack_se=self.slack_se,
            )
            for nm, pl in zip(self.plan_names, self.plans)
        ]


def _check_keys(doc, obj, allowed, path):
    if not isinstance(obj, dict):
        raise doc.error(path, "expected an object")
    for k in obj:
        if k not in allowed:
            raise doc.error(path + [k], f"unknown key {k!r}")


def _get(doc, obj, key, path, kind, default=None, required=False):
    if key not in obj:
        if required:
            raise doc.error(path, f"missing required key {key!r}")
        return default
    v = obj[key]
    if v is None:
        return default
    ok = {
        "int": isinstance(v, int) and not isinstance(v, bool),
        "num": isinstance(v, (int, float)) and not isinstance(v, bool),
        "str": isinstance(v, str),
        "list": isinstance(v, list),
    }[kind]
    if not ok:
        raise doc.error(path + [key], f"expected {kind}, got {type(v).__name__}")
    return v


def _problem(doc, p):
    path = ["problem"]
    _check_keys(doc, p, _PROBLEM, path)
    kind = _get(doc, p, "kind", path, "str", required=True)
    try:
        kind = ProblemKind(kind)
    except ValueError:
        raise doc.error(path + ["kind"], f"unknown problem kind {kind!r}") from None
    seed = _get(doc, p, "seed", path, "int", 0)
    n = _get(doc, p, "n", path, "int", 64)
    dim = _get(doc, p, "dim", path, "int", 10)
    try:
        if kind is ProblemKind.LOGISTIC:
            if "X" in p or "y" in p:
                return logistic(np.asarray(p["X"], float), np.asarray(p["y"], float))
            return make_logistic(
                n, dim, seed,
                _get(doc, p, "feature_scale", path, "num", 1.0),
                _get(doc, p, "label_noise", path, "num", 0.1),
            )
        lam = _get(doc, p, "lam", path, "num", 1.0)
        amp = _get(doc, p, "amp", path, "num", 0.5)
        if "centers" in p:
            c = np.asarray(_get(doc, p, "centers", path, "list"), float)
            return quadratic(c, lam) if kind is ProblemKind.QUADRATIC else sine_quadratic(c, lam, amp)
        off = _get(doc, p, "center_offset", path, "num", 1.0)
        scale = _get(doc, p, "center_scale", path, "num", 1.0)
        if kind is ProblemKind.QUADRATIC:
            return make_quadratic(n, dim, lam, seed, off, scale)
        return make_sine_quadratic(n, dim, lam, amp, seed, off, scale)
    except (ValueError, KeyError, TypeError) as exc:
        raise doc.error(path, f"invalid problem: {exc}") from None


def _plan(doc, pl, n, path):
    _check_keys(doc, pl, _PLAN, path)
    lr, bs = pl.get("lr"), pl.get("bs")
    if lr is None or bs is None:
        raise doc.error(path, "plan needs 'lr' and 'bs'")
    _check_keys(doc, lr, _LR, path + ["lr"])
    _check_keys(doc, bs, _BS, path + ["bs"])
    epochs = _get(doc, pl, "epochs_per_block", path, "list", required=True)
    if not all(isinstance(e, int) and not isinstance(e, bool) for e in epochs):
        raise doc.error(path + ["epochs_per_block"], "epochs must be integers")
    try:
        lrs = LrSchedule(**lr)
    except (PlanError, TypeError) as exc:
        raise doc.error(_field_path(path + ["lr"], lr, exc), str(exc)) from None
    try:
        bss = BsSchedule(**bs)
    except (PlanError, TypeError) as exc:
        raise doc.error(_field_path(path + ["bs"], bs, exc), str(exc)) from None
    try:
        return make_plan(lrs, bss, n, epochs)
    except PlanError as exc:
        raise doc.error(path, str(exc)) from None


def _field_path(path, obj, exc):
    # messages that open with a field name ("b0 must be ...") anchor to that key
    m = re.match(r"(\w+)", str(exc))
    return path + [m.group(1)] if m and m.group(1) in obj else path


def parse_config(text, source=None):
    doc = _Doc(text, source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=source) from None
    _check_keys(doc, raw, _TOP, [])
    ver = raw.get("spec_version")
    if ver is None:
        raise doc.error([], "missing 'spec_version'")
    if str(ver) != str(SPEC_VERSION):
        raise doc.error(["spec_version"], f"unsupported spec_version {ver!r} (expected {SPEC_VERSION})")
    name = _get(doc, raw, "name", [], "str", "experiment")
    if "problem" not in raw:
        raise doc.error([], "missing 'problem'")
    problem = _problem(doc, raw["problem"])

    plans, names = [], []
    if "plan" in raw:
        plans.append(_plan(doc, raw["plan"], problem.n, ["plan"]))
        names.append(raw["plan"].get("name", name))
    sw = raw.get("sweep")
    if sw is not None:
        _check_keys(doc, sw, {"plans"}, ["sweep"])
        for i, pl in enumerate(_get(doc, sw, "plans", ["sweep"], "list", [])):
            path = ["sweep", "plans", i]
            plans.append(_plan(doc, pl, problem.n, path))
            names.append(pl.get("name", f"{name}_{len(names)}"))
    if not plans:
        raise doc.error([], "need 'plan' or 'sweep.plans'")
    if len(set(names)) != len(names):
        raise doc.error(["sweep"], "plan names must be unique")

    run = raw.get("run", {})
    _check_keys(doc, run, _RUN, ["run"])
    rp = ["run"]
    seeds = _get(doc, run, "seeds", rp, "int", 100)
    seed = _get(doc, run, "seed", rp, "int", None)
    every = _get(doc, run, "record_every", rp, "int", 1)
    slack = _get(doc, run, "slack_se", rp, "num", 2.0)
    if seeds < 1 or every < 1 or slack < 0:
        raise doc.error(rp, "seeds and record_every must be >= 1 and slack_se >= 0")
    try:
        measure = Measure(_get(doc, run, "measure", rp, "str", "GradNorm2"))
    except ValueError:
        raise doc.error(rp + ["measure"], f"measure must be one of {[m.value for m in Measure]}") from None
    th = run.get("theta0")
    if th is None:
        theta0 = np.zeros(problem.dim)
    elif isinstance(th, (int, float)) and not isinstance(th, bool):
        theta0 = np.full(problem.dim, float(th))
    else:
        theta0 = np.asarray(th, dtype=float)
        if theta0.shape != (problem.dim,) or not np.all(np.isfinite(theta0)):
            raise doc.error(rp + ["theta0"], f"theta0 must have length {problem.dim}")
    return Config(name, problem, plans, names, seeds, seed, every, theta0, measure, slack, raw)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=os.fspath(path)) from None
    return parse_config(text, os.fspath(path))
