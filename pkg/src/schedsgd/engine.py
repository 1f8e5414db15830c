"""Mini-batch SGD with with-replacement sampling, plus batch-moment oracles.

Random streams: each run owns ``numpy.random.default_rng([seed, stream])``
(PCG64 seeded through SeedSequence), so runs are independent and can be
computed in any order or grouping. Indices for a run are drawn one segment at a
time, where segments are the plan's constant-batch runs cut at DRAW_CHUNK
steps; the draw pattern depends only on the plan.

Several runs can be advanced together (``run_many``). All arithmetic is
row-wise, so a run's trace does not depend on which other runs share its call.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergedError, EnumerationTooLargeError, PlanError
from .schedules import lr_array, validate_plan

__all__ = [
    "RunConfig",
    "Trace",
    "BatchMoments",
    "VarianceEstimate",
    "run_rng",
    "minibatch_gradient",
    "sgd_run",
    "run_many",
    "enumerate_batch_moments",
    "mc_variance",
    "DIVERGE_NORM",
    "ENUM_LIMIT",
]

DIVERGE_NORM = 1e12
ENUM_LIMIT = 10**6
TRACE_COLUMNS = ("t", "eta", "b", "grad_norm2", "loss", "subopt")


def run_rng(seed, stream=0):
    """Generator for run ``stream`` under master ``seed``."""
    return np.random.default_rng([int(seed), int(stream)])


@dataclass(frozen=True)
class RunConfig:
    plan: object
    problem: object
    theta0: np.ndarray | None = None
    seed: int = 0
    stream: int = 0
    record_every: int = 1

    def __post_init__(self):
        if self.plan.n != self.problem.n:
            raise PlanError(f"plan n={self.plan.n} but problem n={self.problem.n}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        th = (
            np.zeros(self.problem.dim)
            if self.theta0 is None
            else np.array(self.theta0, dtype=np.float64)
        )
        if th.shape != (self.problem.dim,) or not np.all(np.isfinite(th)):
            raise ValueError(f"theta0 must be a finite vector of length {self.problem.dim}")
        th.flags.writeable = False
        object.__setattr__(self, "theta0", th)

    def with_run(self, seed=None, stream=None):
        return RunConfig(
            self.plan,
            self.problem,
            self.theta0,
            self.seed if seed is None else seed,
            self.stream if stream is None else stream,
            self.record_every,
        )


@dataclass
class Trace:
    """Recorded states ``theta_t`` for ``t`` in ``[0, T)`` that are multiples of ``record_every``."""

    t: np.ndarray
    eta: np.ndarray
    b: np.ndarray
    grad_norm2: np.ndarray
    loss: np.ndarray
    subopt: np.ndarray | None
    final_theta: np.ndarray
    seed: int
    stream: int = 0
    case: str = ""

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b)
        )
        return (
            self.seed == other.seed
            and self.stream == other.stream
            and self.case == other.case
            and all(
                same(getattr(self, k), getattr(other, k))
                for k in ("t", "eta", "b", "grad_norm2", "loss", "subopt", "final_theta")
            )
        )

    def measure(self, name):
        if name == "grad_norm2":
            return self.grad_norm2
        if name == "grad_norm":
            return np.sqrt(self.grad_norm2)
        if name == "subopt":
            if self.subopt is None:
                raise ValueError("suboptimality is not available for this problem")
            return self.subopt
        if name == "loss":
            return self.loss
        raise ValueError(f"unknown measure {name!r}")

    @property
    def filename(self):
        return f"trace_{self.case or 'plan'}_s{self.seed}_r{self.stream}.csv"

    def to_csv(self, fh=None):
        """Write the trace as CSV; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        sub = self.subopt
        for k in range(len(self.t)):
            w.writerow(
                [
                    int(self.t[k]),
                    repr(float(self.eta[k])),
                    int(self.b[k]),
                    repr(float(self.grad_norm2[k])),
                    repr(float(self.loss[k])),
                    "" if sub is None else repr(float(sub[k])),
                ]
            )
        return buf.getvalue() if fh is None else None

    def to_dict(self):
        return {
            "seed": self.seed,
            "stream": self.stream,
            "case": self.case,
            "t": self.t.tolist(),
            "eta": self.eta.tolist(),
            "b": self.b.tolist(),
            "grad_norm2": self.grad_norm2.tolist(),
            "loss": self.loss.tolist(),
            "subopt": None if self.subopt is None else self.subopt.tolist(),
            "final_theta": self.final_theta.tolist(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        arr = lambda k, dt=np.float64: np.asarray(d[k], dtype=dt)
        return cls(
            t=arr("t", np.int64),
            eta=arr("eta"),
            b=arr("b", np.int64),
            grad_norm2=arr("grad_norm2"),
            loss=arr("loss"),
            subopt=None if d.get("subopt") is None else arr("subopt"),
            final_theta=arr("final_theta"),
            seed=d["seed"],
            stream=d.get("stream", 0),
            case=d.get("case", ""),
        )


def minibatch_gradient(problem, theta, b, rng):
    """Mean gradient over ``b`` indices drawn uniformly with replacement."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    idx = rng.integers(0, problem.n, size=int(b))
    return problem.batch_gradient(np.asarray(theta, dtype=np.float64), idx)


def run_many(plan, problem, theta0, keys, record_every=1, *, check=True):
    """Run SGD once per ``(seed, stream)`` key, advancing all runs together.

    Returns one Trace per key, in order. Raises DivergedError for the first
    run whose iterate becomes non-finite or exceeds DIVERGE_NORM in norm.
    """
    if check:
        report = validate_plan(plan)
        if not report.ok:
            raise PlanError(
                "plan rejected: " + "; ".join(c.name for c in report.failed() if c.severity == "error")
            )
    if plan.n != problem.n:
        raise PlanError(f"plan n={plan.n} but problem n={problem.n}")
    keys = [(int(s), int(r)) for s, r in keys]
    S, T = len(keys), plan.T
    if S == 0:
        return []
    rngs = [run_rng(s, r) for s, r in keys]
    theta = np.tile(np.asarray(theta0, dtype=np.float64), (S, 1))
    etas = lr_array(plan)
    bss = plan.bs_values
    rec_t = np.arange(0, T, record_every)
    R = len(rec_t)
    gn2 = np.empty((S, R))
    fv = np.empty((S, R))
    sub = np.empty((S, R)) if problem.suboptimality(theta[:1]) is not None else None
    limit2 = DIVERGE_NORM**2
    r = 0
    for start, stop, b in plan.batch_segments():
        draws = np.stack([g.integers(0, problem.n, size=(stop - start, b)) for g in rngs])
        for t in range(start, stop):
            if t % record_every == 0:
                gn2[:, r] = problem.grad_norm2(theta)
                fv[:, r] = problem.value(theta)
                if sub is not None:
                    sub[:, r] = problem.suboptimality(theta)
                r += 1
            theta = theta - etas[t] * problem.batch_gradient(theta, draws[:, t - start])
            nrm2 = (theta * theta).sum(axis=1)
            bad = ~(nrm2 <= limit2)
            if bad.any():
                k = int(np.argmax(bad))
                raise DivergedError(
                    f"run seed={keys[k][0]} stream={keys[k][1]} diverged at step {t + 1}",
                    last_finite_t=t,
                    seed=keys[k][0],
                )
    case = plan.case_tag.value if plan.case_tag else ""
    eta_rec = np.asarray(etas[rec_t], dtype=np.float64)
    b_rec = np.asarray(bss[rec_t], dtype=np.int64)
    return [
        Trace(
            t=rec_t.copy(),
            eta=eta_rec.copy(),
            b=b_rec.copy(),
            grad_norm2=gn2[k].copy(),
            loss=fv[k].copy(),
            subopt=None if sub is None else sub[k].copy(),
            final_theta=theta[k].copy(),
            seed=keys[k][0],
            stream=keys[k][1],
            case=case,
        )
        for k in range(S)
    ]


def sgd_run(config):
    """Run a single configuration; deterministic in ``(seed, stream)``."""
    return run_many(
        config.plan,
        config.problem,
        config.theta0,
        [(config.seed, config.stream)],
        config.record_every,
    )[0]


@dataclass(frozen=True)
class BatchMoments:
    mean: np.ndarray
    variance: float
    count: int


@dataclass(frozen=True)
class VarianceEstimate:
    estimate: float
    se: float
    draws: int


def _deviations(problem, theta):
    # Centre on sample 0: exact zeros for homogeneous samples, and the batch
    # variance is shift invariant.
    G = problem.per_sample_gradients(np.asarray(theta, dtype=np.float64), np.arange(problem.n))
    D = G - G[0]
    return G, D, D.mean(axis=0)


def enumerate_batch_moments(problem, theta, b):
    """Exact mean and variance of the mini-batch gradient over all ``n**b`` batches."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    n = problem.n
    if n**b > ENUM_LIMIT:
        raise EnumerationTooLargeError(f"n**b = {n}**{b} exceeds {ENUM_LIMIT}")
    G, D, Dbar = _deviations(problem, theta)
    total = np.zeros(problem.dim)
    sq = []
    chunk = max(1, 2**16 // b)
    it = itertools.product(range(n), repeat=b)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        total += G[block].sum(axis=1).sum(axis=0) / b
        dev = D[block].sum(axis=1) / b - Dbar
        sq.extend((dev * dev).sum(axis=1).tolist())
    count = n**b
    return BatchMoments(total / count, math.fsum(sq) / count, count)


def mc_variance(problem, theta, b, draws, rng):
    """Monte-Carlo estimate of ``E ||grad f_B - grad f||^2`` with its standard error."""
    if draws < 1000:
        raise ValueError("need at least 1000 draws")
    if b < 1:
        raise ValueError("batch size must be >= 1")
    _, D, Dbar = _deviations(problem, theta)
    idx = rng.integers(0, problem.n, size=(int(draws), int(b)))
    dev = D[idx].sum(axis=1) / b - Dbar
    x = (dev * dev).sum(axis=1)
    return VarianceEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(draws)), int(draws))
