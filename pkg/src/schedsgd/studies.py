"""Monte-Carlo studies comparing schedules on certified quadratics.

Each study returns a small result object; the scripts in ``scripts/`` print
them and the acceptance tests check them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .harness import Experiment, Measure, min_estimate, rate_fit, run_experiment
from .problems import make_quadratic
from .schedules import BsSchedule, LrSchedule, make_plan

__all__ = [
    "RateSeparation",
    "RateStudy",
    "PlateauComparison",
    "rate_separation",
    "caseii_rate",
    "plateau_comparison",
]


@dataclass
class RateSeparation:
    M: list
    constant_lr: list
    growing_lr: list
    constant_se: list = field(default_factory=list)
    growing_se: list = field(default_factory=list)
    fit_growing: object = None
    fit_constant: object = None

    def rows(self):
        return list(zip(self.M, self.constant_lr, self.growing_lr))


def rate_separation(
    Ms=range(4, 11),
    seeds=100,
    seed=0,
    n=1024,
    dim=10,
    eta=0.001,
    gamma=1.4,
    delta=2.0,
    epochs=2,
    problem=None,
):
    """Paired constant-LR vs growing-LR runs on one exponential batch trajectory.

    Both members of a pair share the problem, the seeds and the batch-size
    schedule; only the learning rate differs. The measure is ``||grad f||``.
    The default problem has centers far from the origin relative to their
    spread, so the early bias term dominates and the geometric gain of the
    growing learning rate is visible over a short range of M.
    """
    if problem is None:
        problem = make_quadratic(
            n, dim, seed=seed, center_offset=math.sqrt(dim), center_scale=math.sqrt(0.1)
        )
    bs = BsSchedule("exponential_growth", b0=1, delta=delta)
    out = RateSeparation([], [], [])
    for M in Ms:
        ep = [epochs] * (M + 1)
        for lr, vals, ses in (
            (LrSchedule("constant", eta_max=eta), out.constant_lr, out.constant_se),
            (LrSchedule("exponential_growth", eta0=eta, gamma=gamma), out.growing_lr, out.growing_se),
        ):
            plan = make_plan(lr, bs, problem.n, ep)
            m, s = min_estimate(
                Experiment(f"M{M}", plan, problem, seeds=seeds, seed=seed, measure=Measure.GRAD_NORM)
            )
            vals.append(m)
            ses.append(s)
        out.M.append(M)
    out.fit_growing = rate_fit(out.M, out.growing_lr, mode="loglinear")
    out.fit_constant = rate_fit(out.M, out.constant_lr, mode="loglinear")
    return out


@dataclass
class RateStudy:
    T: list
    estimate: list
    se: list
    fit: object


def caseii_rate(
    epochs=(5, 15, 50, 200, 800), seeds=100, seed=0, n=80, dim=10, eta=0.1, b0=1, delta=2.0, problem=None
):
    """Min ``||grad f||`` estimate vs T for constant LR with exponential batch growth.

    Block ``m`` runs ``epochs[m]`` epochs; plan ``k`` uses the first ``k + 1``
    blocks. The defaults make T double from plan to plan (1000 ... 8000).
    """
    if problem is None:
        problem = make_quadratic(n, dim, seed=seed)
    bs = BsSchedule("exponential_growth", b0=b0, delta=delta)
    lr = LrSchedule("constant", eta_max=eta)
    Ts, est, ses = [], [], []
    for M in range(1, len(epochs)):
        plan = make_plan(lr, bs, problem.n, list(epochs[: M + 1]))
        m, s = min_estimate(
            Experiment(f"T{plan.T}", plan, problem, seeds=seeds, seed=seed, measure=Measure.GRAD_NORM)
        )
        Ts.append(plan.T)
        est.append(m)
        ses.append(s)
    return RateStudy(Ts, est, ses, rate_fit(Ts, est, mode="loglog"))


@dataclass
class PlateauComparison:
    names: list
    plateau: list
    se: list

    def as_dict(self):
        return {k: (p, s) for k, p, s in zip(self.names, self.plateau, self.se)}


def _plateau(traces, frac):
    Y = np.stack([tr.grad_norm2 for tr in traces])
    tail = Y[:, int(math.floor((1 - frac) * Y.shape[1])) :].mean(axis=1)
    return float(tail.mean()), float(tail.std(ddof=1) / math.sqrt(len(tail)))


def plateau_comparison(
    eta=0.1, b=16, epochs=500, seeds=100, seed=0, n=64, dim=10, tail=0.1, p=2.0, problem=None
):
    """Mean ``||grad f||^2`` over the last ``tail`` fraction of steps, per decay family."""
    if problem is None:
        problem = make_quadratic(n, dim, seed=seed)
    lrs = {
        "constant": LrSchedule("constant", eta_max=eta),
        "cosine": LrSchedule("cosine", eta_max=eta, eta_min=0.0),
        "polynomial_decay": LrSchedule("polynomial_decay", eta_max=eta, eta_min=0.0, p=p),
    }
    out = PlateauComparison([], [], [])
    for name, lr in lrs.items():
        plan = make_plan(lr, BsSchedule("constant", b0=b), problem.n, [epochs])
        m, s = _plateau(run_experiment(Experiment(name, plan, problem, seeds=seeds, seed=seed)), tail)
        out.names.append(name)
        out.plateau.append(m)
        out.se.append(s)
    return out
