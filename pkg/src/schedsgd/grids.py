"""Deterministic parameter grids of plans, one grid per closed-form bound row."""

from __future__ import annotations

import itertools
import math

from .errors import PlanError, UnsupportedScheduleError
from .schedules import BsSchedule, LrSchedule, make_plan

__all__ = ["ROWS", "row_grid"]

DECAY = ("constant", "diminishing", "cosine", "polynomial_decay")
ROWS = (
    *(f"const_bs/{f}" for f in DECAY),
    *(f"exp_bs/{f}" for f in DECAY),
    *(f"poly_bs/{f}" for f in DECAY),
    "exp_bs/exp_lr",
    "poly_bs/poly_lr",
    "exp_bs/warmup_constant",
    "exp_bs/warmup_cosine",
)

_ETA_PAIRS = ((0.5, 0.0), (0.1, 0.01), (1.0, 0.9), (0.02, 0.02), (1.9, 0.3))


def _decay_lrs(fam, pairs=_ETA_PAIRS):
    for hi, lo in pairs:
        if fam in ("constant", "diminishing"):
            yield LrSchedule(fam, eta_max=hi)
        elif fam == "cosine":
            yield LrSchedule(fam, eta_max=hi, eta_min=lo)
        else:
            for p in (0.5, 1.0, 3.0):
                yield LrSchedule(fam, eta_max=hi, eta_min=lo, p=p)


def _epoch_patterns(M):
    yield [2] * (M + 1)
    yield [m + 1 for m in range(M + 1)]
    yield [M + 1 - m for m in range(M + 1)]


def _candidates(row):
    head, fam = row.split("/")
    if head == "const_bs":
        for n, b, E, lr in itertools.product((37, 128, 500, 1000), (1, 7, 32), (1, 2, 5, 20), _decay_lrs(fam)):
            yield lr, BsSchedule("constant", b0=b), n, [E]
        return
    if head == "exp_bs" and fam in DECAY:
        for n, b0, d, M, lr in itertools.product(
            (64, 300, 1000), (1, 3), (2.0, 3.0, 4.0), (0, 1, 2, 3), _decay_lrs(fam, _ETA_PAIRS[:3])
        ):
            for ep in _epoch_patterns(M):
                yield lr, BsSchedule("exponential_growth", b0=b0, delta=d), n, ep
        return
    if head == "poly_bs" and fam in DECAY:
        for n, b0, a, c, M, lr in itertools.product(
            (200, 1000), (1, 2, 4), (1.0, 2.0), (2.0, 3.0), (0, 1, 2, 3), _decay_lrs(fam, _ETA_PAIRS[:3])
        ):
            yield lr, BsSchedule("polynomial_growth", b0=b0, a=a, c=c), n, [2] * (M + 1)
        return
    if fam == "exp_lr":
        for n, b0, d, frac, eta0, M in itertools.product(
            (256, 2000), (1, 2), (2.0, 3.0, 4.0), (0.05, 0.5, 0.99), (0.01, 0.1), (0, 1, 2, 3, 5)
        ):
            g = 1 + frac * (math.sqrt(d) - 1)
            for ep in _epoch_patterns(M):
                yield LrSchedule("exponential_growth", eta0=eta0, gamma=g), BsSchedule(
                    "exponential_growth", b0=b0, delta=d
                ), n, ep
        return
    if fam == "poly_lr":
        for n, b0, a1, c1, c2, a2, eta0, M in itertools.product(
            (500, 5000), (1, 3), (1.0, 2.0), (3.0, 4.0), (0.25, 0.5), (0.05, 0.5), (0.01, 0.3), (1, 2, 3)
        ):
            if c1 - 2 * c2 < 2:
                continue
            yield LrSchedule("polynomial_growth", eta0=eta0, a2=a2, c2=c2), BsSchedule(
                "polynomial_growth", b0=b0, a=a1, c=c1
            ), n, [2] * (M + 1)
        return
    for n, b0, d, frac, eta0, M, lo in itertools.product(
        (256, 2000), (1, 2), (2.0, 4.0), (0.2, 0.9), (0.01, 0.1), (1, 2, 4), (0.0, 0.001)
    ):
        g = 1 + frac * (math.sqrt(d) - 1)
        for Mw in range(M):
            for ep in _epoch_patterns(M):
                kw = dict(eta0=eta0, gamma=g, Mw=Mw)
                if fam == "warmup_cosine":
                    kw["eta_min"] = lo
                elif lo:
                    continue
                yield LrSchedule(fam, **kw), BsSchedule("exponential_growth", b0=b0, delta=d), n, ep


def row_grid(row):
    """All grid plans that fall under ``row`` (plans outside it are skipped)."""
    from .bounds import bound_row

    if row not in ROWS:
        raise ValueError(f"unknown row {row!r}")
    out = []
    for lr, bs, n, ep in _candidates(row):
        try:
            plan = make_plan(lr, bs, n, ep)
            if bound_row(plan) == row:
                out.append(plan)
        except (PlanError, UnsupportedScheduleError):
            continue
    return out
