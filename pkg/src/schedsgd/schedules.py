"""Learning-rate and batch-size schedules on a block/epoch structure.

Training is split into blocks ``m = 0..M``. Block ``m`` runs ``E_m`` epochs of
``K_m = ceil(n / b_m)`` steps each at batch size ``b_m``; the block-indexed
schedules (growth and warm-up families) are constant inside a block.

Every schedule has a scalar evaluator (``lr_at`` / ``bs_at``) and a vectorized
one (``lr_array`` / ``bs_array``). The two are implemented independently and
cross-checked in the test suite.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import PlanError, ScheduleRangeError

__all__ = [
    "LrFamily",
    "BsFamily",
    "CaseTag",
    "LrSchedule",
    "BsSchedule",
    "BlockStructure",
    "SchedulerPlan",
    "Check",
    "ValidationReport",
    "build_structure",
    "make_plan",
    "lr_at",
    "bs_at",
    "lr_array",
    "bs_array",
    "validate_plan",
]


class LrFamily(str, Enum):
    CONSTANT = "constant"
    DIMINISHING = "diminishing"
    COSINE = "cosine"
    POLYNOMIAL_DECAY = "polynomial_decay"
    EXPONENTIAL_GROWTH = "exponential_growth"
    POLYNOMIAL_GROWTH = "polynomial_growth"
    WARMUP_CONSTANT = "warmup_constant"
    WARMUP_COSINE = "warmup_cosine"


class BsFamily(str, Enum):
    CONSTANT = "constant"
    POLYNOMIAL_GROWTH = "polynomial_growth"
    EXPONENTIAL_GROWTH = "exponential_growth"
    DECAYING_CONTROL = "decaying_control"


class CaseTag(str, Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"
    CASE_III = "CaseIII"
    CASE_IV = "CaseIV"
    CONTROL = "Control"


DECAYING_LR = frozenset(
    {LrFamily.CONSTANT, LrFamily.DIMINISHING, LrFamily.COSINE, LrFamily.POLYNOMIAL_DECAY}
)
GROWTH_LR = frozenset({LrFamily.EXPONENTIAL_GROWTH, LrFamily.POLYNOMIAL_GROWTH})
WARMUP_LR = frozenset({LrFamily.WARMUP_CONSTANT, LrFamily.WARMUP_COSINE})
GROWTH_BS = frozenset({BsFamily.POLYNOMIAL_GROWTH, BsFamily.EXPONENTIAL_GROWTH})

# Longest run of steps drawn with one call to the sampler. Part of the
# sampling contract: changing it changes every trace.
DRAW_CHUNK = 1024


def _require(cond, msg):
    if not cond:
        raise PlanError(msg)


def _positive(x):
    return x is not None and math.isfinite(x) and x > 0


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate rule.

    Only the fields used by ``family`` are read:

    ========================  =======================================
    constant, diminishing     ``eta_max``
    cosine                    ``eta_max``, ``eta_min``
    polynomial_decay          ``eta_max``, ``eta_min``, ``p``
    exponential_growth        ``eta0``, ``gamma``
    polynomial_growth         ``eta0``, ``a2``, ``c2``
    warmup_constant           ``eta0``, ``gamma``, ``Mw``
    warmup_cosine             ``eta0``, ``gamma``, ``Mw``, ``eta_min``
    ========================  =======================================

    For the warm-up families the peak rate is ``eta0 * gamma**Mw``; ``eta_max``
    is ignored. ``Ew`` (warm-up epochs) is derived from the block structure; if
    given it must agree with it.
    """

    family: LrFamily
    eta_max: float | None = None
    eta_min: float = 0.0
    eta0: float | None = None
    p: float | None = None
    gamma: float | None = None
    a2: float | None = None
    c2: float | None = None
    Mw: int | None = None
    Ew: int | None = None

    def __post_init__(self):
        try:
            fam = LrFamily(self.family)
        except ValueError:
            raise PlanError(f"unknown learning-rate family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        _require(
            math.isfinite(self.eta_min) and self.eta_min >= 0, "eta_min must be finite and >= 0"
        )
        if fam in DECAYING_LR:
            _require(_positive(self.eta_max), f"{fam.value}: eta_max must be > 0")
            if fam in (LrFamily.COSINE, LrFamily.POLYNOMIAL_DECAY):
                _require(self.eta_min <= self.eta_max, "need 0 <= eta_min <= eta_max")
            if fam is LrFamily.POLYNOMIAL_DECAY:
                _require(_positive(self.p), "polynomial_decay: p must be > 0")
        else:
            _require(_positive(self.eta0), f"{fam.value}: eta0 must be > 0")
        if fam in (LrFamily.EXPONENTIAL_GROWTH,) or fam in WARMUP_LR:
            _require(
                self.gamma is not None and math.isfinite(self.gamma) and self.gamma > 1,
                f"{fam.value}: gamma must be > 1",
            )
        if fam is LrFamily.POLYNOMIAL_GROWTH:
            _require(_positive(self.a2), "polynomial_growth: a2 must be > 0")
            _require(_positive(self.c2), "polynomial_growth: c2 must be > 0")
        if fam in WARMUP_LR:
            _require(
                isinstance(self.Mw, (int, np.integer)) and self.Mw >= 0,
                f"{fam.value}: Mw must be an integer >= 0",
            )
            object.__setattr__(self, "Mw", int(self.Mw))
            if fam is LrFamily.WARMUP_COSINE:
                _require(self.eta_min <= self.peak, "warmup_cosine: eta_min exceeds eta0*gamma**Mw")

    @property
    def peak(self):
        """Warm-up peak rate ``eta0 * gamma**Mw``."""
        return self.eta0 * self.gamma**self.Mw

    def block_rate(self, m):
        """Rate of a block-indexed family in block ``m`` (growth phase)."""
        fam = self.family
        if fam is LrFamily.EXPONENTIAL_GROWTH:
            return self.eta0 * self.gamma**m
        if fam is LrFamily.POLYNOMIAL_GROWTH:
            return (self.a2 * m + self.eta0) ** self.c2
        if fam in WARMUP_LR:
            return self.eta0 * self.gamma ** min(m, self.Mw)
        raise PlanError(f"{fam.value} is not block-indexed")


@dataclass(frozen=True)
class BsSchedule:
    """Batch-size rule.

    Block ``m`` uses ``b0`` (constant), ``(a*m + b0)**c`` (polynomial growth) or
    ``delta**m * b0`` (exponential growth); values are rounded to the nearest
    integer, floored at 1 and capped at ``n``. ``decaying_control`` is per
    step: ``ceil(b0 / (t + 1))``.
    """

    family: BsFamily
    b0: int = 1
    a: float | None = None
    c: float | None = None
    delta: float | None = None

    def __post_init__(self):
        try:
            fam = BsFamily(self.family)
        except ValueError:
            raise PlanError(f"unknown batch-size family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        _require(
            isinstance(self.b0, (int, np.integer)) and self.b0 >= 1, "b0 must be an integer >= 1"
        )
        object.__setattr__(self, "b0", int(self.b0))
        if fam is BsFamily.POLYNOMIAL_GROWTH:
            _require(_positive(self.a), "polynomial_growth: a must be > 0")
            _require(
                self.c is not None and math.isfinite(self.c) and self.c > 1,
                "polynomial_growth: c must be > 1",
            )
        if fam is BsFamily.EXPONENTIAL_GROWTH:
            _require(
                self.delta is not None and math.isfinite(self.delta) and self.delta > 1,
                "exponential_growth: delta must be > 1",
            )

    def formula(self, m):
        """Unrounded, uncapped block-``m`` batch size."""
        fam = self.family
        if fam is BsFamily.POLYNOMIAL_GROWTH:
            return (self.a * m + self.b0) ** self.c
        if fam is BsFamily.EXPONENTIAL_GROWTH:
            return self.delta**m * self.b0
        return float(self.b0)

    def block_batch(self, m, n):
        return min(n, max(1, math.floor(self.formula(m) + 0.5)))


@dataclass(frozen=True)
class BlockStructure:
    n: int
    epochs_per_block: tuple
    batch_per_block: tuple
    steps_per_epoch: tuple
    block_boundaries: tuple

    @property
    def M(self):
        return len(self.epochs_per_block) - 1

    @property
    def T(self):
        return self.block_boundaries[-1]

    @property
    def total_epochs(self):
        return sum(self.epochs_per_block)

    @property
    def K_min(self):
        return min(self.steps_per_epoch)

    @property
    def K_max(self):
        return max(self.steps_per_epoch)

    @property
    def E_min(self):
        return min(self.epochs_per_block)

    @property
    def E_max(self):
        return max(self.epochs_per_block)

    @property
    def KE_min(self):
        """Smallest per-block step count ``min_m K_m E_m`` (at least ``K_min * E_min``)."""
        return min(k * e for k, e in zip(self.steps_per_epoch, self.epochs_per_block))

    @property
    def KE_max(self):
        """Largest per-block step count ``max_m K_m E_m`` (at most ``K_max * E_max``)."""
        return max(k * e for k, e in zip(self.steps_per_epoch, self.epochs_per_block))

    def block_start(self, m):
        return 0 if m == 0 else self.block_boundaries[m - 1]

    def epoch_start(self, m):
        """Epochs completed before block ``m``."""
        return sum(self.epochs_per_block[:m])

    def block_of(self, t):
        if not 0 <= t < self.T:
            raise ScheduleRangeError(f"step {t} outside [0, {self.T})")
        return bisect.bisect_right(self.block_boundaries, t)


def build_structure(n, bs, epochs_per_block):
    """Derive ``K_m``, block boundaries and ``T`` for ``bs`` on ``n`` samples."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise PlanError("n must be an integer >= 1")
    epochs = tuple(int(e) for e in epochs_per_block)
    if not epochs:
        raise PlanError("epochs_per_block must be non-empty")
    if any(e < 1 for e in epochs):
        raise PlanError("every E_m must be >= 1")
    if bs.b0 > n:
        raise PlanError(f"b0={bs.b0} exceeds n={n}")
    batches = tuple(bs.block_batch(m, n) for m in range(len(epochs)))
    steps = tuple(-(-n // b) for b in batches)
    bounds = tuple(int(x) for x in np.cumsum([k * e for k, e in zip(steps, epochs)]))
    return BlockStructure(int(n), epochs, batches, steps, bounds)


@dataclass(frozen=True)
class SchedulerPlan:
    lr: LrSchedule
    bs: BsSchedule
    structure: BlockStructure

    @property
    def n(self):
        return self.structure.n

    @property
    def T(self):
        return self.structure.T

    @property
    def M(self):
        return self.structure.M

    @property
    def case_tag(self):
        """Scheduler case implied by the families, or None for unsupported mixes."""
        lf, bf = self.lr.family, self.bs.family
        if bf is BsFamily.DECAYING_CONTROL:
            return CaseTag.CONTROL
        if bf is BsFamily.CONSTANT:
            return CaseTag.CASE_I if lf in DECAYING_LR else None
        if lf in DECAYING_LR:
            return CaseTag.CASE_II
        if lf in GROWTH_LR:
            return CaseTag.CASE_III
        return CaseTag.CASE_IV

    @property
    def warmup_steps(self):
        """``T_w``: steps in blocks ``0..Mw`` (warm-up families only)."""
        if self.lr.family not in WARMUP_LR:
            return 0
        return self.structure.block_boundaries[min(self.lr.Mw, self.M)]

    @property
    def warmup_epochs(self):
        """``E_w``: epochs in blocks ``0..Mw``."""
        if self.lr.family not in WARMUP_LR:
            return 0
        return self.structure.epoch_start(min(self.lr.Mw, self.M) + 1)

    @property
    def eta_max(self):
        """Largest rate the plan emits."""
        return float(self.lr_values.max())

    @cached_property
    def lr_values(self):
        arr = _lr_array(self)
        arr.flags.writeable = False
        return arr

    @cached_property
    def bs_values(self):
        arr = _bs_array(self)
        arr.flags.writeable = False
        return arr

    def batch_segments(self):
        """``(start, stop, b)`` runs of constant batch size, at most DRAW_CHUNK long."""
        if self.bs.family is BsFamily.DECAYING_CONTROL:
            bs = self.bs_values
            out, start = [], 0
            for t in range(1, self.T + 1):
                if t == self.T or bs[t] != bs[start] or t - start == DRAW_CHUNK:
                    out.append((start, t, int(bs[start])))
                    start = t
            return out
        out = []
        st = self.structure
        for m, b in enumerate(st.batch_per_block):
            lo, hi = st.block_start(m), st.block_boundaries[m]
            for s in range(lo, hi, DRAW_CHUNK):
                out.append((s, min(hi, s + DRAW_CHUNK), b))
        return out


def _lr_scalar(plan, t, m):
    lr, st = plan.lr, plan.structure
    fam = lr.family
    if fam is LrFamily.CONSTANT:
        return lr.eta_max
    if fam is LrFamily.DIMINISHING:
        return lr.eta_max / math.sqrt(t + 1)
    if fam is LrFamily.COSINE:
        e = st.epoch_start(m) + (t - st.block_start(m)) // st.steps_per_epoch[m]
        v = lr.eta_min + 0.5 * (lr.eta_max - lr.eta_min) * (
            1 + math.cos(e * math.pi / st.total_epochs)
        )
        return min(max(v, lr.eta_min), lr.eta_max)
    if fam is LrFamily.POLYNOMIAL_DECAY:
        v = (lr.eta_max - lr.eta_min) * (1 - t / st.T) ** lr.p + lr.eta_min
        return min(max(v, lr.eta_min), lr.eta_max)
    if fam is LrFamily.WARMUP_COSINE and m > lr.Mw:
        ew = st.epoch_start(lr.Mw + 1)
        e = st.epoch_start(m) + (t - st.block_start(m)) // st.steps_per_epoch[m] - ew
        v = lr.eta_min + 0.5 * (lr.peak - lr.eta_min) * (
            1 + math.cos(e * math.pi / (st.total_epochs - ew))
        )
        return min(max(v, lr.eta_min), lr.peak)
    return lr.block_rate(m)


def lr_at(plan, t):
    """Learning rate at global step ``t``."""
    m = plan.structure.block_of(t)
    return _lr_scalar(plan, t, m)


def bs_at(plan, t):
    """Batch size at global step ``t``."""
    m = plan.structure.block_of(t)
    if plan.bs.family is BsFamily.DECAYING_CONTROL:
        return min(plan.n, -(-plan.bs.b0 // (t + 1)))
    return plan.structure.batch_per_block[m]


def _epoch_index(st):
    """Cumulative epoch index of every step."""
    parts = []
    for m, (k, e) in enumerate(zip(st.steps_per_epoch, st.epochs_per_block)):
        parts.append(st.epoch_start(m) + np.arange(k * e) // k)
    return np.concatenate(parts)


def _block_index(st):
    return np.repeat(
        np.arange(st.M + 1),
        [k * e for k, e in zip(st.steps_per_epoch, st.epochs_per_block)],
    )


def _lr_array(plan):
    lr, st = plan.lr, plan.structure
    fam, T = lr.family, st.T
    t = np.arange(T, dtype=np.float64)
    if fam is LrFamily.CONSTANT:
        return np.full(T, lr.eta_max)
    if fam is LrFamily.DIMINISHING:
        return lr.eta_max / np.sqrt(t + 1)
    # Decaying values are clipped into [eta_min, eta_max]: the formulas can
    # overshoot by an ulp at the endpoints.
    if fam is LrFamily.COSINE:
        e = _epoch_index(st)
        v = lr.eta_min + 0.5 * (lr.eta_max - lr.eta_min) * (1 + np.cos(e * np.pi / st.total_epochs))
        return np.clip(v, lr.eta_min, lr.eta_max)
    if fam is LrFamily.POLYNOMIAL_DECAY:
        v = (lr.eta_max - lr.eta_min) * (1 - t / T) ** lr.p + lr.eta_min
        return np.clip(v, lr.eta_min, lr.eta_max)
    m = _block_index(st)
    rates = np.array([lr.block_rate(k) for k in range(st.M + 1)])
    out = rates[m]
    if fam is LrFamily.WARMUP_COSINE and lr.Mw < st.M:
        ew = st.epoch_start(lr.Mw + 1)
        tw = st.block_boundaries[lr.Mw]
        e = _epoch_index(st)[tw:] - ew
        v = lr.eta_min + 0.5 * (lr.peak - lr.eta_min) * (
            1 + np.cos(e * np.pi / (st.total_epochs - ew))
        )
        out[tw:] = np.clip(v, lr.eta_min, lr.peak)
    return out


def _bs_array(plan):
    st = plan.structure
    if plan.bs.family is BsFamily.DECAYING_CONTROL:
        t = np.arange(st.T, dtype=np.int64)
        return np.minimum(plan.n, -(-plan.bs.b0 // (t + 1)))
    return np.asarray(st.batch_per_block, dtype=np.int64)[_block_index(st)]


def lr_array(plan):
    """All rates ``eta_0 .. eta_{T-1}`` (read-only)."""
    return plan.lr_values


def bs_array(plan):
    """All batch sizes ``b_0 .. b_{T-1}`` (read-only)."""
    return plan.bs_values


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    case_tag: CaseTag | None
    checks: tuple = field(default_factory=tuple)

    @property
    def control(self):
        return self.case_tag is CaseTag.CONTROL

    @property
    def ok(self):
        return all(c.passed for c in self.checks if c.severity == "error")

    @property
    def rejected(self):
        return not self.ok

    @property
    def warnings(self):
        return [c for c in self.checks if c.severity == "warning" and not c.passed]

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        return None

    def to_dict(self):
        return {
            "case": self.case_tag.value if self.case_tag else None,
            "ok": self.ok,
            "control": self.control,
            "checks": [
                {"name": c.name, "passed": c.passed, "severity": c.severity, "detail": c.detail}
                for c in self.checks
            ],
        }


def _monotone(x, increasing):
    d = np.diff(x)
    tol = 1e-15 * np.maximum(np.abs(x[:-1]), np.abs(x[1:]))
    return bool(np.all(d >= -tol)) if increasing else bool(np.all(d <= tol))


def validate_plan(plan):
    """Check the plan against the invariants of its scheduler case.

    Error-level failures reject the plan. ``batch_within_n`` is a warning: a
    capped batch size is still a legal run, but the closed-form bounds no
    longer apply to it.
    """
    case = plan.case_tag
    lr, bs, st = plan.lr, plan.bs, plan.structure
    etas, bss = plan.lr_values, plan.bs_values
    checks = [
        Check(
            "case",
            case is not None,
            f"lr={lr.family.value}, bs={bs.family.value} -> {case.value if case else 'no case'}",
        ),
        Check("lr_positive", bool(etas.min() > 0), f"min eta = {etas.min():.6g}"),
    ]
    exp_pair = bs.family is BsFamily.EXPONENTIAL_GROWTH and (
        lr.family is LrFamily.EXPONENTIAL_GROWTH or lr.family in WARMUP_LR
    )
    if case in (CaseTag.CASE_III, CaseTag.CASE_IV) and exp_pair:
        g2 = lr.gamma**2
        checks.append(
            Check("gamma_delta", g2 < bs.delta, f"gamma^2 = {g2:.6g} vs delta = {bs.delta:.6g}")
        )
    if (
        case is CaseTag.CASE_III
        and bs.family is BsFamily.POLYNOMIAL_GROWTH
        and lr.family is LrFamily.POLYNOMIAL_GROWTH
    ):
        s = bs.c - 2 * lr.c2
        checks.append(Check("poly_exponents", s > 1, f"c1 - 2 c2 = {s:.6g}"))
    if lr.family in WARMUP_LR:
        checks.append(Check("warmup_blocks", lr.Mw <= st.M, f"Mw = {lr.Mw}, M = {st.M}"))
        if lr.Ew is not None:
            ew = st.epoch_start(min(lr.Mw, st.M) + 1)
            checks.append(Check("warmup_epochs", lr.Ew == ew, f"Ew = {lr.Ew}, blocks give {ew}"))
    if case in (CaseTag.CASE_I, CaseTag.CASE_II):
        checks.append(Check("lr_monotone", _monotone(etas, False), "nonincreasing"))
    elif case is CaseTag.CASE_III:
        checks.append(Check("lr_monotone", _monotone(etas, True), "nondecreasing"))
    elif case is CaseTag.CASE_IV:
        tw = plan.warmup_steps
        ok = _monotone(etas[:tw], True) and _monotone(etas[max(tw - 1, 0):], False)
        checks.append(Check("lr_monotone", ok, f"nondecreasing to T_w={tw}, then nonincreasing"))
    if bs.family in GROWTH_BS:
        checks.append(Check("bs_monotone", _monotone(bss, True), "nondecreasing"))
    if bs.family is not BsFamily.DECAYING_CONTROL:
        raw = max(bs.formula(m) for m in range(st.M + 1))
        checks.append(
            Check(
                "batch_within_n",
                math.floor(raw + 0.5) <= st.n,
                f"largest formula batch {raw:.6g} vs n = {st.n}",
                severity="warning",
            )
        )
    else:
        checks.append(
            Check("control", False, "decaying batch size: intentionally non-convergent", "warning")
        )
    return ValidationReport(case, tuple(checks))


def make_plan(lr, bs, n, epochs_per_block, *, strict=True):
    """Build a plan; with ``strict`` a plan failing validation raises PlanError.

    Control plans are accepted under ``strict``: they are meant to be run.
    """
    plan = SchedulerPlan(lr, bs, build_structure(n, bs, epochs_per_block))
    if strict:
        report = validate_plan(plan)
        if not report.ok:
            msgs = "; ".join(f"{c.name}: {c.detail}" for c in report.failed() if c.severity == "error")
            raise PlanError(f"plan rejected ({msgs})")
    return plan
