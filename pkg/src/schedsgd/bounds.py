"""Exact B_T / V_T sums, closed-form upper bounds, and the stationarity RHS.

``B_T = 1 / sum(eta_t)`` and ``V_T = sum(eta_t**2 / b_t) / sum(eta_t)``. The
expected squared gradient norm at the best step is bounded by

    2 (f(theta_0) - f_low) / (2 - L eta_max) * B_T + L sigma^2 / (2 - L eta_max) * V_T

and, for convex objectives, the expected suboptimality by ``convex_rhs``.
Closed forms for B_T and V_T are keyed by a *row* naming the batch-size and
learning-rate families they apply to. Where a closed form carries the block
extrema ``K_min E_min`` / ``K_max E_max`` we use the per-block products
``min_m K_m E_m`` / ``max_m K_m E_m``: never looser, and equal when every block
runs the same number of epochs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .errors import ConstraintError, DegeneratePlanError, UnsupportedScheduleError
from .schedules import BsFamily, LrFamily, WARMUP_LR, lr_array, bs_array, validate_plan

__all__ = [
    "ProblemConstants",
    "BoundReport",
    "exact_sums",
    "exact_B",
    "exact_V",
    "bound_row",
    "bound_B",
    "bound_V",
    "stationarity_rhs",
    "convex_rhs",
    "limsup_factor",
    "limsup_asymptote",
    "bound_report",
]

REL_TOL = 1e-12


@dataclass(frozen=True)
class ProblemConstants:
    """Constants entering the stationarity and convex right-hand sides.

    ``f0_gap`` is ``f(theta_0) - f_low`` and ``theta0_dist2`` is
    ``||theta_0 - theta*||**2`` (convex problems only).
    """

    L_bar: float
    f0_gap: float
    sigma2: float
    eta_max: float
    theta0_dist2: float | None = None
    f_low: float = 0.0
    f_star: float | None = None
    sigma2_exact: bool = False

    def __post_init__(self):
        if not self.L_bar > 0:
            raise ConstraintError("L_bar must be > 0")
        if self.f0_gap < 0 or self.sigma2 < 0:
            raise ConstraintError("f0_gap and sigma2 must be >= 0")
        if not self.eta_max > 0:
            raise ConstraintError("eta_max must be > 0")

    @property
    def margin(self):
        """``2 - L_bar * eta_max``; must be positive for any RHS to exist."""
        return 2.0 - self.L_bar * self.eta_max

    def to_dict(self):
        return asdict(self)


def _margin(consts):
    m = consts.margin
    if not m > 0:
        raise ConstraintError(
            f"L_bar * eta_max = {consts.L_bar * consts.eta_max:.6g} must be < 2"
        )
    return m


def exact_sums(plan):
    """``(sum eta_t, sum eta_t**2 / b_t)`` with correctly rounded summation."""
    eta = lr_array(plan)
    b = bs_array(plan)
    s1 = math.fsum(eta.tolist())
    s2 = math.fsum((eta * eta / b).tolist())
    if not s1 > 0:
        raise DegeneratePlanError("sum of learning rates is zero")
    return s1, s2


def exact_B(plan):
    s1, _ = exact_sums(plan)
    return 1.0 / s1


def exact_V(plan):
    s1, s2 = exact_sums(plan)
    return s2 / s1


# -- closed forms -----------------------------------------------------------

_DECAYING = (LrFamily.CONSTANT, LrFamily.DIMINISHING, LrFamily.COSINE, LrFamily.POLYNOMIAL_DECAY)


def bound_row(plan):
    """Name of the closed-form row covering ``plan``.

    Raises UnsupportedScheduleError when no row applies, including plans whose
    batch size is capped at ``n`` or rounded below its formula value (the
    closed forms assume the uncapped, unrounded-down sequence).
    """
    lr, bs = plan.lr.family, plan.bs.family
    row = _match_row(plan, lr, bs)
    report = validate_plan(plan)
    if not report.ok:
        raise UnsupportedScheduleError(
            "plan fails validation: " + "; ".join(c.name for c in report.failed())
        )
    cap = report.get("batch_within_n")
    if cap is not None and not cap.passed:
        raise UnsupportedScheduleError(f"batch size capped at n ({cap.detail})")
    for m, b in enumerate(plan.structure.batch_per_block):
        if b < plan.bs.formula(m) * (1 - REL_TOL):
            raise UnsupportedScheduleError(
                f"block {m} batch {b} rounds below formula value {plan.bs.formula(m):.6g}"
            )
    return row


def _match_row(plan, lr, bs):
    if bs is BsFamily.DECAYING_CONTROL:
        raise UnsupportedScheduleError("decaying batch size has no convergence bound")
    if bs is BsFamily.CONSTANT and lr in _DECAYING:
        return f"const_bs/{lr.value}"
    if bs is BsFamily.EXPONENTIAL_GROWTH and lr in _DECAYING:
        return f"exp_bs/{lr.value}"
    if bs is BsFamily.POLYNOMIAL_GROWTH and lr in _DECAYING:
        if plan.bs.c < 2:
            raise UnsupportedScheduleError(
                f"polynomial batch growth bound needs c >= 2 (got c = {plan.bs.c:.6g})"
            )
        return f"poly_bs/{lr.value}"
    if bs is BsFamily.EXPONENTIAL_GROWTH and lr is LrFamily.EXPONENTIAL_GROWTH:
        return "exp_bs/exp_lr"
    if bs is BsFamily.POLYNOMIAL_GROWTH and lr is LrFamily.POLYNOMIAL_GROWTH:
        if plan.M < 1:
            raise UnsupportedScheduleError("polynomial joint growth bound needs M >= 1")
        s = plan.bs.c - 2 * plan.lr.c2
        if s < 2:
            raise UnsupportedScheduleError(
                f"polynomial joint growth bound needs c1 - 2 c2 >= 2 (got {s:.6g})"
            )
        return "poly_bs/poly_lr"
    if bs is BsFamily.EXPONENTIAL_GROWTH and lr in WARMUP_LR:
        if plan.lr.Mw >= plan.M:
            raise UnsupportedScheduleError("warm-up bound needs a decay phase (Mw < M)")
        return f"exp_bs/{lr.value}"
    raise UnsupportedScheduleError(f"no closed form for bs={bs.value} with lr={lr.value}")


def _gamma_hat(plan):
    g = plan.lr.gamma**2 / plan.bs.delta
    if g >= 1:
        raise ConstraintError(f"gamma^2 / delta = {g:.6g} must be < 1")
    return g


def _decay_B(lr, T):
    fam = lr.family
    if fam is LrFamily.CONSTANT:
        return 1.0 / (lr.eta_max * T)
    if fam is LrFamily.DIMINISHING:
        return 1.0 / (2 * lr.eta_max * (math.sqrt(T + 1) - 1))
    if fam is LrFamily.COSINE:
        return 2.0 / ((lr.eta_min + lr.eta_max) * T)
    p = lr.p
    return (p + 1) / ((p * lr.eta_min + lr.eta_max) * T)


def bound_B(plan):
    """Closed-form upper bound on ``B_T``."""
    row = bound_row(plan)
    lr, st = plan.lr, plan.structure
    if lr.family in _DECAYING:
        return _decay_B(lr, st.T)
    KE = st.KE_min
    if row == "exp_bs/exp_lr":
        _gamma_hat(plan)
        return plan.bs.delta / (lr.eta0 * KE * lr.gamma**plan.M)
    if row == "poly_bs/poly_lr":
        lo = min(lr.a2, lr.eta0)
        return (1 + lr.c2) / (lo**lr.c2 * KE * plan.M ** (1 + lr.c2))
    # warm-up rows
    _gamma_hat(plan)
    rest = st.T - plan.warmup_steps
    warm = plan.bs.delta / (lr.eta0 * KE * lr.gamma**lr.Mw)
    if lr.family is LrFamily.WARMUP_CONSTANT:
        return warm + 1.0 / (lr.peak * rest)
    return warm + 2.0 / ((lr.eta_min + lr.peak) * rest)


def bound_V(plan):
    """Closed-form upper bound on ``V_T``."""
    row = bound_row(plan)
    lr, bs, st = plan.lr, plan.bs, plan.structure
    T = st.T
    fam = lr.family
    if row.startswith("const_bs/"):
        b = st.batch_per_block[0]
        lo, hi = lr.eta_min, lr.eta_max
        if fam is LrFamily.CONSTANT:
            return hi / b
        if fam is LrFamily.DIMINISHING:
            return hi * (1 + math.log(T)) / (2 * b * (math.sqrt(T + 1) - 1))
        if fam is LrFamily.COSINE:
            E = st.total_epochs
            return (3 * lo * lo + 2 * lo * hi + 3 * hi * hi) / (4 * (lo + hi) * b) + (hi - lo) / (
                b * E
            )
        p = lr.p
        return (2 * p * p * lo * lo + 2 * p * lo * hi + (p + 1) * hi * hi) / (
            (2 * p + 1) * (p * lo + hi) * b
        ) + (p + 1) * (hi * hi - lo * lo) / ((p * lo + hi) * b * T)

    KE_max, KE_min = st.KE_max, st.KE_min
    if row == "exp_bs/exp_lr":
        g = _gamma_hat(plan)
        return KE_max * lr.eta0 * bs.delta / (KE_min * bs.b0 * (1 - g) * lr.gamma**plan.M)
    if row == "poly_bs/poly_lr":
        lo_eta = min(lr.a2, lr.eta0)
        hi_eta = max(lr.a2, lr.eta0)
        lo_b = min(bs.a, bs.b0)
        return (
            2
            * KE_max
            * (1 + lr.c2)
            * hi_eta ** (2 * lr.c2)
            / (KE_min * lo_eta**lr.c2 * lo_b**bs.c * plan.M ** (1 + lr.c2))
        )
    if fam in WARMUP_LR:
        g = _gamma_hat(plan)
        d = bs.delta
        rest = T - plan.warmup_steps
        warm = KE_max * lr.eta0 * d / (KE_min * bs.b0 * (1 - g) * lr.gamma**lr.Mw)
        peak = lr.peak
        if fam is LrFamily.WARMUP_CONSTANT:
            return warm + d * peak * KE_max / ((d - 1) * bs.b0 * rest)
        return warm + 2 * d * peak * peak * KE_max / ((d - 1) * (lr.eta_min + peak) * bs.b0 * rest)

    hi, lo = lr.eta_max, lr.eta_min
    if row.startswith("exp_bs/"):
        scale = bs.delta / ((bs.delta - 1) * bs.b0)
    else:
        u = min(bs.a, bs.b0)
        scale = 3.0 / u**bs.c
    if fam is LrFamily.CONSTANT:
        return scale * hi * KE_max / T
    if fam is LrFamily.DIMINISHING:
        return scale * hi * KE_max / (2 * (math.sqrt(T + 1) - 1))
    if fam is LrFamily.COSINE:
        return scale * 2 * hi * hi * KE_max / ((lo + hi) * T)
    p = lr.p
    return scale * (p + 1) * hi * hi * KE_max / ((hi + lo * p) * T)


# -- right-hand sides -------------------------------------------------------


def stationarity_rhs(consts, B, V):
    """Upper bound on ``min_t E ||grad f(theta_t)||**2``."""
    m = _margin(consts)
    return 2 * consts.f0_gap / m * B + consts.L_bar * consts.sigma2 / m * V


def convex_rhs(consts, B, V):
    """Upper bound on ``min_t E[f(theta_t) - f*]`` for convex ``f``."""
    if consts.theta0_dist2 is None:
        raise ConstraintError("convex_rhs needs theta0_dist2")
    m = _margin(consts)
    bias = consts.theta0_dist2 / 2 + consts.eta_max * consts.f0_gap / m
    noise = consts.sigma2 / 2 * (1 + consts.L_bar * consts.eta_max / m)
    return bias * B + noise * V


def limsup_factor(family, eta, p=None):
    """The learning-rate factor of the large-T noise floor."""
    fam = LrFamily(family)
    if fam is LrFamily.CONSTANT:
        return eta
    if fam is LrFamily.COSINE:
        return 0.75 * eta
    if fam is LrFamily.POLYNOMIAL_DECAY:
        if p is None or not p > 0:
            raise ConstraintError("polynomial decay needs p > 0")
        return (p + 1) * eta / (2 * p + 1)
    raise UnsupportedScheduleError(f"no asymptote for {fam.value}")


def limsup_asymptote(family, eta, p, consts, b):
    """Large-T limit of the stationarity bound under a constant batch size ``b``."""
    margin = 2.0 - consts.L_bar * eta
    if not margin > 0:
        raise ConstraintError(f"L_bar * eta = {consts.L_bar * eta:.6g} must be < 2")
    return consts.L_bar * consts.sigma2 / (margin * b) * limsup_factor(family, eta, p)


# -- report -----------------------------------------------------------------


def _le(a, b):
    return a <= b + REL_TOL * abs(b)


@dataclass
class BoundReport:
    case: str | None
    row: str | None
    T: int
    B_exact: float
    V_exact: float
    B_bound: float | None = None
    V_bound: float | None = None
    stationarity_rhs_exact: float | None = None
    stationarity_rhs_bound: float | None = None
    convex_rhs_exact: float | None = None
    convex_rhs_bound: float | None = None
    limsup_asymptote: float | None = None
    dominated: dict = field(default_factory=dict)
    note: str = ""

    @property
    def ok(self):
        return all(self.dominated.values())

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def bound_report(plan, consts=None):
    """Exact sums, closed forms (when a row applies) and the right-hand sides.

    Missing closed forms are recorded in ``note`` rather than raised.
    """
    B, V = exact_B(plan), exact_V(plan)
    case = plan.case_tag.value if plan.case_tag else None
    rep = BoundReport(case=case, row=None, T=plan.T, B_exact=B, V_exact=V)
    try:
        rep.row = bound_row(plan)
        rep.B_bound, rep.V_bound = bound_B(plan), bound_V(plan)
        rep.dominated["B"] = _le(B, rep.B_bound)
        rep.dominated["V"] = _le(V, rep.V_bound)
    except (UnsupportedScheduleError, ConstraintError) as exc:
        rep.note = str(exc)
    if consts is not None:
        rep.stationarity_rhs_exact = stationarity_rhs(consts, B, V)
        if rep.B_bound is not None:
            rep.stationarity_rhs_bound = stationarity_rhs(consts, rep.B_bound, rep.V_bound)
            rep.dominated["stationarity"] = _le(rep.stationarity_rhs_exact, rep.stationarity_rhs_bound)
        if consts.theta0_dist2 is not None:
            rep.convex_rhs_exact = convex_rhs(consts, B, V)
            if rep.B_bound is not None:
                rep.convex_rhs_bound = convex_rhs(consts, rep.B_bound, rep.V_bound)
        fam = plan.lr.family
        if plan.bs.family is BsFamily.CONSTANT and fam in (
            LrFamily.CONSTANT,
            LrFamily.COSINE,
            LrFamily.POLYNOMIAL_DECAY,
        ):
            try:
                rep.limsup_asymptote = limsup_asymptote(
                    fam, plan.lr.eta_max, plan.lr.p, consts, plan.structure.batch_per_block[0]
                )
            except ConstraintError:
                pass
    return rep
