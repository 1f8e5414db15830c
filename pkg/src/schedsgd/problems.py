"""Synthetic finite-sum objectives with certified smoothness and variance constants.

Three kinds are provided, all with ``f = mean_i f_i``:

* ``quadratic``: ``f_i = lam/2 ||theta - c_i||^2``. Every ``f_i`` has the same
  curvature, so gradient deviations ``lam (c_bar - c_i)`` do not depend on
  ``theta`` and the variance constant is exact.
* ``logistic``: ``f_i = log(1 + exp(-y_i <x_i, theta>))`` with ``y_i = +-1``.
* ``sine_quadratic``: the quadratic plus ``amp * sum_j sin(theta_j)^2``, a
  nonconvex but globally smooth perturbation.

Every evaluator accepts a single point of shape ``(d,)`` or a stack of points
``(S, d)``; rows never interact, so a row of a stacked call is bitwise equal to
the corresponding single call. Generators draw data from
``numpy.random.default_rng(seed)`` (PCG64), so a seed fixes the data and the
certified constants exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bounds import ProblemConstants
from .errors import NonFiniteError

__all__ = [
    "ProblemKind",
    "Problem",
    "GradientSample",
    "Certificate",
    "quadratic",
    "logistic",
    "sine_quadratic",
    "make_quadratic",
    "make_logistic",
    "make_sine_quadratic",
    "certify_constants",
    "full_gradient",
    "sample_gradient",
    "loss",
]


class ProblemKind(str, Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    SINE_QUADRATIC = "sine_quadratic"


@dataclass(frozen=True)
class GradientSample:
    value: np.ndarray
    index: int


@dataclass(frozen=True)
class Certificate:
    """Analytic constants of a problem; ``sigma2_exact`` marks equality vs upper bound."""

    kind: str
    L_i: np.ndarray
    L_bar: float
    f_low: float
    sigma2: float
    sigma2_exact: bool
    theta_star: np.ndarray | None = None
    f_star: float | None = None

    @property
    def convex(self):
        return self.theta_star is not None

    def constants(self, problem, theta0, eta_max):
        """Bind an initial point and a peak learning rate into ProblemConstants."""
        theta0 = np.asarray(theta0, dtype=np.float64)
        f0 = float(problem.loss(theta0))
        dist2 = None
        if self.theta_star is not None:
            diff = theta0 - self.theta_star
            dist2 = float(diff @ diff)
        return ProblemConstants(
            L_bar=self.L_bar,
            f0_gap=max(f0 - self.f_low, 0.0),
            sigma2=self.sigma2,
            eta_max=float(eta_max),
            theta0_dist2=dist2,
            f_low=self.f_low,
            f_star=self.f_star,
            sigma2_exact=self.sigma2_exact,
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "L_bar": self.L_bar,
            "L_max": float(self.L_i.max()),
            "f_low": self.f_low,
            "sigma2": self.sigma2,
            "sigma2_flag": "exact" if self.sigma2_exact else "upper-bound",
            "f_star": self.f_star,
            "theta_star": None if self.theta_star is None else self.theta_star.tolist(),
        }


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_finite(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("theta has non-finite components")
    return theta


class Problem:
    """A finite sum ``f = (1/n) sum_i f_i`` over ``n`` samples in ``R^dim``."""

    def __init__(self, kind, *, centers=None, lam=1.0, amp=0.0, X=None, y=None):
        self.kind = ProblemKind(kind)
        if self.kind is ProblemKind.LOGISTIC:
            if X is None or y is None:
                raise ValueError("logistic problems need X and y")
            self.X = _frozen(X)
            self.y = _frozen(y)
            if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
                raise ValueError("X must be (n, d) and y (n,)")
            if not np.all(np.abs(self.y) == 1):
                raise ValueError("labels must be +1 or -1")
            self.n, self.dim = self.X.shape
            self.lam, self.amp = 0.0, 0.0
            self._yX = _frozen(self.y[:, None] * self.X)
        else:
            if centers is None:
                raise ValueError(f"{self.kind.value} problems need centers")
            c = _frozen(centers)
            if c.ndim == 1:
                c = _frozen(c[:, None])
            self.centers = c
            self.n, self.dim = c.shape
            if not lam > 0:
                raise ValueError("lam must be > 0")
            if amp < 0:
                raise ValueError("amp must be >= 0")
            self.lam = float(lam)
            self.amp = float(amp) if self.kind is ProblemKind.SINE_QUADRATIC else 0.0
            self.c_bar = _frozen(c.mean(axis=0))
            dev = c - self.c_bar
            self._spread = math.fsum((dev * dev).sum(axis=1).tolist()) / self.n
        if self.n < 1:
            raise ValueError("need at least one sample")

    def __repr__(self):
        extra = "" if self.kind is ProblemKind.LOGISTIC else f", lam={self.lam}"
        if self.kind is ProblemKind.SINE_QUADRATIC:
            extra += f", amp={self.amp}"
        return f"Problem({self.kind.value}, n={self.n}, dim={self.dim}{extra})"

    # -- raw evaluators (no input checks; used by the engine) --

    def per_sample_gradients(self, theta, idx):
        """Gradients ``grad f_i(theta)`` for ``i`` in ``idx``; shape ``idx.shape + (d,)``.

        ``theta`` is ``(d,)`` with 1-D ``idx``, or ``(S, d)`` with ``idx`` of shape ``(S, k)``.
        """
        theta = np.asarray(theta, dtype=np.float64)
        idx = np.asarray(idx)
        th = theta[..., None, :]
        if self.kind is ProblemKind.LOGISTIC:
            yx = self._yX[idx]
            z = (yx * th).sum(axis=-1)
            return -yx * _sigmoid(-z)[..., None]
        g = self.lam * (th - self.centers[idx])
        if self.amp:
            g = g + self.amp * np.sin(2.0 * th)
        return g

    def batch_gradient(self, theta, idx):
        """Mean of the per-sample gradients over the last axis of ``idx``."""
        theta = np.asarray(theta, dtype=np.float64)
        idx = np.asarray(idx)
        b = idx.shape[-1]
        if self.kind is ProblemKind.LOGISTIC:
            return self.per_sample_gradients(theta, idx).sum(axis=-2) / b
        cm = self.centers[idx].sum(axis=-2) / b
        g = self.lam * (theta - cm)
        if self.amp:
            g = g + self.amp * np.sin(2.0 * theta)
        return g

    def gradient(self, theta):
        """Full gradient without input checks."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind is ProblemKind.LOGISTIC:
            z = (theta[..., None, :] * self._yX).sum(axis=-1)
            w = _sigmoid(-z)
            return -(w[..., None] * self._yX).sum(axis=-2) / self.n
        g = self.lam * (theta - self.c_bar)
        if self.amp:
            g = g + self.amp * np.sin(2.0 * theta)
        return g

    def grad_norm2(self, theta):
        g = self.gradient(theta)
        return (g * g).sum(axis=-1)

    def value(self, theta):
        """Loss without input checks."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind is ProblemKind.LOGISTIC:
            z = (theta[..., None, :] * self._yX).sum(axis=-1)
            return np.logaddexp(0.0, -z).sum(axis=-1) / self.n
        u = theta - self.c_bar
        f = 0.5 * self.lam * ((u * u).sum(axis=-1) + self._spread)
        if self.amp:
            s = np.sin(theta)
            f = f + self.amp * (s * s).sum(axis=-1)
        return f

    def suboptimality(self, theta):
        """``f(theta) - f*`` for the quadratic kind, else None."""
        if self.kind is not ProblemKind.QUADRATIC:
            return None
        u = np.asarray(theta, dtype=np.float64) - self.c_bar
        return 0.5 * self.lam * (u * u).sum(axis=-1)

    def sample_loss(self, theta, i):
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind is ProblemKind.LOGISTIC:
            return float(np.logaddexp(0.0, -(self._yX[i] @ theta)))
        u = theta - self.centers[i]
        f = 0.5 * self.lam * float(u @ u)
        if self.amp:
            f += self.amp * float((np.sin(theta) ** 2).sum())
        return f

    # -- checked public API --

    def full_gradient(self, theta):
        return self.gradient(_check_finite(theta))

    def loss(self, theta):
        v = self.value(_check_finite(theta))
        return float(v) if np.ndim(v) == 0 else v

    def sample_gradient(self, theta, i):
        theta = _check_finite(theta)
        if not 0 <= i < self.n:
            raise IndexError(f"sample index {i} outside [0, {self.n})")
        return GradientSample(self.per_sample_gradients(theta, np.array([i]))[0], int(i))

    def gradient_spread(self, theta):
        """``(1/n) sum_i ||grad f_i(theta) - grad f(theta)||^2`` at a single point."""
        theta = _check_finite(theta)
        G = self.per_sample_gradients(theta, np.arange(self.n))
        dev = G - self.gradient(theta)
        return float((dev * dev).sum(axis=1).mean())

    def certify(self):
        return certify_constants(self)


def quadratic(centers, lam=1.0):
    return Problem(ProblemKind.QUADRATIC, centers=centers, lam=lam)


def sine_quadratic(centers, lam=1.0, amp=0.5):
    return Problem(ProblemKind.SINE_QUADRATIC, centers=centers, lam=lam, amp=amp)


def logistic(X, y):
    return Problem(ProblemKind.LOGISTIC, X=X, y=y)


def make_quadratic(n=64, dim=10, lam=1.0, seed=0, center_offset=1.0, center_scale=1.0):
    """Centers ``c_i ~ center_offset + center_scale * N(0, I)``."""
    rng = np.random.default_rng(seed)
    return quadratic(center_offset + center_scale * rng.standard_normal((n, dim)), lam)


def make_sine_quadratic(n=64, dim=10, lam=1.0, amp=0.5, seed=0, center_offset=1.0, center_scale=1.0):
    rng = np.random.default_rng(seed)
    return sine_quadratic(center_offset + center_scale * rng.standard_normal((n, dim)), lam, amp)


def make_logistic(n=64, dim=10, seed=0, feature_scale=1.0, label_noise=0.1):
    """Gaussian features labelled by a random linear teacher, with flipped labels."""
    rng = np.random.default_rng(seed)
    X = feature_scale * rng.standard_normal((n, dim)) / math.sqrt(dim)
    w = rng.standard_normal(dim)
    y = np.where(X @ w >= 0, 1.0, -1.0)
    flip = rng.random(n) < label_noise
    return logistic(X, np.where(flip, -y, y))


def certify_constants(problem):
    """Smoothness, lower bound and gradient-variance constant of ``problem``.

    Quadratic: ``sigma2 = lam^2/n sum ||c_i - c_bar||^2`` exactly. Logistic:
    ``L_i = ||x_i||^2/4`` and ``sigma2 <= mean ||x_i||^2``, since the variance
    is at most the second moment and the loss derivative is bounded by one.
    Sine-quadratic: ``L_i = lam + 2 amp`` and the quadratic value plus
    ``4 amp^2 d``. ``f_low = 0`` for all kinds since every ``f_i >= 0``.
    """
    kind = problem.kind
    n = problem.n
    if kind is ProblemKind.LOGISTIC:
        sq = (problem.X * problem.X).sum(axis=1)
        L_i = _frozen(sq / 4.0)
        return Certificate(
            kind=kind.value,
            L_i=L_i,
            L_bar=math.fsum(L_i.tolist()) / n,
            f_low=0.0,
            sigma2=math.fsum(sq.tolist()) / n,
            sigma2_exact=False,
        )
    quad_sigma2 = problem.lam**2 * problem._spread
    if kind is ProblemKind.QUADRATIC:
        return Certificate(
            kind=kind.value,
            L_i=_frozen(np.full(n, problem.lam)),
            L_bar=problem.lam,
            f_low=0.0,
            sigma2=quad_sigma2,
            sigma2_exact=True,
            theta_star=problem.c_bar,
            f_star=0.5 * problem.lam * problem._spread,
        )
    if kind is ProblemKind.SINE_QUADRATIC:
        L = problem.lam + 2.0 * problem.amp
        return Certificate(
            kind=kind.value,
            L_i=_frozen(np.full(n, L)),
            L_bar=L,
            f_low=0.0,
            sigma2=quad_sigma2 + 4.0 * problem.amp**2 * problem.dim,
            sigma2_exact=problem.amp == 0,
        )
    raise ValueError(f"unsupported problem kind {kind!r}")


def full_gradient(problem, theta):
    return problem.full_gradient(theta)


def sample_gradient(problem, theta, i):
    return problem.sample_gradient(theta, i)


def loss(problem, theta):
    return problem.loss(theta)
