import csv
import io
import json

import numpy as np
import pytest

from schedsgd.engine import (
    RunConfig,
    Trace,
    enumerate_batch_moments,
    mc_variance,
    minibatch_gradient,
    run_many,
    run_rng,
    sgd_run,
)
from schedsgd.errors import DivergedError, EnumerationTooLargeError, PlanError
from schedsgd.problems import (
    certify_constants,
    logistic,
    make_logistic,
    make_quadratic,
    make_sine_quadratic,
    quadratic,
)
from schedsgd.schedules import BsSchedule, LrSchedule, make_plan

CONST = lambda eta: LrSchedule("constant", eta_max=eta)
FIXED = lambda b: BsSchedule("constant", b0=b)


def const_plan(eta, b, n, epochs):
    return make_plan(CONST(eta), FIXED(b), n, [epochs])


# -- minibatch gradient -----------------------------------------------------


def test_minibatch_homogeneous_full_batch():
    p = quadratic(np.full((6, 3), 0.75))
    th = np.array([0.1, -2.0, 3.3])
    g = minibatch_gradient(p, th, 6, run_rng(0))
    assert np.array_equal(g, p.full_gradient(th))


def test_minibatch_zero_variance_every_draw():
    p = quadratic(np.full((5, 2), -1.25), lam=3.0)
    th = np.array([0.4, 0.9])
    rng = run_rng(1)
    for b in (1, 2, 3, 4, 7, 16):
        for _ in range(20):
            assert np.array_equal(minibatch_gradient(p, th, b, rng), p.full_gradient(th))


def test_minibatch_rejects_empty_batch(toy4):
    with pytest.raises(ValueError):
        minibatch_gradient(toy4, np.zeros(1), 0, run_rng(0))


def test_minibatch_advances_rng(toy4):
    a, b = run_rng(3), run_rng(3)
    g1 = [minibatch_gradient(toy4, np.zeros(1), 2, a) for _ in range(5)]
    g2 = [minibatch_gradient(toy4, np.zeros(1), 2, b) for _ in range(5)]
    assert all(np.array_equal(x, y) for x, y in zip(g1, g2))
    assert len({float(x[0]) for x in g1}) > 1


# -- enumeration oracle -----------------------------------------------------


def test_enumeration_toy4_b2(toy4):
    th = np.array([1.7])
    mom = enumerate_batch_moments(toy4, th, 2)
    assert mom.count == 16
    assert mom.mean == pytest.approx(th - 0.5, rel=1e-15)
    assert mom.variance == pytest.approx(0.625, rel=1e-12)


def test_enumeration_b1_is_spread(quad64):
    th = np.linspace(-1, 1, 10)
    assert enumerate_batch_moments(quad64, th, 1).variance == pytest.approx(
        certify_constants(quad64).sigma2, rel=1e-12
    )


def test_enumeration_equal_centers():
    p = quadratic(np.full((5, 2), 0.3))
    for b in (1, 2, 3):
        assert enumerate_batch_moments(p, np.array([1.0, 2.0]), b).variance == 0.0


def test_enumeration_limit(quad64):
    with pytest.raises(EnumerationTooLargeError):
        enumerate_batch_moments(quad64, np.zeros(10), 4)
    with pytest.raises(ValueError):
        enumerate_batch_moments(quad64, np.zeros(10), 0)


def _small(kind, n, seed):
    if kind == "quadratic":
        return make_quadratic(n, 3, lam=1.3, seed=seed)
    if kind == "logistic":
        return make_logistic(n, 3, seed=seed, feature_scale=2.0)
    return make_sine_quadratic(n, 3, amp=0.4, seed=seed)


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "sine_quadratic"])
def test_enumeration_grid(kind):
    rng = np.random.default_rng(7)
    for n in range(1, 9):
        p = _small(kind, n, seed=n)
        cert = certify_constants(p)
        for _ in range(10):
            th = rng.normal(scale=2.0, size=3)
            g = p.full_gradient(th)
            scale = max(np.abs(p.per_sample_gradients(th, np.arange(n))).max(), 1e-300)
            for b in (1, 2, 3):
                mom = enumerate_batch_moments(p, th, b)
                assert np.max(np.abs(mom.mean - g)) <= 1e-12 * scale
                assert mom.variance <= cert.sigma2 / b + 1e-12
                if cert.sigma2_exact:
                    assert mom.variance == pytest.approx(cert.sigma2 / b, rel=1e-12, abs=1e-300)


# -- Monte-Carlo variance ---------------------------------------------------


def test_mc_variance_matches_enumeration(toy4):
    th = np.array([0.2])
    exact = enumerate_batch_moments(toy4, th, 2).variance
    est = mc_variance(toy4, th, 2, 20000, run_rng(5))
    assert abs(est.estimate - exact) <= 3 * est.se
    assert est.draws == 20000


def test_mc_variance_halves_when_b_doubles(quad64):
    th = np.zeros(10)
    v2 = mc_variance(quad64, th, 2, 20000, run_rng(6))
    v4 = mc_variance(quad64, th, 4, 20000, run_rng(7))
    assert abs(v4.estimate - v2.estimate / 2) <= 3 * np.hypot(v4.se, v2.se / 2)


def test_mc_variance_zero_noise():
    p = quadratic(np.full((9, 4), 1.1))
    est = mc_variance(p, np.ones(4), 3, 1000, run_rng(0))
    assert est.estimate == 0.0 and est.se == 0.0


def test_mc_variance_needs_draws(toy4):
    with pytest.raises(ValueError):
        mc_variance(toy4, np.zeros(1), 2, 999, run_rng(0))


# -- runs -------------------------------------------------------------------


def test_newton_step():
    p = quadratic(np.array([[3.7, -1.5]]))
    tr = sgd_run(RunConfig(const_plan(1.0, 1, 1, 2), p))
    assert tr.t.tolist() == [0, 1]
    assert tr.grad_norm2[1] == 0.0
    assert tr.final_theta.tolist() == [3.7, -1.5]


def test_zero_step_size_rejected():
    with pytest.raises(PlanError):
        const_plan(0.0, 1, 4, 1)


def test_config_checks(toy4, quad64):
    plan = const_plan(0.1, 1, 4, 2)
    with pytest.raises(PlanError):
        RunConfig(plan, quad64)
    with pytest.raises(ValueError):
        RunConfig(plan, toy4, theta0=np.array([np.nan]))
    with pytest.raises(ValueError):
        RunConfig(plan, toy4, record_every=0)
    assert RunConfig(plan, toy4).theta0.tolist() == [0.0]


def test_replay_is_bit_exact(quad64):
    rc = RunConfig(const_plan(0.1, 4, 64, 10), quad64, seed=42, stream=3)
    a, b = sgd_run(rc), sgd_run(rc)
    assert a == b
    assert a.to_csv() == b.to_csv()


def test_seeds_and_streams_differ(quad64):
    rc = RunConfig(const_plan(0.1, 4, 64, 10), quad64, seed=1)
    base = sgd_run(rc)
    assert not np.array_equal(base.grad_norm2, sgd_run(rc.with_run(seed=2)).grad_norm2)
    assert not np.array_equal(base.grad_norm2, sgd_run(rc.with_run(stream=1)).grad_norm2)


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "sine_quadratic"])
def test_batched_runs_equal_single_runs(kind):
    p = _small(kind, 24, seed=2)
    plan = make_plan(
        LrSchedule("exponential_growth", eta0=0.05, gamma=1.3),
        BsSchedule("exponential_growth", b0=1, delta=2),
        24,
        [3, 3, 3],
    )
    keys = [(9, r) for r in range(5)] + [(10, 0)]
    many = run_many(plan, p, np.ones(3), keys, record_every=2)
    for (s, r), tr in zip(keys, many):
        assert tr == sgd_run(RunConfig(plan, p, np.ones(3), s, r, record_every=2))


def test_trace_records(quad64):
    plan = const_plan(0.1, 16, 64, 10)
    tr = sgd_run(RunConfig(plan, quad64, record_every=7))
    assert tr.t[0] == 0 and np.all(np.diff(tr.t) == 7) and tr.t[-1] < plan.T
    assert np.all(tr.grad_norm2 >= 0)
    assert tr.case == "CaseI"
    assert np.all(tr.eta == 0.1) and np.all(tr.b == 16)
    assert tr.filename == "trace_CaseI_s0_r0.csv"


def test_logistic_trace_has_no_subopt():
    p = make_logistic(16, 3, seed=0)
    tr = sgd_run(RunConfig(const_plan(0.5, 2, 16, 2), p))
    assert tr.subopt is None
    with pytest.raises(ValueError):
        tr.measure("subopt")


def test_trace_serialisation_round_trip(quad64):
    tr = sgd_run(RunConfig(const_plan(0.1, 4, 64, 3), quad64, seed=5, record_every=3))
    assert Trace.from_dict(json.loads(tr.to_json())) == tr
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["t", "eta", "b", "grad_norm2", "loss", "subopt"]
    assert len(rows) == len(tr.t) + 1
    assert [float(r[3]) for r in rows[1:]] == tr.grad_norm2.tolist()
    assert [float(r[5]) for r in rows[1:]] == tr.subopt.tolist()


def test_divergence_reports_last_finite_step():
    p = quadratic(np.zeros((3, 1)))
    rc = RunConfig(const_plan(2.5, 1, 3, 100), p, theta0=np.array([1.0]), seed=8)
    with pytest.raises(DivergedError) as info:
        sgd_run(rc)
    # theta_t = (-1.5)^t crosses 1e12 in norm at t = 69
    assert info.value.last_finite_t == 68
    assert info.value.seed == 8


# -- expectation oracles ----------------------------------------------------


def exact_expected_grad_norm2(problem, theta0, etas, bs):
    """Closed-form E||grad f(theta_t)||^2 for an equal-curvature quadratic."""
    lam = problem.lam
    s2 = certify_constants(problem).sigma2
    e = np.asarray(theta0, dtype=np.float64) - problem.c_bar
    v = 0.0
    out = []
    for eta, b in zip(etas, bs):
        out.append(lam**2 * (float(e @ e) + v))
        q = 1 - eta * lam
        e = q * e
        v = q * q * v + eta * eta * s2 / b
    return np.array(out)


def seed_stats(traces, key="grad_norm2"):
    Y = np.stack([t.measure(key) for t in traces])
    return Y.mean(axis=0), Y.std(axis=0, ddof=1) / np.sqrt(len(traces))


def test_mean_matches_exact_recursion(quad64):
    plan = make_plan(
        LrSchedule("exponential_growth", eta0=0.05, gamma=1.4),
        BsSchedule("exponential_growth", b0=1, delta=2),
        64,
        [4, 4, 4, 4],
    )
    traces = run_many(plan, quad64, np.zeros(10), [(0, r) for r in range(400)])
    mean, se = seed_stats(traces)
    want = exact_expected_grad_norm2(quad64, np.zeros(10), plan.lr_values, plan.bs_values)
    z = np.abs(mean - want) / np.maximum(se, 1e-300)
    # a handful of 4-sigma excursions across ~1000 correlated steps would be suspicious
    assert np.mean(z > 4) < 0.01
    assert mean[0] == pytest.approx(want[0], rel=1e-14)
    assert se[0] <= 1e-14 * mean[0]


def plateau(traces):
    Y = np.stack([t.grad_norm2 for t in traces])
    tail = Y[:, int(0.9 * Y.shape[1]) :].mean(axis=1)
    return tail.mean(), tail.std(ddof=1) / np.sqrt(len(tail))


def test_noise_floor_monotone(quad64):
    theta0 = quad64.c_bar.copy()
    grid = {}
    for eta in (0.05, 0.1, 0.2):
        for b in (1, 4, 16):
            plan = const_plan(eta, b, 64, 2000 * b // 64)
            grid[eta, b] = plateau(run_many(plan, quad64, theta0, [(1, r) for r in range(100)]))
    for b in (1, 4, 16):
        for lo, hi in ((0.05, 0.1), (0.1, 0.2)):
            (m1, s1), (m2, s2) = grid[lo, b], grid[hi, b]
            assert m2 - m1 > 2 * np.hypot(s1, s2)
    for eta in (0.05, 0.1, 0.2):
        for lo, hi in ((1, 4), (4, 16)):
            (m1, s1), (m2, s2) = grid[eta, lo], grid[eta, hi]
            assert m1 - m2 > 2 * np.hypot(s1, s2)


@pytest.mark.parametrize(
    "lr",
    [CONST(0.1), LrSchedule("exponential_growth", eta0=0.1, gamma=1.4)],
    ids=["case_ii", "case_iii"],
)
def test_block_end_decay(quad64, lr):
    plan = make_plan(lr, BsSchedule("exponential_growth", b0=2, delta=2), 64, [50] * 5)
    traces = run_many(plan, quad64, np.zeros(10), [(2, r) for r in range(100)])
    mean, se = seed_stats(traces)
    ends = [plan.structure.block_start(m + 1) - 1 for m in range(plan.M)] + [plan.T - 1]
    for a, b in zip(ends, ends[1:]):
        assert mean[b] <= mean[a] + 2 * np.hypot(se[a], se[b])
