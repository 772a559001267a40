import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twosided.errors import ConfigInvalid, InfeasibleDemand, NoRoot
from twosided.queue import (
    LinearDemand,
    PowerDemand,
    QueueConfig,
    QueueState,
    Sampler,
    TableDemand,
    delta_schedule,
    loglog_slope,
    match_amount,
    merge_reports,
    poisson_log_mgf,
    profit_upper_bound,
    simulate,
    solve_pstar,
    step,
    tau_star,
)
from twosided.stats import RngHandle


# ---------------------------------------------------------------- demand and p*


def test_demand_validation():
    with pytest.raises(ValueError):
        TableDemand((0, 1, 2), (1.0, 1.5, 0.0))  # increasing piece
    with pytest.raises(ValueError):
        TableDemand((0, 1, 2), (2.0, 0.5, 0.0))  # convex kink
    with pytest.raises(ValueError):
        PowerDemand(3.0, 1.0, theta=1.5)
    d = TableDemand((0, 1, 2), (2.0, 1.5, 0.0))
    assert d(0.5) == pytest.approx(1.75)


def test_pstar_slack():
    ps = solve_pstar(LinearDemand(2.0, 1.0), 1.1)
    assert ps.price == pytest.approx(1.0, abs=1e-9)
    assert ps.mu == pytest.approx(1.0, abs=1e-9)
    assert ps.regime == "slack"


def test_pstar_equality():
    ps = solve_pstar(LinearDemand(2.0, 1.0), 0.8)
    assert ps.price == pytest.approx(1.2, abs=1e-9)
    assert ps.mu == pytest.approx(0.8, abs=1e-9)
    assert ps.regime == "equality"
    cfg = QueueConfig(lam=0.8, demand=LinearDemand(2.0, 1.0), U=400)
    assert cfg.p_eff == pytest.approx(1.2 * 1.001, abs=1e-9)
    assert cfg.customer_rate == pytest.approx(0.8 - 1.2e-3, abs=1e-9)
    assert cfg.jensen_bound == pytest.approx(1.2 * 0.8, abs=1e-8)


def test_pstar_unconstrained_when_lambda_large():
    d = PowerDemand(3.5, 1.0, theta=0.5)
    ps = solve_pstar(d, 10.0)
    grid = np.linspace(0, 3.5, 350001)
    best = grid[np.argmax(grid * np.sqrt(3.5 - grid))]
    assert ps.price == pytest.approx(7 / 3, abs=1e-6)
    assert ps.price == pytest.approx(best, abs=2e-5)


def test_pstar_infeasible():
    with pytest.raises(InfeasibleDemand):
        solve_pstar(LinearDemand(5.0, 1.0, p_hi=2.0), 1.0)


# ---------------------------------------------------------------- schedule and matching


def test_delta_schedule():
    assert delta_schedule(100, 2, 2) == pytest.approx(4 * math.log(100) / 100)
    assert delta_schedule(100, 2, 2) == pytest.approx(0.18421, abs=5e-6)
    assert delta_schedule(400, 2, 2) == pytest.approx(0.05991, abs=5e-6)
    assert delta_schedule(1e9, 2, 2) < 1e-7


@pytest.mark.parametrize("n, m", [(0.5, 0.0), (10, 0.9), (50, 0.9), (60, 1.1), (0.9, 0.9)])
def test_match_amount(n, m):
    assert match_amount(n, 1.0, 0.1, 100) == pytest.approx(m)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e3), st.floats(0.1, 5), st.floats(0.01, 0.99), st.floats(2, 500))
def test_match_never_exceeds_n(n, mu, frac, U):
    assert 0 <= match_amount(n, mu, frac * mu, U) <= n


# ---------------------------------------------------------------- config


def cfg_fixed_delta(**kw):
    return QueueConfig.for_rates(1.0, 0.1, 100, delta=0.1, **kw)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        QueueConfig.for_rates(1.0, 0.1, 100, delta=1.5)
    with pytest.raises(ConfigInvalid):
        QueueConfig.for_rates(1.0, 0.1, 2.5, delta=0.5)  # U/2 < mu* + delta
    with pytest.raises(ConfigInvalid):
        QueueConfig.for_rates(1.0, 0.1, 100, s_bar=80)
    with pytest.raises(ConfigInvalid):
        QueueConfig.for_rates(1.0, 0.1, 100, decay_exponent=1.5)
    with pytest.raises(ConfigInvalid):
        QueueConfig(lam=0.5, demand=LinearDemand(5.0, 1.0, p_hi=2.0), U=100)
    cfg = QueueConfig.for_rates(1.0, 0.1, 100)
    assert cfg.s_bar == 400 and cfg.delta == pytest.approx(0.18421, abs=5e-6)


# ---------------------------------------------------------------- step


def test_step_examples():
    cfg = cfg_fixed_delta()
    nxt, m, profit = step(QueueState(5.0, 3.0), 1, 0, cfg)
    assert m == pytest.approx(0.9)
    assert (nxt.s, nxt.q_c) == (pytest.approx(5.1), pytest.approx(2.1))
    assert profit == pytest.approx(0.9 * cfg.p_eff)
    capped, m, _ = step(QueueState(cfg.s_bar, 0.0), 2, 0, cfg)
    assert m == 0 and capped.s == cfg.s_bar
    empty, m, profit = step(QueueState(), 0, 0, cfg)
    assert (empty.s, empty.q_c, m, profit) == (0.0, 0.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 500), st.floats(0, 500), st.integers(0, 10), st.integers(0, 10))
def test_step_keeps_queues_valid(s, c, a, b):
    cfg = cfg_fixed_delta()
    s = min(s, cfg.s_bar)
    nxt, m, _ = step(QueueState(s, c), a, b, cfg)
    assert m <= min(s, c) + 1e-12
    assert 0 <= nxt.s <= cfg.s_bar and nxt.q_c >= 0


# ---------------------------------------------------------------- simulator vs reference replay


def replay(cfg, horizon, warmup, seed, stream_id, n_batches):
    """Pure-Python run of ``step`` on the simulator's own arrival streams."""
    batch_len = horizon // n_batches
    total = warmup + batch_len * n_batches
    root = RngHandle(seed, stream_id)
    a = cfg.server_sampler.block(root.child(0), cfg.lam, total)
    b = cfg.customer_sampler.block(root.child(1), cfg.customer_rate, total)
    state = QueueState()
    fifo = deque()
    out = {k: np.zeros(n_batches) for k in ("out", "n", "high", "profit", "wait", "dep")}
    for t in range(total):
        n = state.n
        state, m, profit = step(state, a[t], b[t], cfg)
        wait, rem = 0.0, m
        while rem > 1e-12 and fifo:
            t0, amt = fifo[0]
            take = min(amt, rem)
            wait += take * (t - t0)
            rem -= take
            if amt <= take + 1e-12:
                fifo.popleft()
            else:
                fifo[0] = (t0, amt - take)
        if b[t] > 0:
            fifo.append((t, b[t]))
        if t >= warmup:
            j = (t - warmup) // batch_len
            out["out"][j] += n < cfg.mu_star - cfg.delta
            out["high"][j] += n > cfg.U / 2
            out["n"][j] += n
            out["profit"][j] += profit
            out["wait"][j] += wait
            out["dep"][j] += m
    return state, out, batch_len, a, b


@pytest.mark.parametrize("sampler", ["poisson", "deterministic", "bernoulli"])
def test_kernel_matches_reference(sampler):
    cfg = QueueConfig.for_rates(
        1.0, 0.1, 10, server_sampler=Sampler(sampler), customer_sampler=Sampler(sampler)
    )
    rep = simulate(cfg, 20_000, 2_000, seed=4, stream_id=2, n_batches=10)
    state, out, batch_len, _, _ = replay(cfg, 20_000, 2_000, 4, 2, 10)
    assert rep.final_state.s == pytest.approx(state.s, abs=1e-9)
    assert rep.final_state.q_c == pytest.approx(state.q_c, abs=1e-9)
    np.testing.assert_allclose(rep.outage_prob.batch_means, out["out"] / batch_len, atol=1e-12)
    np.testing.assert_allclose(rep.frac_high.batch_means, out["high"] / batch_len, atol=1e-12)
    np.testing.assert_allclose(rep.mean_n.batch_means, out["n"] / batch_len, rtol=1e-9)
    np.testing.assert_allclose(rep.profit_rate.batch_means, out["profit"] / batch_len, rtol=1e-9)
    np.testing.assert_allclose(rep.mean_w.batch_means, out["wait"] / out["dep"], rtol=1e-9)


def test_small_u_has_outages_and_consistent_fractions():
    cfg = QueueConfig.for_rates(2.0, 0.1, 10)
    rep = simulate(cfg, 300_000, seed=1)
    assert rep.outage_prob.overall_mean > 0
    assert rep.outage_prob.overall_mean <= rep.frac_low.overall_mean
    assert rep.frac_high.overall_mean + rep.frac_low.overall_mean == pytest.approx(1.0)
    assert rep.warmup == 30_000 and rep.horizon == 300_000


def test_chunking_does_not_change_results():
    cfg = QueueConfig.for_rates(1.0, 0.1, 10)
    a = simulate(cfg, 60_000, 6_000, seed=2, n_batches=30)
    b = simulate(cfg, 60_000, 6_000, seed=2, n_batches=30, chunk=999)
    assert a.final_state == b.final_state
    assert a.mean_n.batch_means == b.mean_n.batch_means
    assert a.mean_w.batch_means == pytest.approx(b.mean_w.batch_means, rel=1e-12)


def test_fifo_growth_preserves_waits():
    # many tiny customer batches force the FIFO to grow past its initial size
    cfg = QueueConfig.for_rates(1.0, 0.1, 4000)
    rep = simulate(cfg, 60_000, 60_000, seed=3, n_batches=10)
    state, out, _, _, _ = replay(cfg, 60_000, 60_000, 3, 0, 10)
    np.testing.assert_allclose(rep.mean_w.batch_means, out["wait"] / out["dep"], rtol=1e-9)


def test_determinism():
    cfg = QueueConfig.for_rates(2.0, 0.1, 50)
    assert simulate(cfg, 200_000, seed=9, stream_id=1) == simulate(cfg, 200_000, seed=9, stream_id=1)
    assert simulate(cfg, 200_000, seed=9, stream_id=1) != simulate(cfg, 200_000, seed=9, stream_id=2)


def test_merge_is_order_independent():
    cfg = QueueConfig.for_rates(1.0, 0.1, 10)
    reps = [simulate(cfg, 30_000, seed=5, stream_id=k) for k in range(3)]
    a, b = merge_reports(reps), merge_reports(reps[::-1])
    assert a == b
    assert a.horizon == 90_000 and a.outage_prob.n_batches == 90
    with pytest.raises(ValueError):
        merge_reports([reps[0], simulate(QueueConfig.for_rates(1.0, 0.1, 12), 30_000)])


@pytest.mark.slow
def test_conservation_over_ten_million_slots():
    rep = simulate(QueueConfig.for_rates(1.0, 0.1, 100), 10_000_000, 0, seed=1)
    assert rep.conservation_error <= 1e-6


def test_customer_queue_is_stable_over_doubling_horizons():
    cfg = QueueConfig.for_rates(1.0, 0.1, 50)
    means = [simulate(cfg, h, seed=3).mean_q_c for h in (250_000, 500_000, 1_000_000, 2_000_000)]
    centre = np.mean([m.overall_mean for m in means])
    for m in means:
        assert abs(m.overall_mean - centre) <= 0.05 * centre


def test_littles_law_and_jensen():
    for mu in (1.0, 2.0):
        cfg = QueueConfig.for_rates(mu, 0.1, 50)
        rep = simulate(cfg, 2_000_000, seed=8)
        # sample-path form: realised throughput times mean wait is the mean queue
        little = rep.match_rate.overall_mean * rep.mean_w.overall_mean
        assert little == pytest.approx(rep.mean_q_c.overall_mean, rel=1e-4)
        assert rep.mean_w.overall_mean * rep.mu_star == pytest.approx(rep.mean_n.overall_mean, rel=5e-3)
        assert rep.profit_rate.overall_mean <= rep.jensen_bound + rep.profit_rate.ci_halfwidth
        assert rep.match_rate.overall_mean == pytest.approx(mu, rel=2e-3)


def test_tail_above_u_non_increasing_in_u():
    tails = [simulate(QueueConfig.for_rates(2.0, 0.1, u), 1_000_000, seed=6).tail_above_u.overall_mean
             for u in (10, 20, 50, 100)]
    assert all(x >= y for x, y in zip(tails, tails[1:]))
    assert tails[0] > tails[-1]


def test_log1p_profit():
    cfg = cfg_fixed_delta(profit_fn="log1p")
    rep = simulate(cfg, 200_000, seed=1)
    assert cfg.jensen_bound == pytest.approx(math.log(2), abs=1e-9)
    assert rep.profit_rate.overall_mean <= cfg.jensen_bound + rep.profit_rate.ci_halfwidth


# ---------------------------------------------------------------- Jensen bound and tau*


def test_profit_upper_bound():
    d = LinearDemand(2.0, 1.0)
    assert profit_upper_bound(d, 1.1) == pytest.approx(1.0, abs=1e-12)
    assert profit_upper_bound(d, 1.1, "log1p") == pytest.approx(0.69315, abs=5e-6)
    eps_small = QueueConfig(lam=0.8, demand=d, U=400, epsilon=1e-6)
    eps_big = QueueConfig(lam=0.8, demand=d, U=400, epsilon=1e-2)
    assert eps_small.jensen_bound == eps_big.jensen_bound == pytest.approx(profit_upper_bound(d, 0.8))


def newton_root(f, df, x):
    for _ in range(100):
        x -= f(x) / df(x)
    return x


def test_tau_star_example():
    root = newton_root(lambda t: math.exp(-t) - 1 + 0.9 * t, lambda t: -math.exp(-t) + 0.9, 1.0)
    got = tau_star(1.0, 0.1, poisson_log_mgf(1.0))
    assert got == pytest.approx(root, rel=1e-10)
    # the commonly quoted value 0.2135 is about 0.5% below the actual root 0.21456
    assert got == pytest.approx(0.2135, abs=2e-3)


def test_tau_star_small_delta_slope():
    mgf = poisson_log_mgf(1.0)
    d = 1e-3
    slope = (tau_star(1.0, d, mgf) - tau_star(1.0, d / 2, mgf)) / (d / 2)
    assert abs(slope / 2.0 - 1) <= 0.05


def test_tau_star_degenerate_and_errors():
    assert tau_star(1.0, 0.0, poisson_log_mgf(1.0)) == 0.0
    with pytest.raises(ValueError):
        tau_star(1.0, 1.5, poisson_log_mgf(1.0))
    with pytest.raises(NoRoot):
        tau_star(1.0, 0.1, lambda s: -2.0 * s)  # psi(tau) = 2.9 tau never crosses


# ---------------------------------------------------------------- helpers


def test_loglog_slope():
    us = [50, 100, 200, 400]
    slope, n = loglog_slope(us, [3 * u ** -2.0 for u in us])
    assert slope == pytest.approx(-2.0) and n == 4
    assert loglog_slope(us, [1e-3, 0, 0, 0]) == (None, 1)
