"""Discrete-time two-queue matching with a static price and bi-modal matching.

Each slot ``A(t)`` servers and ``B(t)`` customers arrive. With
``N = min(S, C)`` the platform matches

* nothing while ``N < mu* - delta`` (an *outage*),
* ``mu* - delta`` pairs while ``N <= U/2``,
* ``mu* + delta`` pairs above ``U/2``,

and posts the constant price ``p*`` that maximises ``p mu(p)`` subject to
``mu(p) <= lam``. Queues update as ``S' = min((S + A - M)^+, S_bar)`` and
``C' = (C + B - M)^+``; matches are fractional.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numba
import numpy as np

from .errors import ConfigInvalid, InfeasibleDemand, NoRoot
from .search import golden_max
from .stats import BatchStats, RngHandle, poisson_block

# ---------------------------------------------------------------- demand curves


class DemandCurve:
    """Customer arrival rate as a function of price on ``[p_lo, p_hi]``."""

    p_lo: float
    p_hi: float

    def __call__(self, p: float) -> float:
        raise NotImplementedError

    @property
    def domain(self) -> tuple[float, float]:
        return self.p_lo, self.p_hi

    def _validate(self, n: int = 401):
        if not self.p_lo < self.p_hi:
            raise ValueError("empty price domain")
        ps = np.linspace(self.p_lo, self.p_hi, n)
        mu = np.array([self(p) for p in ps])
        scale = max(1.0, float(np.abs(mu).max()))
        if np.any(mu < -1e-12):
            raise ValueError("demand must be non-negative on its domain")
        if np.any(np.diff(mu) > 1e-12 * scale):
            raise ValueError("demand must be non-increasing")
        if np.any(np.diff(mu, 2) > 1e-9 * scale):
            raise ValueError("demand must be concave")
        d_rev = np.diff(ps * mu)
        tol = 1e-12 * scale * max(1.0, abs(self.p_hi))
        signs = np.where(d_rev > tol, 1, np.where(d_rev < -tol, -1, 0))
        signs = signs[signs != 0]
        # unimodal: once revenue starts falling it never rises again
        if np.any((signs[1:] == 1) & (np.minimum.accumulate(signs)[:-1] == -1)):
            raise ValueError("p * mu(p) must be unimodal")


@dataclass(frozen=True)
class LinearDemand(DemandCurve):
    """``mu(p) = intercept - slope * p`` on ``[0, intercept/slope]`` by default."""

    intercept: float
    slope: float
    p_lo: float = 0.0
    p_hi: Optional[float] = None

    def __post_init__(self):
        if not (self.intercept > 0 and self.slope > 0):
            raise ValueError("intercept and slope must be positive")
        if self.p_hi is None:
            object.__setattr__(self, "p_hi", self.intercept / self.slope)
        self._validate()

    def __call__(self, p):
        return max(self.intercept - self.slope * p, 0.0)


@dataclass(frozen=True)
class PowerDemand(DemandCurve):
    """``mu(p) = (beta - alpha p)^theta`` with ``theta in (0, 1]``."""

    beta: float
    alpha: float
    theta: float = 1.0
    p_lo: float = 0.0
    p_hi: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.p_hi is None:
            object.__setattr__(self, "p_hi", self.beta / self.alpha)
        self._validate()

    def __call__(self, p):
        return max(self.beta - self.alpha * p, 0.0) ** self.theta


@dataclass(frozen=True)
class TableDemand(DemandCurve):
    """Piecewise-linear interpolation of monotone ``(price, rate)`` samples."""

    prices: tuple[float, ...]
    rates: tuple[float, ...]
    p_lo: float = field(init=False)
    p_hi: float = field(init=False)

    def __post_init__(self):
        p = tuple(float(x) for x in self.prices)
        r = tuple(float(x) for x in self.rates)
        if len(p) != len(r) or len(p) < 2:
            raise ValueError("need matching price/rate samples, at least two")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("prices must be strictly increasing")
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "p_lo", p[0])
        object.__setattr__(self, "p_hi", p[-1])
        self._validate()

    def __call__(self, p):
        return float(np.interp(p, self.prices, self.rates))


# ---------------------------------------------------------------- critical price


class PStar(NamedTuple):
    price: float
    mu: float
    regime: str  # "slack" or "equality"


def solve_pstar(demand: DemandCurve, lam: float, tol: float = 1e-12) -> PStar:
    """Maximise ``p mu(p)`` subject to ``mu(p) <= lam``."""
    lo, hi = demand.domain
    if demand(hi) > lam:
        raise InfeasibleDemand(f"mu(p) > lam={lam} on the whole domain")
    if demand(lo) <= lam:
        p_feas = lo
    else:
        a, b = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if demand(mid) <= lam:
                b = mid
            else:
                a = mid
        p_feas = b
    p = _revenue_argmax(demand, p_feas, hi, tol)
    mu = demand(p)
    regime = "equality" if abs(mu - lam) <= 1e-9 * max(1.0, lam) else "slack"
    return PStar(p, mu, regime)


def _revenue_argmax(demand: DemandCurve, a: float, b: float, tol: float) -> float:
    """Maximiser of the unimodal revenue ``p mu(p)`` on ``[a, b]``.

    Golden section alone stalls around sqrt(machine eps) on a flat top, so
    the bracket it returns is polished by bisecting on the sign of a central
    difference slope.
    """
    def rev(q):
        return q * demand(q)

    def slope(q):
        h = 1e-7 * max(1.0, abs(q))
        lo, hi = max(q - h, a), min(q + h, b)
        return rev(hi) - rev(lo)

    if b - a <= tol:
        return a
    if slope(a) <= 0:
        return a
    if slope(b) >= 0:
        return b
    p, _ = golden_max(rev, a, b, tol=max(tol, 1e-9 * (b - a)))
    width = 1e-6 * max(1.0, abs(p)) + tol
    lo, hi = max(a, p - width), min(b, p + width)
    if slope(lo) <= 0:
        lo = a
    if slope(hi) >= 0:
        hi = b
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    p = 0.5 * (lo + hi)
    best = max((a, b, p), key=rev)
    return best if rev(best) > rev(p) else p


def delta_schedule(U: float, decay_exponent: float, sigma_c_sq: float) -> float:
    """``delta = decay_exponent * sigma_c_sq * ln(U) / U``."""
    if not U > 1:
        raise ValueError("U must exceed 1")
    return decay_exponent * sigma_c_sq * math.log(U) / U


def match_amount(n: float, mu_star: float, delta: float, U: float) -> float:
    low = mu_star - delta
    if n < low:
        return 0.0
    m = low if n <= U / 2 else mu_star + delta
    return min(m, n)


PROFIT_FUNCTIONS: dict[str, Callable[[float], float]] = {
    "identity": lambda v: v,
    "log1p": math.log1p,
}
_PROFIT_CODES = {"identity": 0, "log1p": 1}


def profit_upper_bound(demand: DemandCurve, lam: float, profit_fn: str = "identity") -> float:
    """Jensen ceiling ``V(p* mu(p*))`` on the long-run profit of any policy."""
    ps = solve_pstar(demand, lam)
    return PROFIT_FUNCTIONS[profit_fn](ps.price * ps.mu)


# ---------------------------------------------------------------- arrival samplers


@dataclass(frozen=True)
class Sampler:
    """Per-slot arrival law with a given mean.

    ``poisson``; ``deterministic`` (exactly the rate every slot, fractional
    allowed); ``bernoulli`` (a batch of ``batch`` arrivals with probability
    ``rate / batch``).
    """

    kind: str = "poisson"
    batch: int = 2

    def __post_init__(self):
        if self.kind not in ("poisson", "deterministic", "bernoulli"):
            raise ValueError(f"unknown sampler {self.kind!r}")

    def variance(self, rate: float) -> float:
        if self.kind == "poisson":
            return rate
        if self.kind == "deterministic":
            return 0.0
        q = rate / self.batch
        return self.batch**2 * q * (1 - q)

    def block(self, rng: RngHandle, rate: float, size: int) -> np.ndarray:
        if self.kind == "poisson":
            return poisson_block(rng, rate, size)
        if self.kind == "deterministic":
            return np.full(size, float(rate))
        q = rate / self.batch
        if not 0 <= q <= 1:
            raise ConfigInvalid(f"bernoulli batch {self.batch} too small for rate {rate}")
        return self.batch * (rng.gen.random(size) < q).astype(np.float64)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class QueueConfig:
    lam: float
    demand: DemandCurve
    U: float
    s_bar: Optional[float] = None
    decay_exponent: float = 2.0
    sigma_c_sq: float = 2.0
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    profit_fn: str = "identity"
    server_sampler: Sampler = Sampler()
    customer_sampler: Sampler = Sampler()

    p_star: float = field(init=False)
    mu_star: float = field(init=False)
    regime: str = field(init=False)
    p_eff: float = field(init=False)
    customer_rate: float = field(init=False)

    def __post_init__(self):
        def put(name, value):
            object.__setattr__(self, name, value)

        if not self.lam > 0:
            raise ConfigInvalid("lam must be positive")
        if not self.U > 1:
            raise ConfigInvalid("U must exceed 1")
        if self.decay_exponent < 2:
            raise ConfigInvalid("decay_exponent must be >= 2")
        if not self.sigma_c_sq > 0:
            raise ConfigInvalid("sigma_c_sq must be positive")
        if self.profit_fn not in PROFIT_FUNCTIONS:
            raise ConfigInvalid(f"unknown profit function {self.profit_fn!r}")
        try:
            ps = solve_pstar(self.demand, self.lam)
        except InfeasibleDemand as exc:
            raise ConfigInvalid(str(exc)) from exc
        put("p_star", ps.price)
        put("mu_star", ps.mu)
        put("regime", ps.regime)
        if ps.regime == "equality":
            eps = 1e-3 * ps.price if self.epsilon is None else self.epsilon
            if not eps > 0:
                raise ConfigInvalid("epsilon must be positive")
            put("epsilon", eps)
            put("p_eff", ps.price + eps)
        else:
            put("p_eff", ps.price)
        put("customer_rate", float(self.demand(self.p_eff)))
        if self.delta is None:
            put("delta", delta_schedule(self.U, self.decay_exponent, self.sigma_c_sq))
        if self.s_bar is None:
            put("s_bar", 4.0 * self.U)
        if not 0 < self.delta < self.mu_star:
            raise ConfigInvalid(f"delta={self.delta:.6g} must lie in (0, mu*={self.mu_star:.6g})")
        if self.U / 2 < self.mu_star + self.delta:
            raise ConfigInvalid(f"U/2={self.U / 2} is below mu*+delta={self.mu_star + self.delta:.6g}")
        if not self.s_bar > self.U:
            raise ConfigInvalid(f"s_bar={self.s_bar} must exceed U={self.U}")

    @classmethod
    def for_rates(cls, mu_star: float, gap: float, U: float, **kw) -> "QueueConfig":
        """Linear demand ``mu(p) = 2 mu* - p`` with ``lam = mu* + gap``.

        The unconstrained revenue maximiser is ``p* = mu*`` with rate ``mu*``,
        feasible because ``lam > mu*``.
        """
        return cls(lam=mu_star + gap, demand=LinearDemand(2.0 * mu_star, 1.0), U=U, **kw)

    @property
    def jensen_bound(self) -> float:
        return PROFIT_FUNCTIONS[self.profit_fn](self.p_star * self.mu_star)


@dataclass(frozen=True)
class QueueState:
    s: float = 0.0
    q_c: float = 0.0
    t: int = 0

    @property
    def n(self) -> float:
        return min(self.s, self.q_c)


def step(state: QueueState, a: float, b: float, cfg: QueueConfig) -> tuple[QueueState, float, float]:
    """One slot of the recursion. Returns ``(next_state, matched, profit)``."""
    m = match_amount(state.n, cfg.mu_star, cfg.delta, cfg.U)
    s = min(max(state.s + a - m, 0.0), cfg.s_bar)
    q_c = max(state.q_c + b - m, 0.0)
    profit = PROFIT_FUNCTIONS[cfg.profit_fn](cfg.p_eff * m) if m > 0 else 0.0
    return QueueState(s, q_c, state.t + 1), m, profit


# ---------------------------------------------------------------- simulation kernel

# per-batch accumulator columns
_OUT, _N, _HIGH, _TAIL, _PROFIT, _WAIT, _DEP, _QC, _M = range(9)
_N_COLS = 9


@numba.njit(cache=True)
def _run_chunk(a, b, t0, state, par, warmup, batch_len, acc, fifo_t, fifo_amt, fifo_meta):
    # state: s, c, cum_b, cum_m, compensations ; par: mu*, delta, U, s_bar, price, profit code
    # fifo_meta: head, count ; returns number of slots consumed
    s, c, cum_b, cum_m = state[0], state[1], state[2], state[3]
    comp_b, comp_m = state[4], state[5]
    mu, delta, U, s_bar, price = par[0], par[1], par[2], par[3], par[4]
    log_profit = par[5] == 1.0
    lo = mu - delta
    hi = mu + delta
    half = U / 2.0
    cap = fifo_t.shape[0]
    head, count = fifo_meta[0], fifo_meta[1]
    n_slots = a.shape[0]
    k = 0
    while k < n_slots:
        if b[k] > 0.0 and count == cap:
            break
        t = t0 + k
        n = min(s, c)
        if n < lo:
            m = 0.0
        elif n <= half:
            m = lo
        else:
            m = hi
        if m > n:
            m = n
        # FIFO departures: customers present at the start of the slot
        wait = 0.0
        rem = m
        while rem > 1e-12 and count > 0:
            amt = fifo_amt[head]
            if amt <= rem + 1e-12:
                wait += amt * (t - fifo_t[head])
                rem -= amt
                head = (head + 1) % cap
                count -= 1
            else:
                wait += rem * (t - fifo_t[head])
                fifo_amt[head] = amt - rem
                rem = 0.0
        if b[k] > 0.0:
            tail = (head + count) % cap
            fifo_t[tail] = t
            fifo_amt[tail] = b[k]
            count += 1
        if t >= warmup:
            j = (t - warmup) // batch_len
            if j < acc.shape[0]:
                if n < lo:
                    acc[j, _OUT] += 1.0
                if n > half:
                    acc[j, _HIGH] += 1.0
                if n >= U:
                    acc[j, _TAIL] += 1.0
                acc[j, _N] += n
                acc[j, _QC] += c
                acc[j, _M] += m
                acc[j, _WAIT] += wait
                acc[j, _DEP] += m
                if m > 0.0:
                    v = price * m
                    acc[j, _PROFIT] += math.log1p(v) if log_profit else v
        s = min(max(s + a[k] - m, 0.0), s_bar)
        c = max(c + b[k] - m, 0.0)
        # compensated sums keep the conservation ledger exact to rounding
        y = b[k] - comp_b
        z = cum_b + y
        comp_b = (z - cum_b) - y
        cum_b = z
        y = m - comp_m
        z = cum_m + y
        comp_m = (z - cum_m) - y
        cum_m = z
        k += 1
    state[0], state[1], state[2], state[3] = s, c, cum_b, cum_m
    state[4], state[5] = comp_b, comp_m
    fifo_meta[0], fifo_meta[1] = head, count
    return k


@dataclass(frozen=True)
class SimReport:
    profit_rate: BatchStats
    outage_prob: BatchStats
    mean_n: BatchStats
    mean_w: BatchStats
    frac_high: BatchStats
    frac_low: BatchStats
    tail_above_u: BatchStats
    mean_q_c: BatchStats
    match_rate: BatchStats
    horizon: int
    warmup: int
    seed: int
    stream_id: int
    U: float
    lam: float
    mu_star: float
    delta: float
    p_eff: float
    jensen_bound: float
    conservation_error: float
    final_state: QueueState


def simulate(
    cfg: QueueConfig,
    horizon: int,
    warmup: Optional[int] = None,
    seed: int = 0,
    stream_id: int = 0,
    n_batches: int = 30,
    chunk: int = 1 << 20,
) -> SimReport:
    """Run the static-price, two-speed matching dynamics from the empty state.

    ``horizon`` counts measured slots after ``warmup`` (default 10% of
    ``horizon``); it is rounded down to a multiple of ``n_batches``.
    Server and customer arrivals use separate child streams of
    ``RngHandle(seed, stream_id)``.
    """
    if warmup is None:
        warmup = horizon // 10
    batch_len = horizon // n_batches
    if batch_len < 1 or warmup < 0:
        raise ConfigInvalid("horizon too short for the requested batches")
    measured = batch_len * n_batches
    total = warmup + measured

    root = RngHandle(seed, stream_id)
    rng_s, rng_c = root.child(0), root.child(1)
    acc = np.zeros((n_batches, _N_COLS))
    state = np.zeros(6)
    par = np.array(
        [cfg.mu_star, cfg.delta, cfg.U, cfg.s_bar, cfg.p_eff, float(_PROFIT_CODES[cfg.profit_fn])]
    )
    cap = 1 << max(10, int(math.ceil(math.log2(8 * cfg.U / max(cfg.mu_star, 1e-3) + 16))))
    fifo_t = np.zeros(cap, dtype=np.int64)
    fifo_amt = np.zeros(cap)
    fifo_meta = np.zeros(2, dtype=np.int64)

    t = 0
    while t < total:
        n = min(chunk, total - t)
        a = cfg.server_sampler.block(rng_s, cfg.lam, n)
        b = cfg.customer_sampler.block(rng_c, cfg.customer_rate, n)
        done = 0
        while done < n:
            done += _run_chunk(
                a[done:], b[done:], t + done, state, par, warmup, batch_len,
                acc, fifo_t, fifo_amt, fifo_meta,
            )
            if done < n:
                fifo_t, fifo_amt = _grow_fifo(fifo_t, fifo_amt, fifo_meta)
        t += n

    per = acc / batch_len
    high = per[:, _HIGH]
    with np.errstate(invalid="ignore", divide="ignore"):
        waits = acc[:, _WAIT] / acc[:, _DEP]
    stats = BatchStats.from_batch_means
    return SimReport(
        profit_rate=stats(per[:, _PROFIT]),
        outage_prob=stats(per[:, _OUT]),
        mean_n=stats(per[:, _N]),
        mean_w=stats(waits),
        frac_high=stats(high),
        frac_low=stats(1.0 - high),
        tail_above_u=stats(per[:, _TAIL]),
        mean_q_c=stats(per[:, _QC]),
        match_rate=stats(per[:, _M]),
        horizon=measured,
        warmup=warmup,
        seed=seed,
        stream_id=stream_id,
        U=cfg.U,
        lam=cfg.lam,
        mu_star=cfg.mu_star,
        delta=cfg.delta,
        p_eff=cfg.p_eff,
        jensen_bound=cfg.jensen_bound,
        conservation_error=float(abs(state[2] - state[3] - state[1])),
        final_state=QueueState(float(state[0]), float(state[1]), total),
    )


def _grow_fifo(fifo_t, fifo_amt, fifo_meta):
    head, count = int(fifo_meta[0]), int(fifo_meta[1])
    cap = fifo_t.shape[0]
    order = (head + np.arange(count)) % cap
    new_t = np.zeros(2 * cap, dtype=np.int64)
    new_amt = np.zeros(2 * cap)
    new_t[:count] = fifo_t[order]
    new_amt[:count] = fifo_amt[order]
    fifo_meta[0] = 0
    return new_t, new_amt


def merge_reports(reports: Sequence[SimReport]) -> SimReport:
    """Pool replications by concatenating their batch means.

    Replications are ordered by ``(seed, stream_id)`` first, so the result
    does not depend on the order in which they finished.
    """
    if not reports:
        raise ValueError("nothing to merge")
    reps = sorted(reports, key=lambda r: (r.seed, r.stream_id))
    first = reps[0]
    for r in reps[1:]:
        if (r.U, r.lam, r.mu_star, r.delta) != (first.U, first.lam, first.mu_star, first.delta):
            raise ValueError("can only merge replications of the same configuration")

    def pool(name):
        return BatchStats.from_batch_means([x for r in reps for x in getattr(r, name).batch_means])

    names = ("profit_rate", "outage_prob", "mean_n", "mean_w", "frac_high", "frac_low",
             "tail_above_u", "mean_q_c", "match_rate")
    return SimReport(
        **{n: pool(n) for n in names},
        horizon=sum(r.horizon for r in reps),
        warmup=first.warmup,
        seed=first.seed,
        stream_id=first.stream_id,
        U=first.U,
        lam=first.lam,
        mu_star=first.mu_star,
        delta=first.delta,
        p_eff=first.p_eff,
        jensen_bound=first.jensen_bound,
        conservation_error=max(r.conservation_error for r in reps),
        final_state=first.final_state,
    )


# ---------------------------------------------------------------- decay rate


def poisson_log_mgf(mu: float) -> Callable[[float], float]:
    """Per-slot log-MGF ``s -> mu (e^s - 1)`` of Poisson(mu) arrivals."""
    return lambda s: mu * math.expm1(s)


def tau_star(mu_star: float, delta: float, log_mgf: Callable[[float], float]) -> float:
    """Positive root of ``log_mgf(-tau) + tau (mu* - delta)``.

    This is the large-deviations exponent governing how fast the outage
    probability decays; for small ``delta`` it behaves like
    ``2 delta / sigma_C^2``.
    """
    if delta == 0:
        return 0.0
    if not 0 < delta < mu_star:
        raise ValueError("delta must lie in (0, mu*)")

    def psi(tau):
        return log_mgf(-tau) + tau * (mu_star - delta)

    hi = 1.0
    for _ in range(200):
        if psi(hi) > 0:
            break
        hi *= 2.0
    else:
        raise NoRoot("psi stays non-positive while expanding the bracket")
    lo = hi
    for _ in range(2000):
        lo *= 0.5
        if psi(lo) < 0:
            break
    else:
        raise NoRoot("psi has no negative value near zero")
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if psi(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> tuple[Optional[float], int]:
    """Least-squares slope of ``log y`` on ``log x`` over points with ``y > 0``.

    Returns ``(slope, n_points)``; the slope is ``None`` with fewer than two
    usable points.
    """
    pts = [(math.log(x), math.log(y)) for x, y in zip(xs, ys) if y > 0]
    if len(pts) < 2:
        return None, len(pts)
    lx, ly = np.array(pts).T
    return float(np.polyfit(lx, ly, 1)[0]), len(pts)
