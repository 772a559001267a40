"""Loss-model pricing: demand curve, price policies and the two objectives.

Servers arrive at rate ``lam``; a posted price ``p`` brings customers at rate
``g(p) = (beta - alpha p)**theta``. With ``i`` servers waiting the price is
``p_i``, so the server count is a birth-death chain with ``rho_i = lam/g(p_i)``.

Two objectives are evaluated. The original one averages the price over
departures, ``C = sum_{i>=1} pi_{i-1} p_i - w E[N]``; the relaxed one averages
it over the stationary law, ``C_rel = sum_{i>=0} pi_i p_i - w E[N]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .errors import (
    NonRecurrent,
    PriceOutOfRange,
    RateOutOfRange,
    RequiresLinearModel,
)
from .markov import RhoProfile, StationaryDist, mean_occupancy, stationary_truncated

_EPS = 1e-12


@dataclass(frozen=True)
class PriceModel:
    alpha: float
    beta: float
    p_min: float
    p_max: float
    lam: float
    w: float
    theta: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if not 0 < self.p_min < self.p_max < self.beta / self.alpha:
            raise ValueError("need 0 < p_min < p_max < beta/alpha")
        if not (self.lam > 0 and self.w > 0):
            raise ValueError("lam and w must be positive")
        if not self.mu_max > self.lam:
            raise ValueError(f"mu_max={self.mu_max} must exceed lam={self.lam}")

    @property
    def w_tilde(self) -> float:
        return self.w * self.lam

    @property
    def mu_max(self) -> float:
        return (self.beta - self.alpha * self.p_min) ** self.theta

    @property
    def mu_min(self) -> float:
        return (self.beta - self.alpha * self.p_max) ** self.theta

    @property
    def is_linear(self) -> bool:
        return self.theta == 1.0

    def rate(self, p):
        """Demand ``g(p)`` without range checks (array friendly)."""
        return (self.beta - self.alpha * np.asarray(p, dtype=float)) ** self.theta

    def inverse(self, mu: float) -> float:
        """``g^{-1}(mu)`` without range checks."""
        return (self.beta - mu ** (1.0 / self.theta)) / self.alpha


def g_eval(model: PriceModel, p: float) -> float:
    if not model.p_min - _EPS <= p <= model.p_max + _EPS:
        raise PriceOutOfRange(f"p={p} outside [{model.p_min}, {model.p_max}]")
    return float(model.rate(p))


def g_inverse(model: PriceModel, mu: float) -> float:
    if not model.mu_min * (1 - _EPS) <= mu <= model.mu_max * (1 + _EPS):
        raise RateOutOfRange(f"mu={mu} outside [{model.mu_min}, {model.mu_max}]")
    return model.inverse(mu)


class Schedule(NamedTuple):
    """Price in state 0, explicit prices for states 1..n, and the price beyond n."""

    p0: float
    prefix: tuple[float, ...]
    tail: float


@dataclass(frozen=True)
class Static:
    """One price in every state, including the empty state."""

    p: float

    def schedule(self, model: PriceModel) -> Schedule:
        if model.rate(self.p) <= model.lam:
            raise NonRecurrent(
                f"static price {self.p} gives g(p)={float(model.rate(self.p)):.6g} <= lam"
            )
        return Schedule(self.p, (), self.p)


@dataclass(frozen=True)
class BangBang:
    """Threshold policy encoded by a single real ``x >= 0``.

    ``l = ceil(x)``; states below ``l`` pay ``p_max``, state ``l`` pays
    ``p_max - (l - x)(p_max - p_min)`` and states above pay ``p_min``.
    """

    x: float

    def __post_init__(self):
        if not self.x >= 0:
            raise ValueError("x must be non-negative")

    def threshold(self) -> tuple[int, float]:
        ell = math.ceil(self.x)
        return ell, ell - self.x

    def schedule(self, model: PriceModel) -> Schedule:
        ell, frac = self.threshold()
        span = model.p_max - model.p_min
        prefix = [model.p_max] * ell
        if ell >= 1:
            prefix[-1] = model.p_max - frac * span
        return Schedule(model.p_max, tuple(prefix), model.p_min)


@dataclass(frozen=True)
class Tabular:
    """Explicit prices for states ``1..n``; the last one repeats forever."""

    prices: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if not self.prices:
            raise ValueError("tabular policy needs at least one price")

    def schedule(self, model: PriceModel) -> Schedule:
        return Schedule(model.p_max, self.prices, self.prices[-1])


Policy = Union[Static, BangBang, Tabular]


class ObjectivePair(NamedTuple):
    c: float
    c_rel: float
    pi0: float
    mean_n: float


def _checked_schedule(model: PriceModel, policy: Policy) -> Schedule:
    sched = policy.schedule(model)
    for p in (sched.p0, *sched.prefix, sched.tail):
        if not model.p_min - _EPS <= p <= model.p_max + _EPS:
            raise PriceOutOfRange(f"policy price {p} outside [{model.p_min}, {model.p_max}]")
    return sched


def policy_rates(model: PriceModel, policy: Policy) -> RhoProfile:
    sched = _checked_schedule(model, policy)
    rho = tuple(float(model.lam / model.rate(p)) for p in sched.prefix)
    tail = float(model.lam / model.rate(sched.tail))
    if tail >= 1:
        raise NonRecurrent(f"tail ratio {tail} >= 1")
    bounds = (model.lam / model.mu_max, model.lam / model.mu_min)
    return RhoProfile(rho=rho, tail_rho=tail, bounds=bounds)


def _dist(model: PriceModel, policy: Policy) -> tuple[Schedule, StationaryDist]:
    sched = _checked_schedule(model, policy)
    return sched, stationary_truncated(policy_rates(model, policy))


def evaluate(model: PriceModel, policy: Policy) -> ObjectivePair:
    """Both objectives plus ``pi_0`` and ``E[N]`` from a single stationary solve."""
    sched, dist = _dist(model, policy)
    pi = dist.pi
    n = len(sched.prefix)
    explicit_prices = np.array((sched.p0, *sched.prefix))
    mean_n = mean_occupancy(dist)
    tail_mass = dist.tail_mass()

    price_rel = float(np.dot(pi, explicit_prices)) + tail_mass * sched.tail
    # departures leaving i-1 behind pay p_i; states >= n all see the tail price next
    price_c = float(np.dot(pi[:n], explicit_prices[1:])) + (pi[n] + tail_mass) * sched.tail
    cost = model.w * mean_n
    return ObjectivePair(float(price_c - cost), float(price_rel - cost), float(dist.pi0), float(mean_n))


def objective_crel(model: PriceModel, policy: Policy) -> float:
    return evaluate(model, policy).c_rel


def objective_c(model: PriceModel, policy: Policy) -> float:
    return evaluate(model, policy).c


def lemma1_value(model: PriceModel, policy: Policy) -> float:
    """Relaxed objective via ``(beta - pi_0 g(p_0) - lam)/alpha - w E[N]``.

    Only valid for linear demand, where the price average collapses to a
    function of ``pi_0`` through detailed balance.
    """
    if not model.is_linear:
        raise RequiresLinearModel(f"theta={model.theta}; identity needs theta=1")
    sched, dist = _dist(model, policy)
    mu0 = float(model.rate(sched.p0))
    return (model.beta - dist.pi0 * mu0 - model.lam) / model.alpha - model.w * mean_occupancy(dist)
