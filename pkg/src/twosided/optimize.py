"""Optimisers and bounds for the loss model.

Covers the optimal static price, the universal upper bounds valid for any
policy, the one-dimensional search over threshold (bang-bang) policies, the
exhaustive ``min pi_0`` verifier on small finite chains and the improving
perturbation used to rule out non-threshold optima.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    Infeasible,
    InfeasibleRate,
    NoStablePrice,
    PreconditionViolation,
    RequiresLinearModel,
)
from .markov import MomentCap, RhoProfile, f_and_m, mean_occupancy, stationary_truncated
from .pricing import BangBang, PriceModel, evaluate
from .search import golden_max


class StaticOptimum(NamedTuple):
    price: float
    value: float
    closed_form: bool


def static_value(model: PriceModel, p: float) -> float:
    """Relaxed objective of the static price ``p``: ``p - w~ / (g(p) - lam)``."""
    slack = float(model.rate(p)) - model.lam
    if slack <= 0:
        return -math.inf
    return p - model.w_tilde / slack


def optimal_static_price(model: PriceModel, numeric: bool = False) -> StaticOptimum:
    """Best constant price on ``[p_min, p_max]``.

    Linear demand with enough slack (``mu_max >= lam + sqrt(alpha w~)``) uses
    the closed form; everything else, or ``numeric=True``, falls back to a
    golden-section search on the stable part of the price box.
    """
    a, w_t = model.alpha, model.w_tilde
    root = math.sqrt(a * w_t)
    if not numeric and model.is_linear and model.mu_max >= model.lam + root:
        p = (model.beta - root - model.lam) / a
        if model.p_min <= p <= model.p_max:
            return StaticOptimum(p, (model.beta - 2 * root - model.lam) / a, True)
        # clamped: the objective is concave, so the better stable endpoint wins
        ends = [q for q in (model.p_min, model.p_max) if model.rate(q) > model.lam]
        best = max(ends, key=lambda q: static_value(model, q))
        return StaticOptimum(best, static_value(model, best), True)

    p_hi = min(model.p_max, model.inverse(model.lam))
    if p_hi <= model.p_min or model.rate(model.p_min) <= model.lam:
        raise NoStablePrice("g(p) <= lam on the whole price box")
    p, v = golden_max(lambda q: static_value(model, q), model.p_min, p_hi, tol=1e-12)
    return StaticOptimum(p, v, False)


@dataclass(frozen=True)
class BoundsReport:
    g_inv_bound: float
    light_traffic_bound_boxed: float
    light_traffic_bound_relaxed: float
    combined: float
    boxed_argmax: float


def light_traffic_constant(model: PriceModel) -> float:
    """``B = (w~ alpha theta)^(1/(theta+1)) (1 + 1/theta)``."""
    th = model.theta
    return (model.w_tilde * model.alpha * th) ** (1 / (th + 1)) * (1 + 1 / th)


def universal_bounds(model: PriceModel) -> BoundsReport:
    g_inv = model.inverse(model.lam)
    # p - w~/g(p) is concave since 1/g is convex for concave positive g
    p_box, boxed = golden_max(
        lambda q: q - model.w_tilde / float(model.rate(q)), model.p_min, model.p_max, tol=1e-12
    )
    relaxed = (model.beta - light_traffic_constant(model)) / model.alpha
    return BoundsReport(g_inv, boxed, relaxed, min(g_inv, boxed), p_box)


class BangBangOptimum(NamedTuple):
    x: float
    value: float
    x_c: float
    value_c: float


def bangbang_curve(model: PriceModel, xs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """``(C, C_rel)`` for each threshold parameter in ``xs``."""
    vals = np.array([evaluate(model, BangBang(float(x)))[:2] for x in xs])
    return vals[:, 0], vals[:, 1]


def _refine(fun, xs: np.ndarray, values: np.ndarray, tol: float) -> tuple[float, float]:
    k = int(np.argmax(values))
    lo = xs[max(k - 1, 0)]
    hi = xs[min(k + 1, len(xs) - 1)]
    x, v = golden_max(fun, lo, hi, tol=tol)
    if v < values[k]:
        return float(xs[k]), float(values[k])
    return float(x), float(v)


def optimize_bangbang(
    model: PriceModel, x_max: float = 50.0, grid: float = 0.05, tol: float = 1e-6
) -> BangBangOptimum:
    """Grid scan over ``x in [0, x_max]`` then golden refinement around the best cell.

    Returns the relaxed-objective maximiser and, for comparison, the
    maximiser of the original objective over the same family.
    """
    if not model.is_linear:
        raise RequiresLinearModel("threshold optimality needs linear demand")
    if grid <= 0:
        raise ValueError("grid must be positive")
    xs = np.linspace(0.0, x_max, int(round(x_max / grid)) + 1)
    c, c_rel = bangbang_curve(model, xs)
    x_rel, v_rel = _refine(lambda x: evaluate(model, BangBang(x)).c_rel, xs, c_rel, tol)
    x_c, v_c = _refine(lambda x: evaluate(model, BangBang(x)).c, xs, c, tol)
    return BangBangOptimum(x_rel, v_rel, x_c, v_c)


class BruteForceResult(NamedTuple):
    profile: tuple[float, ...]
    pi0: float
    mean_n: float


def _finite_chain_stats(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(pi_0, E[N])`` for rows of explicit ratios on finite chains."""
    h = np.concatenate((np.ones((rho.shape[0], 1)), np.cumprod(rho, axis=1)), axis=1)
    z = h.sum(axis=1)
    states = np.arange(h.shape[1])
    return 1.0 / z, (h * states).sum(axis=1) / z


def brute_force_min_pi0(
    n_states: int, rho_levels: Sequence[float], cap: MomentCap | float
) -> BruteForceResult:
    """Enumerate every level assignment on a chain with ``n_states`` states.

    Assignments with ``E[N] > cap`` are discarded; among the rest the one
    with smallest ``pi_0`` wins, ties going to the lexicographically largest
    ratio sequence.
    """
    c = cap.cap if isinstance(cap, MomentCap) else float(cap)
    if n_states < 2:
        raise ValueError("need at least two states")
    levels = sorted(set(float(r) for r in rho_levels))
    combos = np.array(list(itertools.product(levels, repeat=n_states - 1)), dtype=float)
    pi0, mean_n = _finite_chain_stats(combos)
    feasible = mean_n <= c * (1 + 1e-12)
    if not feasible.any():
        raise Infeasible(f"no assignment meets E[N] <= {c}")
    best_pi0 = pi0[feasible].min()
    ties = np.flatnonzero(feasible & (pi0 <= best_pi0 * (1 + 1e-12)))
    # product() is lexicographic in sorted levels, so the last tie is the largest
    k = ties[-1]
    return BruteForceResult(tuple(float(v) for v in combos[k]), float(pi0[k]), float(mean_n[k]))


def is_bangbang_shape(rho: Sequence[float], lo: float, hi: float, atol: float = 1e-12) -> bool:
    """Non-increasing with at most one ratio strictly inside ``(lo, hi)``."""
    r = list(rho)
    monotone = all(r[k] >= r[k + 1] - atol for k in range(len(r) - 1))
    inner = sum(1 for v in r if lo + atol < v < hi - atol)
    return monotone and inner <= 1


def bangbang_profile(n_states: int, lo: float, hi: float, x: float) -> tuple[float, ...]:
    """Threshold ratio sequence of a finite chain: ``hi`` below ``ceil(x)``, ``lo`` above."""
    ell = math.ceil(x)
    out = []
    for i in range(1, n_states):
        if i < ell:
            out.append(hi)
        elif i == ell:
            out.append(hi - (ell - x) * (hi - lo))
        else:
            out.append(lo)
    return tuple(out)


def bangbang_min_pi0(n_states: int, lo: float, hi: float, cap: float) -> BruteForceResult:
    """Best continuous threshold profile on a finite chain under ``E[N] <= cap``.

    ``E[N]`` and ``1/pi_0`` both increase with the threshold parameter, so the
    optimum is the largest feasible parameter, located by bisection.
    """
    def stats(x):
        p0, en = _finite_chain_stats(np.array([bangbang_profile(n_states, lo, hi, x)]))
        return float(p0[0]), float(en[0])

    x_top = float(n_states - 1)
    if stats(0.0)[1] > cap:
        raise Infeasible(f"all-low profile already exceeds cap {cap}")
    if stats(x_top)[1] <= cap:
        x = x_top
    else:
        a, b = 0.0, x_top
        for _ in range(200):
            mid = 0.5 * (a + b)
            if stats(mid)[1] <= cap:
                a = mid
            else:
                b = mid
        x = a
    p0, en = stats(x)
    return BruteForceResult(bangbang_profile(n_states, lo, hi, x), p0, en)


def claim1_perturb(
    profile: RhoProfile, i: int, eps: float, cap: MomentCap | float
) -> tuple[RhoProfile, float]:
    """Raise ``rho_i`` by ``eps`` and lower ``rho_{i+1}`` so that ``m`` stays zero.

    The product ``rho_i rho_{i+1}`` moves by ``-eps (i - C) / D`` with
    ``D = sum_{j >= i+1} (j - C) h_j / h_{i+1}``, which keeps the moment
    slack exactly unchanged. Returns the new profile and ``f(new) - f(old)``.
    """
    c = cap.cap if isinstance(cap, MomentCap) else float(cap)
    if profile.bounds is None:
        raise PreconditionViolation("profile needs (rho_low, rho_high) bounds")
    lo, hi = profile.bounds
    if not 1 <= i < profile.n_explicit:
        raise PreconditionViolation(f"need explicit rho_{i} and rho_{i + 1}")
    f_old, m_old = f_and_m(profile, c)
    if abs(m_old) > 1e-9 * max(1.0, f_old):
        raise PreconditionViolation(f"m(rho)={m_old:.3g} is not zero")
    r_i, r_next = profile.rho[i - 1], profile.rho[i]
    if not (r_i < hi and r_next > lo):
        raise PreconditionViolation(f"rho_{i}={r_i}, rho_{i + 1}={r_next} admit no improving move")
    if eps <= 0:
        raise PreconditionViolation("eps must be positive")

    dist = stationary_truncated(profile)
    pi = dist.pi
    head = sum((j - c) * pi[j] for j in range(i + 1))
    d = ((mean_occupancy(dist) - c) - head) / pi[i + 1]
    new_prod = r_i * r_next - eps * (i - c) / d
    new_i = r_i + eps
    new_next = new_prod / new_i
    if new_i > hi or not lo <= new_next <= hi:
        raise PreconditionViolation(
            f"eps={eps} moves the pair to ({new_i:.6g}, {new_next:.6g}), outside [{lo}, {hi}]"
        )
    rho = list(profile.rho)
    rho[i - 1], rho[i] = new_i, new_next
    moved = RhoProfile(tuple(rho), profile.tail_rho, profile.bounds)
    f_new, _ = f_and_m(moved, c)
    return moved, f_new - f_old


@dataclass(frozen=True)
class CompetitiveReport:
    regime: str
    gamma: float
    payoff_lower: float
    reduction_ratio_estimate: float
    target_rate: float
    price: float
    holding_term: float


def competitive_cases(model: PriceModel, gamma: float) -> CompetitiveReport:
    """Static price targeting ``gamma`` times the binding rate of the concave bound.

    Heavy traffic (``lam^(1/theta) >= B``) targets ``gamma * lam``; light
    traffic targets ``gamma * B^theta``. The target must be reachable inside
    the price box, otherwise ``InfeasibleRate``.
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    th, a = model.theta, model.alpha
    b_const = light_traffic_constant(model)
    top = model.beta / a
    if model.lam ** (1 / th) >= b_const:
        regime = "heavy"
        target = gamma * model.lam
        holding = model.w_tilde / ((gamma - 1) * model.lam)
        payoff = top - target ** (1 / th) / a - holding
        bound_reduction = model.lam ** (1 / th) / a
    else:
        regime = "light"
        target = gamma * b_const**th
        holding = model.w_tilde / ((gamma - 1) * b_const**th)
        payoff = top - gamma ** (1 / th) * b_const / a - holding
        bound_reduction = b_const / a
    if target > model.mu_max:
        raise InfeasibleRate(f"target rate {target:.6g} exceeds mu_max={model.mu_max:.6g}")
    if target < model.mu_min:
        raise InfeasibleRate(f"target rate {target:.6g} is below mu_min={model.mu_min:.6g}")
    price = model.inverse(target)
    ratio = (top - payoff) / bound_reduction
    return CompetitiveReport(regime, gamma, payoff, ratio, target, price, holding)
