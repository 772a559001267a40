"""Stationary laws of birth-death chains given by their rate ratios.

A chain on {0, 1, 2, ...} with up-rate ``lam_{i-1}`` and down-rate ``mu_i`` is
fully described (for stationary purposes) by ``rho_i = lam_{i-1} / mu_i``.
Unnormalised weights are ``h_0 = 1`` and ``h_i = rho_1 * ... * rho_i``.

Profiles come in three flavours:

* explicit prefix plus a constant geometric tail (``tail_rho < 1``),
* explicit prefix only, which is a *finite* chain on ``{0, ..., len(rho)}``,
* tail only (a plain geometric law).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import BoundViolation, NonRecurrent, StationaryOverflow

# exp() overflows just above this
_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class RhoProfile:
    """Birth/death rate ratios ``rho_1, rho_2, ...`` of a chain.

    ``bounds`` is the admissible box ``(rho_low, rho_high)``; ``None`` means
    only positivity is enforced.
    """

    rho: tuple[float, ...] = ()
    tail_rho: Optional[float] = None
    bounds: Optional[tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if self.tail_rho is not None:
            object.__setattr__(self, "tail_rho", float(self.tail_rho))
        if not self.rho and self.tail_rho is None:
            raise ValueError("profile needs explicit ratios or a tail ratio")
        if any(not (r > 0 and math.isfinite(r)) for r in self.rho):
            raise ValueError("rate ratios must be positive and finite")
        if self.tail_rho is not None:
            if not self.tail_rho > 0:
                raise ValueError("tail_rho must be positive")
            if self.tail_rho >= 1:
                raise NonRecurrent(f"tail_rho={self.tail_rho} >= 1")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not 0 < lo <= hi:
                raise ValueError(f"bad bounds {self.bounds}")
            for r in self.rho:
                if not lo - 1e-12 <= r <= hi + 1e-12:
                    raise BoundViolation(f"rho={r} outside [{lo}, {hi}]")

    @property
    def is_finite(self) -> bool:
        return self.tail_rho is None

    @property
    def n_explicit(self) -> int:
        return len(self.rho)

    def with_rho(self, i: int, value: float) -> "RhoProfile":
        """Copy with ``rho_i`` (1-based) replaced."""
        rho = list(self.rho)
        rho[i - 1] = value
        return replace(self, rho=tuple(rho))


@dataclass(frozen=True)
class MomentCap:
    cap: float

    def __post_init__(self):
        if not self.cap > 0:
            raise ValueError("cap must be positive")

    def feasible_for(self, rho_low: float) -> bool:
        return rho_low < 1 and rho_low / (1 - rho_low) <= self.cap


@dataclass(frozen=True)
class StationaryDist:
    """Stationary law over states ``0..len(pi)-1`` plus an optional closed-form tail.

    When ``tail_ratio`` is set, states beyond the explicit part carry
    ``pi[-1] * tail_ratio**k`` for ``k >= 1``. ``tail_mass_bound`` bounds
    the probability mass that is neither explicit nor in the closed tail.
    """

    pi: np.ndarray
    tail_mass_bound: float
    z: float
    tail_ratio: Optional[float] = None
    log_z: float = field(default=0.0, repr=False)

    @property
    def pi0(self) -> float:
        return float(self.pi[0])

    def tail_mass(self) -> float:
        """Mass of the closed-form tail beyond the explicit states."""
        if self.tail_ratio is None:
            return 0.0
        r = self.tail_ratio
        return float(self.pi[-1]) * r / (1.0 - r)

    def total_mass(self) -> float:
        return float(self.pi.sum()) + self.tail_mass()

    def expand(self, n_states: int) -> np.ndarray:
        """First ``n_states`` probabilities, materialising the tail if needed."""
        k = len(self.pi)
        if n_states <= k:
            return self.pi[:n_states].copy()
        out = np.zeros(n_states)
        out[:k] = self.pi
        if self.tail_ratio is not None:
            steps = np.arange(1, n_states - k + 1)
            out[k:] = self.pi[-1] * self.tail_ratio ** steps
        return out


def _log_weights(rho: Sequence[float]) -> np.ndarray:
    logs = np.concatenate(([0.0], np.cumsum(np.log(np.asarray(rho, dtype=float)))))
    return logs


def _normalise(log_h: np.ndarray, tail_ratio: Optional[float]) -> tuple[np.ndarray, float]:
    # log-sum-exp over the explicit part, tail folded in as h_n * r/(1-r)
    top = log_h.max()
    if tail_ratio is not None:
        tail_log = log_h[-1] + math.log(tail_ratio / (1.0 - tail_ratio))
        top = max(top, tail_log)
    s = np.exp(log_h - top).sum()
    if tail_ratio is not None:
        s += math.exp(tail_log - top)
    log_z = top + math.log(s)
    return np.exp(log_h - log_z), log_z


def stationary_truncated(
    profile: RhoProfile, tol: float = 1e-12, closed_form_tail: bool = True
) -> StationaryDist:
    """Stationary distribution of the chain described by ``profile``.

    With a geometric tail the default is to sum it in closed form, giving
    ``tail_mass_bound == 0``. With ``closed_form_tail=False`` the tail is
    unrolled state by state until the geometric bound on the omitted mass
    drops below ``tol``. Finite profiles are treated as finite chains.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    r = profile.tail_rho
    if r is not None and r >= 1:
        raise NonRecurrent(f"tail_rho={r} >= 1")

    log_h = _log_weights(profile.rho)
    if r is None or closed_form_tail:
        pi, log_z = _normalise(log_h, r)
        bound = 0.0
    else:
        # omitted mass after state K is h_K r/(1-r) / Z <= h_K r/(1-r) / Z_K
        log_r = math.log(r)
        log_ratio = math.log(r / (1.0 - r))
        extra = []
        last = log_h[-1]
        partial = float(np.logaddexp.reduce(log_h))
        while last + log_ratio - partial >= math.log(tol):
            last += log_r
            extra.append(last)
            partial = float(np.logaddexp(partial, last))
        log_h = np.concatenate((log_h, extra))
        log_z = float(np.logaddexp.reduce(log_h))
        pi = np.exp(log_h - log_z)
        bound = math.exp(last + log_ratio - log_z)
        r = None
    if log_z > _LOG_MAX:
        raise StationaryOverflow(f"normalising constant exp({log_z:.1f}) is not representable")
    return StationaryDist(pi=pi, tail_mass_bound=bound, z=math.exp(log_z), tail_ratio=r, log_z=log_z)


def mean_occupancy(dist: StationaryDist) -> float:
    """Mean state ``sum_i i * pi_i``, with the geometric tail summed exactly."""
    k = len(dist.pi) - 1
    total = float(np.dot(np.arange(k + 1), dist.pi))
    if dist.tail_ratio is not None:
        r = dist.tail_ratio
        total += float(dist.pi[-1]) * (k * r / (1 - r) + r / (1 - r) ** 2)
    return total


def f_and_m(profile: RhoProfile, cap: MomentCap | float) -> tuple[float, float]:
    """Return ``f = 1/pi_0 = sum h_j`` and ``m = sum (i - cap) h_i``.

    For finite profiles the sums run over the finite state space.
    """
    c = cap.cap if isinstance(cap, MomentCap) else float(cap)
    dist = stationary_truncated(profile)
    f = dist.z
    return f, f * (mean_occupancy(dist) - c)


def monotonicity_probe(profile: RhoProfile, i: int, h: float) -> tuple[float, float]:
    """Forward-difference slopes of ``pi_0`` and ``E[N]`` with respect to ``rho_i``."""
    if not 1 <= i <= profile.n_explicit:
        raise IndexError(f"rho_{i} is not an explicit ratio")
    bumped = profile.rho[i - 1] + h
    if profile.bounds is not None:
        lo, hi = profile.bounds
        if not lo <= bumped <= hi:
            raise BoundViolation(f"rho_{i}+h={bumped} outside [{lo}, {hi}]")
    base = stationary_truncated(profile)
    moved = stationary_truncated(profile.with_rho(i, bumped))
    dpi0 = (moved.pi0 - base.pi0) / h
    den = (mean_occupancy(moved) - mean_occupancy(base)) / h
    return dpi0, den
