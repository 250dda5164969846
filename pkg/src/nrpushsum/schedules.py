"""Decaying weight sequences for neighbor mixing and initial-value re-injection.

Both sequences are indexed from k = 0.  The mixing weight ``beta`` holds a
constant early value and then follows ``b * k**-q`` with q > 1, so its tail
is summable.  The re-injection weight ``theta`` comes in three kinds:

* geometric: ``theta(k) = rho**k``;
* family: proportional to ``beta`` early, then ``d2*n*b*delta * k**-q``,
  sized so that the denominator states stay positive under any link noise
  bounded by ``delta``;
* constant-then-power: a free-form early constant with a summable power
  tail, used by runs whose early value is pinned directly.

Infinite sums are evaluated in closed form: exact partial sums plus the
upper tail bound ``sum_{s>=k0} b*s**-q <= b*(k0**-q + k0**(1-q)/(q-1))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# strict upper limit for the mixing weight; keeps 1 - max(beta) > 0
BETA_CAP = 1.0 - 1e-12

_DIRECT_CHUNK = 1_000_000


def _power_tail_upper(coeff: float, q: float, k0: int) -> float:
    """Closed-form upper bound on sum_{s >= k0} coeff * s**-q (q > 1, k0 >= 1)."""
    if coeff == 0.0:
        return 0.0
    return coeff * (k0 ** (-q) + k0 ** (1.0 - q) / (q - 1.0))


def _direct_sum(schedule, k0: int, cutoff: int) -> float:
    """Plain summation of schedule(k) over k0 <= k < cutoff, chunked."""
    total = 0.0
    for start in range(k0, cutoff, _DIRECT_CHUNK):
        stop = min(start + _DIRECT_CHUNK, cutoff)
        total += float(np.sum(schedule(np.arange(start, stop))))
    return total


@dataclass(frozen=True)
class BetaSchedule:
    """Constant-then-power mixing weight, always in [0, 1).

    beta(k) = beta_early            for k < k_beta
    beta(k) = min(b_coeff * k**-q, BETA_CAP)   for k >= k_beta
    """

    beta_early: float
    b_coeff: float
    q: float
    k_beta: int

    def __call__(self, k):
        karr = np.asarray(k)
        if np.any(karr < 0):
            raise ValueError("schedule index must be >= 0")
        safe = np.maximum(karr, self.k_beta).astype(float)
        late = np.minimum(self.b_coeff * safe ** (-self.q), BETA_CAP)
        out = np.where(karr < self.k_beta, self.beta_early, late)
        if karr.ndim == 0:
            return float(out)
        return out

    def max_value(self) -> float:
        """sup_k beta(k); the tail is non-increasing so its max sits at k_beta."""
        return max(self.beta_early, min(self.b_coeff * self.k_beta ** (-self.q), BETA_CAP))

    def tail_sum_analytic(self, k0: int) -> float:
        """Closed-form upper bound on sum_{k >= k0} beta(k)."""
        if k0 < 0:
            raise ValueError("k0 must be >= 0")
        if k0 < self.k_beta:
            return (self.k_beta - k0) * self.beta_early + self.tail_sum_analytic(self.k_beta)
        return _power_tail_upper(self.b_coeff, self.q, max(k0, 1))

    def tail_sum_direct(self, k0: int, cutoff: int = 10**6) -> float:
        """Plain partial sum of beta(k) over k0 <= k < cutoff."""
        return _direct_sum(self, k0, cutoff)

    def total_sum(self) -> float:
        """Closed-form upper bound on sum_{k >= 0} beta(k)."""
        return self.tail_sum_analytic(0)


class ThetaSchedule:
    """Common interface of the re-injection weight sequences."""

    def __call__(self, k):
        raise NotImplementedError

    def total_sum(self) -> float:
        return self.tail_sum_analytic(0)

    def tail_sum_analytic(self, k0: int) -> float:
        raise NotImplementedError

    def tail_sum_direct(self, k0: int, cutoff: int = 10**6) -> float:
        return _direct_sum(self, k0, cutoff)


@dataclass(frozen=True)
class GeometricTheta(ThetaSchedule):
    """theta(k) = rho**k with rho in (0, 1); total sum exactly 1/(1-rho)."""

    rho: float

    def __call__(self, k):
        karr = np.asarray(k)
        if np.any(karr < 0):
            raise ValueError("schedule index must be >= 0")
        out = self.rho ** karr.astype(float)
        if karr.ndim == 0:
            return float(out)
        return out

    def tail_sum_analytic(self, k0: int) -> float:
        return self.rho**k0 / (1.0 - self.rho)


@dataclass(frozen=True)
class ThetaFamily(ThetaSchedule):
    """Noise-dominating family tied to a mixing schedule and a bound delta.

    theta(k) = d1 * n * delta * beta(k)          for k < k_theta
    theta(k) = d2 * n * b * delta * k**-q        for k >= k_theta

    With d1, d2 >= 1 the weighted initial values strictly dominate any
    per-link noise bounded by delta, keeping denominator states positive.
    """

    beta: BetaSchedule
    n_agents: int
    delta: float
    d1: float
    d2: float
    k_theta: int

    def __call__(self, k):
        karr = np.asarray(k)
        if np.any(karr < 0):
            raise ValueError("schedule index must be >= 0")
        early = self.d1 * self.n_agents * self.delta * self.beta(karr)
        safe = np.maximum(karr, max(self.k_theta, 1)).astype(float)
        late = self.d2 * self.n_agents * self.beta.b_coeff * self.delta * safe ** (-self.beta.q)
        out = np.where(karr < self.k_theta, early, late)
        if karr.ndim == 0:
            return float(out)
        return out

    def tail_sum_analytic(self, k0: int) -> float:
        if k0 < 0:
            raise ValueError("k0 must be >= 0")
        coeff = self.d2 * self.n_agents * self.beta.b_coeff * self.delta
        if k0 >= self.k_theta:
            return _power_tail_upper(coeff, self.beta.q, max(k0, 1))
        early = float(np.sum(self(np.arange(k0, self.k_theta))))
        return early + _power_tail_upper(coeff, self.beta.q, max(self.k_theta, 1))


@dataclass(frozen=True)
class ConstantThenPowerTheta(ThetaSchedule):
    """theta(k) = theta_early for k < k_theta, then c_coeff * k**-q.

    Only summability is guaranteed; whether it dominates a given noise
    bound must be checked separately (see dominance_margin).
    """

    theta_early: float
    c_coeff: float
    q: float
    k_theta: int

    def __call__(self, k):
        karr = np.asarray(k)
        if np.any(karr < 0):
            raise ValueError("schedule index must be >= 0")
        safe = np.maximum(karr, max(self.k_theta, 1)).astype(float)
        late = self.c_coeff * safe ** (-self.q)
        out = np.where(karr < self.k_theta, self.theta_early, late)
        if karr.ndim == 0:
            return float(out)
        return out

    def tail_sum_analytic(self, k0: int) -> float:
        if k0 < 0:
            raise ValueError("k0 must be >= 0")
        if k0 < self.k_theta:
            return (self.k_theta - k0) * self.theta_early + self.tail_sum_analytic(self.k_theta)
        return _power_tail_upper(self.c_coeff, self.q, max(k0, 1))


def make_beta(beta_early: float, b_coeff: float, q: float, k_beta: int) -> BetaSchedule:
    """Validated constant-then-power mixing schedule."""
    problems = []
    if not (0.0 <= beta_early < 1.0):
        problems.append(f"beta_early must satisfy 0 <= beta_early < 1, got {beta_early}")
    if q <= 1.0:
        problems.append(f"q must be > 1 so the tail sum converges, got q={q}")
    if b_coeff < 0.0:
        problems.append(f"b_coeff must be >= 0, got {b_coeff}")
    if k_beta < 1:
        problems.append(f"k_beta must be >= 1, got {k_beta}")
    if problems:
        raise ValueError("; ".join(problems))
    return BetaSchedule(float(beta_early), float(b_coeff), float(q), int(k_beta))


def make_theta_geometric(rho: float) -> GeometricTheta:
    if not (0.0 < rho < 1.0):
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    return GeometricTheta(float(rho))


def make_theta_family(
    beta: BetaSchedule,
    n_agents: int,
    delta: float,
    d1: float,
    d2: float,
    k_theta: int,
) -> ThetaFamily:
    """Validated family member; raises naming any violated bound."""
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    if delta < 0.0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    problems = []
    if d1 < 1.0:
        problems.append(f"d1 >= 1 violated: d1={d1}")
    if d2 < 1.0:
        problems.append(f"d2 >= 1 violated: d2={d2}")
    nbd = n_agents * beta.b_coeff * delta
    if nbd > 0.0:
        d2_max = k_theta**beta.q / nbd
        if d2 > d2_max:
            problems.append(
                f"d2 <= k_theta**q / (n*b*delta) violated: d2={d2} > {d2_max:.6g}"
            )
        k_floor = nbd ** (1.0 / beta.q)
        if k_theta < k_floor:
            problems.append(
                f"k_theta >= (n*delta*b)**(1/q) violated: k_theta={k_theta} < {k_floor:.6g}"
            )
    if k_theta < beta.k_beta:
        problems.append(f"k_theta >= k_beta violated: k_theta={k_theta} < {beta.k_beta}")
    if problems:
        raise ValueError("; ".join(problems))
    return ThetaFamily(beta, int(n_agents), float(delta), float(d1), float(d2), int(k_theta))


def make_theta_constant_then_power(
    theta_early: float, c_coeff: float, q: float, k_theta: int
) -> ConstantThenPowerTheta:
    problems = []
    if theta_early < 0.0:
        problems.append(f"theta_early must be >= 0, got {theta_early}")
    if c_coeff < 0.0:
        problems.append(f"c_coeff must be >= 0, got {c_coeff}")
    if q <= 1.0:
        problems.append(f"q must be > 1 so the tail sum converges, got q={q}")
    if k_theta < 1:
        problems.append(f"k_theta must be >= 1, got {k_theta}")
    if problems:
        raise ValueError("; ".join(problems))
    return ConstantThenPowerTheta(float(theta_early), float(c_coeff), float(q), int(k_theta))


def dominance_margin(
    theta: ThetaSchedule,
    beta: BetaSchedule,
    noise_sum_bound: float,
    ks,
) -> float:
    """min over ks of theta(k) - noise_sum_bound * beta(k).

    ``noise_sum_bound`` bounds the total noise entering one agent per round
    (per-link bound times its in-degree).  A positive margin means the
    re-injected initial values outweigh the worst-case noise at every
    sampled round.
    """
    karr = np.asarray(ks)
    return float(np.min(theta(karr) - noise_sum_bound * beta(karr)))


def theta_zero_for_band(beta: BetaSchedule, n_agents: int, delta: float, mu: float) -> float:
    """n * delta * sum(beta) / mu: the early re-injection weight that pins
    the limiting consensus value within mu of the initial average."""
    if mu <= 0.0:
        raise ValueError(f"mu must be > 0, got {mu}")
    return n_agents * delta * beta.total_sum() / mu


def implied_band_mu(
    beta: BetaSchedule, theta: ThetaSchedule, n_agents: int, delta: float
) -> float:
    """The band half-width mu implied by configured schedules:
    n * delta * sum(beta) / (1 + sum(theta))."""
    return n_agents * delta * beta.total_sum() / (1.0 + theta.total_sum())
