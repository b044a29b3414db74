"""Two-period bank-to-farm lending model under discretion.

At t=1 the farm needs an injection ``rho`` per unit of asset, drawn from
N(mu, sigma^2).  At t=2 the farm pays ``z + eps`` per unit, of which only a
fraction ``theta`` is pledgeable.  The bank may pay ``xi`` to observe ``eps``
before deciding to lend.  ``eps`` follows the three-point law
{-e, 0, e} with probabilities {q, 1-2q, q}.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erfcx

from .errors import NumericError, ParameterDomainError

__all__ = [
    "Action",
    "FarmParams",
    "LendingDecision",
    "Region",
    "ShockModel",
    "Thresholds",
    "approval_probability",
    "commitment_credit_line",
    "decide",
    "h_ratio",
    "h_inverse",
    "lending_region",
    "region_grid",
    "simulate_approval_rate",
    "thresholds",
    "value_monitor",
    "value_no_monitor",
]

# draws per independent Philox sub-stream; fixing the block size makes the
# result independent of the number of workers
_BLOCK = 1 << 16
_H_SCALE = 2.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class FarmParams:
    z: float
    theta: float
    e: float
    q: float
    xi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ParameterDomainError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 < self.q <= 0.5:
            raise ParameterDomainError(f"q must lie in (0, 1/2], got {self.q}")
        if self.e < 0:
            raise ParameterDomainError(f"e must be non-negative, got {self.e}")
        if self.xi < 0:
            raise ParameterDomainError(f"xi must be non-negative, got {self.xi}")
        for name in ("z", "theta", "e", "q", "xi"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterDomainError(f"{name} must be finite")

    @property
    def pledgeable(self) -> float:
        """Pledgeable terminal value ``theta * z``."""
        return self.theta * self.z


@dataclass(frozen=True)
class ShockModel:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ParameterDomainError(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ParameterDomainError("mu must be finite")


@dataclass(frozen=True)
class Thresholds:
    rho_low: float
    rho_high: float

    @property
    def band_is_empty(self) -> bool:
        return self.rho_low > self.rho_high


class Action(enum.Enum):
    APPROVE_WITHOUT_MONITORING = "ApproveWithoutMonitoring"
    MONITOR = "Monitor"
    DENY_WITHOUT_MONITORING = "DenyWithoutMonitoring"


class Region(enum.Enum):
    APPROVE = "Approve"
    DENY = "Deny"


@dataclass(frozen=True)
class LendingDecision:
    action: Action
    approve_after_monitoring: Optional[bool]
    bank_value: float

    @property
    def approved(self) -> Optional[bool]:
        """Final lending outcome, or None if monitoring happened but eps is unknown."""
        if self.action is Action.APPROVE_WITHOUT_MONITORING:
            return True
        if self.action is Action.DENY_WITHOUT_MONITORING:
            return False
        return self.approve_after_monitoring


def thresholds(p: FarmParams) -> Thresholds:
    """Monitoring band ``[rho_low, rho_high]``.

    The bank monitors only for cash needs inside the band; the band is empty
    exactly when ``xi > q * theta * e``.
    """
    if p.q <= 0:
        raise ParameterDomainError("q must be positive")
    return Thresholds(
        rho_low=p.theta * (p.z - p.e) + p.xi / p.q,
        rho_high=p.theta * (p.z + p.e) - p.xi / p.q,
    )


def value_no_monitor(p: FarmParams, rho: float) -> float:
    return max(p.theta * p.z - rho, 0.0)


def value_monitor(p: FarmParams, rho: float) -> float:
    th = p.theta
    return (
        p.q * max(th * (p.z + p.e) - rho, 0.0)
        + (1.0 - 2.0 * p.q) * max(th * p.z - rho, 0.0)
        + p.q * max(th * (p.z - p.e) - rho, 0.0)
        - p.xi
    )


def _check_eps(p: FarmParams, eps: float) -> None:
    if eps not in (-p.e, 0.0, p.e):
        raise ParameterDomainError(f"epsilon {eps} is outside the support {{-{p.e}, 0, {p.e}}}")


def decide(
    p: FarmParams, s: ShockModel, rho: float, epsilon_observed: Optional[float] = None
) -> LendingDecision:
    """Bank's choice at t=1 given the cash need ``rho``.

    Monitoring requires a strictly higher value; ties go to not monitoring.
    ``V^M - V^N`` is piecewise linear in ``rho`` and positive exactly on the
    open band ``(rho_low, rho_high)``, so the band is tested directly; the
    value difference itself loses the tie to rounding when ``xi = 0``.
    ``s`` is accepted for interface symmetry with the simulator; the choice
    at t=1 does not depend on the distribution of ``rho``.
    """
    del s
    if epsilon_observed is not None:
        _check_eps(p, epsilon_observed)
    vm = value_monitor(p, rho)
    vn = value_no_monitor(p, rho)
    t = thresholds(p)
    if t.rho_low < rho < t.rho_high:
        after = None
        if epsilon_observed is not None:
            after = rho < p.theta * (p.z + epsilon_observed)
        return LendingDecision(Action.MONITOR, after, vm)
    # rho == theta*z gives V^N == 0: nothing to gain from lending
    action = (
        Action.APPROVE_WITHOUT_MONITORING
        if rho < p.theta * p.z
        else Action.DENY_WITHOUT_MONITORING
    )
    return LendingDecision(action, None, vn)


def lending_region(p: FarmParams, rho: float, epsilon: float) -> Region:
    """Classify a ``(rho, eps)`` point of the lending-region diagram.

    The band is treated as closed.  With an empty band the bank never
    monitors and lends iff ``rho < theta * z``.
    """
    _check_eps(p, epsilon)
    t = thresholds(p)
    if t.band_is_empty:
        return Region.APPROVE if rho < p.theta * p.z else Region.DENY
    if rho < t.rho_low:
        return Region.APPROVE
    if rho <= t.rho_high and rho < p.theta * (p.z + epsilon):
        return Region.APPROVE
    return Region.DENY


def region_grid(p: FarmParams, rho_min: float, rho_max: float, n: int = 200):
    """Rows ``(rho, eps, decision)`` on an evenly spaced rho grid for each eps."""
    rows = []
    for rho in np.linspace(rho_min, rho_max, n):
        for eps in (-p.e, 0.0, p.e):
            rows.append((float(rho), eps, lending_region(p, float(rho), eps).value))
    return rows


# ---------------------------------------------------------------------------
# commitment contract


def h_ratio(x):
    """``phi(x) / Phi(x)`` via the scaled complementary error function.

    ``Phi(x) = erfcx(-x/sqrt2) exp(-x^2/2) / 2`` so the Gaussian factors
    cancel analytically; no cancellation or underflow in the left tail.
    """
    x = np.asarray(x, dtype=float)
    out = _H_SCALE / erfcx(-x / math.sqrt(2.0))
    return out if out.ndim else float(out)


def h_inverse(y: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Solve ``h(x) = y`` by bisection; ``h`` is strictly decreasing onto (0, inf)."""
    if not (y > 0 and math.isfinite(y)):
        raise ParameterDomainError(f"h(x) = {y} has no finite solution; need a positive value")
    lo, hi = -1.0, 1.0
    it = 0
    # expand until h(lo) >= y >= h(hi)
    while h_ratio(lo) < y:
        lo *= 2.0
        it += 1
        if it >= max_iter:
            raise NumericError("bracket expansion for h inverse did not converge", iterations=it)
    while h_ratio(hi) > y:
        hi *= 2.0
        it += 1
        if it >= max_iter:
            raise NumericError("bracket expansion for h inverse did not converge", iterations=it)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if h_ratio(mid) > y:
            lo = mid
        else:
            hi = mid
        it += 1
        if it >= max_iter:
            raise NumericError(
                f"bisection for h inverse stopped with bracket width {hi - lo:.3g}",
                iterations=it,
            )
    return 0.5 * (lo + hi)


def commitment_credit_line(p: FarmParams, s: ShockModel) -> float:
    """Ex-ante credit line ``mu + sigma * h^{-1}((mu - theta z) / sigma)``."""
    arg = (s.mu - p.pledgeable) / s.sigma
    if not arg > 0:
        raise ParameterDomainError(
            f"(mu - theta z)/sigma = {arg:.6g} must be positive for a finite credit line"
        )
    return s.mu + s.sigma * h_inverse(arg)


# ---------------------------------------------------------------------------
# Monte Carlo


def _approve_vec(p: FarmParams, rho: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Vectorised decide() followed by the post-monitoring rule."""
    th = p.theta
    t = thresholds(p)
    monitor = (rho > t.rho_low) & (rho < t.rho_high)
    return np.where(monitor, rho < th * (p.z + eps), rho < th * p.z)


def _block_count(p, s, seed, block, size):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    rho = s.mu + s.sigma * rng.standard_normal(size)
    u = rng.random(size)
    eps = np.where(u < p.q, -p.e, np.where(u < 1.0 - p.q, 0.0, p.e))
    return int(np.count_nonzero(_approve_vec(p, rho, eps)))


def simulate_approval_rate(
    p: FarmParams, s: ShockModel, n_draws: int, seed: int, workers: int = 1
) -> float:
    """Fraction of simulated farms that end up with a loan.

    Draws are split into fixed-size blocks, each with its own Philox stream
    keyed on ``(seed, block)``, so the answer does not depend on ``workers``.
    """
    if n_draws < 1:
        raise ParameterDomainError("n_draws must be at least 1")
    sizes = [_BLOCK] * (n_draws // _BLOCK)
    if n_draws % _BLOCK:
        sizes.append(n_draws % _BLOCK)
    jobs = list(enumerate(sizes))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda j: _block_count(p, s, seed, *j), jobs))
    else:
        counts = [_block_count(p, s, seed, b, n) for b, n in jobs]
    return sum(counts) / n_draws


def approval_probability(p: FarmParams, s: ShockModel) -> float:
    """Exact approval probability under the three-point eps law.

    For each eps the approval set in rho is a half-line, so the probability
    is a sum of three normal CDF values.
    """
    from scipy.stats import norm

    th = p.theta
    t = thresholds(p)
    cut_zero = th * p.z
    if t.band_is_empty:
        cut_plus = cut_minus = cut_zero
    else:
        cut_plus = t.rho_high
        cut_minus = t.rho_low
    cdf = lambda c: norm.cdf((c - s.mu) / s.sigma)  # noqa: E731
    return p.q * cdf(cut_plus) + (1 - 2 * p.q) * cdf(cut_zero) + p.q * cdf(cut_minus)
