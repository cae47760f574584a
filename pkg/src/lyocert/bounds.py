"""Additive Chernoff bound on the violation rate of the decay condition."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ViolationBound:
    c_hat: int
    m: int
    delta: float
    c_bar: float

    @property
    def empirical_rate(self) -> float:
        return self.c_hat / self.m

    @property
    def confidence_term(self) -> float:
        return self.c_bar - self.c_hat / self.m

    def to_dict(self) -> dict:
        return asdict(self)


def _check_delta(delta: float, *, closed: bool) -> None:
    ok = 0.0 < delta <= 1.0 if closed else 0.0 < delta < 1.0
    if not ok:
        raise ValueError(f"delta must be in (0, 1{']' if closed else ')'}, got {delta}")


def chernoff_bound(c_hat: int, m: int, delta: float) -> ViolationBound:
    """Upper bound on the true violation rate, valid with probability >= 1 - delta.

    c_bar = c_hat/m + sqrt(ln(1/delta) / (2m))
    """
    if isinstance(c_hat, bool) or isinstance(m, bool) or int(c_hat) != c_hat or int(m) != m:
        raise ValueError("c_hat and m must be integers")
    c_hat, m = int(c_hat), int(m)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not 0 <= c_hat <= m:
        raise ValueError(f"c_hat must be in [0, m], got {c_hat}")
    _check_delta(delta, closed=True)
    c_bar = c_hat / m + math.sqrt(math.log(1.0 / delta) / (2 * m))
    return ViolationBound(c_hat, m, float(delta), c_bar)


def required_samples(target_bound: float, delta: float) -> int:
    """Smallest m with sqrt(ln(1/delta)/(2m)) <= target_bound (zero observed violations)."""
    if not target_bound > 0:
        raise ValueError("target_bound must be > 0")
    _check_delta(delta, closed=False)
    log_term = math.log(1.0 / delta)
    m = max(1, math.ceil(log_term / (2 * target_bound**2)))
    # Guard the ceiling against round-off on either side.
    while m > 1 and math.sqrt(log_term / (2 * (m - 1))) <= target_bound:
        m -= 1
    while math.sqrt(log_term / (2 * m)) > target_bound:
        m += 1
    return m
