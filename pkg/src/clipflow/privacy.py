"""Privacy bookkeeping: sensitivity, GDP central-limit accounting, (eps, delta)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from clipflow.clipping import ClipConfig


class PrivacyError(ValueError):
    pass


def normal_cdf(x: float) -> float:
    # erfc keeps full relative precision in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def sensitivity_bound(clip: ClipConfig):
    """Worst-case l2 change of the clipped gradient sum when one sample changes.

    ``R`` for flat clipping, the list ``R_r`` for layerwise; the same for local
    and global modes. Unclipped or batch-clipped sums have no finite bound.
    """
    if clip.mode in ("none", "batch"):
        raise PrivacyError(f"clip mode {clip.mode!r} has unbounded per-sample sensitivity")
    if clip.scope == "flat":
        return clip.R
    return list(clip.R_r)


def gdp_mu(sigma: float, p: float, steps: int) -> float:
    """mu = p * sqrt(T (exp(1/sigma^2) - 1)); infinite when sigma == 0."""
    if sigma < 0:
        raise PrivacyError("sigma must be nonnegative")
    if not 0 < p <= 1:
        raise PrivacyError(f"sampling rate must lie in (0, 1], got {p}")
    if steps < 0:
        raise PrivacyError("step count must be nonnegative")
    if steps == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    return p * math.sqrt(steps * math.expm1(1.0 / (sigma * sigma)))


def delta_of_eps(eps: float, mu: float) -> float:
    """delta(eps; mu) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)."""
    if mu <= 0:
        raise PrivacyError("mu must be positive")
    a = normal_cdf(-eps / mu + mu / 2.0)
    b = normal_cdf(-eps / mu - mu / 2.0)
    # e^eps * b can overflow the exponent for huge eps while b underflows
    tail = math.exp(eps + math.log(b)) if b > 0 else 0.0
    return min(1.0, max(0.0, a - tail))


def mu_to_eps(mu: float, delta: float) -> float:
    """Smallest eps >= 0 with delta(eps; mu) <= delta, by bisection."""
    if not 0 < delta < 1:
        raise PrivacyError(f"delta must lie in (0, 1), got {delta}")
    if mu == 0:
        return 0.0
    if math.isinf(mu):
        return math.inf
    if mu < 0:
        raise PrivacyError("mu must be nonnegative")
    if delta_of_eps(0.0, mu) <= delta:
        return 0.0
    lo, hi = 0.0, 1.0
    while delta_of_eps(hi, mu) > delta:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise PrivacyError("could not bracket eps")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if delta_of_eps(mid, mu) > delta:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass
class PrivacyLedger:
    sigma: float
    p: float
    delta: float
    steps: int = 0
    mu: float = 0.0
    eps: float = 0.0

    def advance(self, k: int = 1) -> "PrivacyLedger":
        self.steps += k
        self.mu = gdp_mu(self.sigma, self.p, self.steps)
        self.eps = mu_to_eps(self.mu, self.delta) if self.mu > 0 else 0.0
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def ledger_for(sigma: float, p: float, steps: int, delta: float) -> PrivacyLedger:
    return PrivacyLedger(sigma, p, delta).advance(steps) if steps else PrivacyLedger(sigma, p, delta)


class LedgerMismatch(AssertionError):
    pass


def ledger_equality_check(a: PrivacyLedger, b: PrivacyLedger) -> bool:
    """True when two ledgers are identical field by field; raises with a diff otherwise."""
    da, db = a.to_dict(), b.to_dict()
    diff = {k: (da[k], db[k]) for k in da if da[k] != db[k]}
    if diff:
        raise LedgerMismatch(f"ledgers differ: {diff}")
    return True
