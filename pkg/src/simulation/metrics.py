from dataclasses import dataclass
import math

from src.utility.errors import AccountingError, MetricDomainError


def compute_chr(hits: int, requests: int) -> float:
    """Cache hit ratio; 0 when nothing was requested."""
    if requests < 0 or hits < 0:
        raise AccountingError(f"Negative tally: hits={hits}, requests={requests}")
    if hits > requests:
        raise AccountingError(f"{hits} hits out of {requests} requests")
    return hits / requests if requests else 0.0


def compute_norm_delivery_time(chr: float, tau_ratio: float) -> float:
    """
    Mean delivery time in units of the access-link time.

    A hit costs one access hop, a miss adds the backhaul at ``tau_ratio`` times
    the access time: ``1 + (1 - chr) * tau_ratio``.
    """
    if not (0.0 <= chr <= 1.0) or math.isnan(chr):
        raise MetricDomainError(f"CHR {chr} outside [0, 1]")
    if not tau_ratio > 0 or math.isinf(tau_ratio):
        raise MetricDomainError(f"tau_ratio must be a positive finite number, got {tau_ratio}")
    return 1.0 + (1.0 - chr) * tau_ratio


@dataclass
class Tally:
    requests: int = 0
    hits: int = 0

    def count(self, hit: bool) -> None:
        self.requests += 1
        self.hits += int(hit)

    @property
    def chr(self) -> float:
        return compute_chr(self.hits, self.requests)
