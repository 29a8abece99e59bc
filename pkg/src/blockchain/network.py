from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple
import heapq
import itertools

import numpy as np


@dataclass(order=True)
class InFlight:
    deliver_at: int
    tiebreak: int
    dest: int = field(compare=False)
    message: Any = field(compare=False)


class SimulatedNetwork:
    """
    Seeded point-to-point message queue between validators.

    Every send draws an integer delay uniformly from ``delay_range`` (inclusive)
    and is dropped with ``drop_probability``. Deliveries are ordered by
    (delivery tick, send order), so the same seed and the same sends always
    yield the same schedule.
    """

    def __init__(self, delay_range: Tuple[int, int] = (1, 5), drop_probability: float = 0.0, seed: int = 0):
        low, high = delay_range
        if low < 1 or high < low:
            raise ValueError(f"Invalid delay range {delay_range}")
        if not 0.0 <= drop_probability < 1.0:
            raise ValueError(f"Drop probability must be in [0, 1), got {drop_probability}")
        self.delay_range = (int(low), int(high))
        self.drop_probability = drop_probability
        self.rng = np.random.default_rng(seed)
        self._queue: List[InFlight] = []
        self._counter = itertools.count()
        self.sent = 0
        self.dropped = 0

    @property
    def max_delay(self) -> int:
        return self.delay_range[1]

    def send(self, dest: int, message, now: int) -> Optional[int]:
        """Enqueues ``message`` for ``dest``; returns the delivery tick or None if dropped."""
        self.sent += 1
        if self.drop_probability and self.rng.random() < self.drop_probability:
            self.dropped += 1
            return None
        delay = int(self.rng.integers(self.delay_range[0], self.delay_range[1] + 1))
        heapq.heappush(self._queue, InFlight(now + delay, next(self._counter), dest, message))
        return now + delay

    def deliver_due(self, now: int) -> List[InFlight]:
        due = []
        while self._queue and self._queue[0].deliver_at <= now:
            due.append(heapq.heappop(self._queue))
        return due
