from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

DEFAULT_FEATURE_COUNT = 18


@dataclass(frozen=True)
class FeatureVector:
    """Binary indicator over L features: bits[l] == 1 iff the content has feature l."""

    bits: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"Feature vector entries must be 0 or 1, got {self.bits}")

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def from_indices(cls, indices: Iterable[int], length: int) -> "FeatureVector":
        bits = [0] * length
        for index in indices:
            if not 0 <= index < length:
                raise ValueError(f"Feature index {index} outside [0, {length})")
            bits[index] = 1
        return cls(tuple(bits))

    @classmethod
    def zeros(cls, length: int) -> "FeatureVector":
        return cls((0,) * length)

    def indices(self) -> Tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=float)
