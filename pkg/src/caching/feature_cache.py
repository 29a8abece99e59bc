from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.blockchain.ledger import ContentMetadata, ContractRecord
from src.caching.features import DEFAULT_FEATURE_COUNT, FeatureVector
from src.utility.errors import DimensionError, OwnershipError


@dataclass(frozen=True, eq=False)
class FeaturePopularity:
    """
    Normalized per-feature request counts over a request history.

    ``q`` keeps feature order and is what contents are scored against;
    ``q_sorted_view`` is the descending ranking of feature indices (lower index
    first on ties), used for reporting only. ``cold`` marks a history without a single
    counted feature: empty, or only featureless contents.
    """

    q: np.ndarray
    q_sorted_view: Tuple[int, ...]
    cold: bool = False
    requests: int = 0

    def __len__(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class ContentLibrary:
    cp_id: str
    contents: Tuple[Tuple[int, FeatureVector], ...]

    def __post_init__(self):
        object.__setattr__(self, "contents", tuple(self.contents))
        ids = [content_id for content_id, _ in self.contents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Library of '{self.cp_id}' repeats content ids")
        lengths = {len(features) for _, features in self.contents}
        if len(lengths) > 1:
            raise DimensionError(f"Library of '{self.cp_id}' mixes feature lengths {sorted(lengths)}")

    @property
    def size(self) -> int:
        return len(self.contents)

    @property
    def ids(self) -> np.ndarray:
        return np.asarray([content_id for content_id, _ in self.contents], dtype=np.int64)

    def id_set(self) -> FrozenSet[int]:
        return frozenset(content_id for content_id, _ in self.contents)

    def feature_matrix(self) -> np.ndarray:
        if not self.contents:
            return np.zeros((0, 0))
        return np.vstack([features.as_array() for _, features in self.contents])

    def metadata(self) -> Dict[int, ContentMetadata]:
        return {
            content_id: ContentMetadata(content_id=content_id, feature_vector=features, cp_id=self.cp_id)
            for content_id, features in self.contents
        }


@dataclass(frozen=True)
class CorrelationVector:
    cp_id: str
    p: Dict[int, float]


@dataclass(frozen=True)
class CacheState:
    cp_id: str
    capacity: int
    resident: FrozenSet[int]
    library_ids: FrozenSet[int] = field(repr=False, default=frozenset())

    def __contains__(self, content_id: int) -> bool:
        return content_id in self.resident


class Lookup(str, Enum):
    HIT = "Hit"
    MISS = "Miss"


def _metadata_of(entry: Union[ContentMetadata, ContractRecord]) -> Optional[ContentMetadata]:
    # Plan records carry no feature vector.
    if isinstance(entry, ContractRecord):
        return entry.content_metadata
    return entry


def extract_feature_popularity(
    history: Iterable[Union[ContentMetadata, ContractRecord]],
    length: int = None,
) -> FeaturePopularity:
    """
    Accumulates the feature vectors of every request in ``history`` and L1-normalizes.

    Args:
        history: Requested content metadata, or contract records (plan records skipped).
        length: Feature count; inferred from the history when omitted.

    Returns:
        FeaturePopularity: ``cold`` with a zero vector when no feature was counted.

    Raises:
        DimensionError: If feature vectors of different length are mixed.
    """
    vectors = [m.feature_vector.bits for m in map(_metadata_of, history) if m is not None]
    lengths = {len(bits) for bits in vectors}
    if length is not None:
        lengths.add(length)
    if len(lengths) > 1:
        raise DimensionError(f"Feature vectors of lengths {sorted(lengths)} in one history")
    size = lengths.pop() if lengths else DEFAULT_FEATURE_COUNT

    counts = np.asarray(vectors, dtype=float).sum(axis=0) if vectors else np.zeros(size)
    total = counts.sum()
    if total == 0:
        return FeaturePopularity(q=np.zeros(size), q_sorted_view=tuple(range(size)), cold=True, requests=len(vectors))
    q = counts / total
    return FeaturePopularity(
        q=q,
        q_sorted_view=tuple(int(i) for i in np.argsort(-q, kind="stable")),
        cold=False,
        requests=len(vectors),
    )


def _as_array(q: Union[FeaturePopularity, np.ndarray, Sequence[float]]) -> np.ndarray:
    return np.asarray(q.q if isinstance(q, FeaturePopularity) else q, dtype=float)


def content_correlation(f: FeatureVector, q: Union[FeaturePopularity, np.ndarray, Sequence[float]]) -> float:
    """Cosine similarity of ``f`` and the unsorted ``q``; 0 when either is all-zero."""
    f_arr = f.as_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=float)
    q_arr = _as_array(q)
    if f_arr.shape != q_arr.shape:
        raise DimensionError(f"Feature vector of length {len(f_arr)} against popularity of length {len(q_arr)}")
    norms = float(np.dot(f_arr, f_arr)) * float(np.dot(q_arr, q_arr))
    if norms == 0.0:
        return 0.0
    return min(1.0, float(np.dot(f_arr, q_arr)) / np.sqrt(norms))


def _scores(library: ContentLibrary, q: np.ndarray) -> np.ndarray:
    if library.size == 0:
        return np.zeros(0)
    features = library.feature_matrix()
    if features.shape[1] != len(q):
        raise DimensionError(f"Library features of length {features.shape[1]} against popularity of length {len(q)}")
    norms = np.sqrt((features * features).sum(axis=1) * float(np.dot(q, q)))
    dots = features @ q
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)
    return np.clip(scores, 0.0, 1.0)


def score_library(library: ContentLibrary, q) -> CorrelationVector:
    scores = _scores(library, _as_array(q))
    return CorrelationVector(
        cp_id=library.cp_id,
        p={int(content_id): float(score) for content_id, score in zip(library.ids, scores)},
    )


def ranked_ids(library: ContentLibrary, q) -> List[int]:
    """Library ids by descending correlation, lower content id first on ties."""
    scores = _scores(library, _as_array(q))
    ids = library.ids
    order = np.lexsort((ids, -scores))
    return [int(ids[i]) for i in order]


def rank_and_prefetch(library: ContentLibrary, q, capacity: int) -> CacheState:
    """Caches the top ``min(Z, N_m)`` contents of ``library`` by correlation with ``q``."""
    if capacity < 0:
        raise ValueError(f"Cache capacity must be non-negative, got {capacity}")
    resident = ranked_ids(library, q)[:capacity]
    return CacheState(cp_id=library.cp_id, capacity=capacity, resident=frozenset(resident), library_ids=library.id_set())


def random_prefetch(library: ContentLibrary, capacity: int, rng: np.random.Generator) -> CacheState:
    """
    Uniform random ``min(Z, N_m)``-subset of the library (the conventional cold-start policy).

    The subset is a prefix of one permutation of the library, so generators
    seeded alike give nested caches as Z grows.
    """
    if capacity < 0:
        raise ValueError(f"Cache capacity must be non-negative, got {capacity}")
    count = min(capacity, library.size)
    chosen = rng.permutation(library.ids)[:count]
    return CacheState(
        cp_id=library.cp_id,
        capacity=capacity,
        resident=frozenset(int(i) for i in chosen),
        library_ids=library.id_set(),
    )


def cache_lookup(cache: CacheState, content_id: int) -> Lookup:
    """
    Raises:
        OwnershipError: If ``content_id`` is not in the CP's library.
    """
    if content_id not in cache.library_ids:
        raise OwnershipError(f"Content {content_id} is not in the library of '{cache.cp_id}'")
    return Lookup.HIT if content_id in cache.resident else Lookup.MISS


def ranked_feature_report(popularity: FeaturePopularity, names: Sequence[str] = None) -> pd.DataFrame:
    """One row per feature in descending popularity: rank, feature, share."""
    names = list(names) if names is not None else [str(i) for i in range(len(popularity))]
    rows = [
        {"rank": rank, "feature": names[index], "share": float(popularity.q[index])}
        for rank, index in enumerate(popularity.q_sorted_view, start=1)
    ]
    return pd.DataFrame(rows, columns=["rank", "feature", "share"])


def dump_correlations(correlation: CorrelationVector, cache: CacheState, path) -> Path:
    """Writes (content_id, correlation, cached) per library content, sorted by content id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            {"content_id": content_id, "correlation": f"{score:.12f}", "cached": int(content_id in cache.resident)}
            for content_id, score in sorted(correlation.p.items())
        ],
        columns=["content_id", "correlation", "cached"],
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
