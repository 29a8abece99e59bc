from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.caching.features import DEFAULT_FEATURE_COUNT, FeatureVector
from src.trace.movielens import MovieRecord, TraceWindow
from src.utility.logger import logger


@dataclass(frozen=True, eq=False)
class SyntheticTrace:
    """
    A generated catalog and its request trace.

    ``ranking`` lists content ids from most to least requested in expectation;
    ``preference`` is the latent per-feature weight the ranking was derived from.
    """

    catalog: List[MovieRecord]
    window: TraceWindow
    ranking: Tuple[int, ...]
    preference: np.ndarray


def zipf_weights(n: int, s: float) -> np.ndarray:
    """Bounded Zipf probabilities over ranks 1..n: ``k^-s`` normalized."""
    ranks = np.arange(1, n + 1, dtype=float)
    weights = ranks ** (-s)
    return weights / weights.sum()


def synth_trace(
    n_contents: int,
    n_requests: int,
    zipf_s: float,
    seed: int,
    n_features: int = DEFAULT_FEATURE_COUNT,
    n_users: int = 100,
    feature_density: float = 0.2,
    preference_s: float = 1.5,
) -> SyntheticTrace:
    """
    Generates a catalog with random feature vectors and a Zipf request trace over it.

    Contents are ranked by cosine similarity of their features to a latent
    preference (itself Zipf-shaped over a random feature order), ties broken
    by lower id, so feature popularity carries information about what is
    requested. Requests are drawn Zipf(``zipf_s``) over that ranking with
    uniformly drawn users and timestamps ``0..n_requests-1``.
    """
    if zipf_s < 0:
        raise ValueError(f"Zipf exponent must be non-negative, got {zipf_s}")
    if n_contents < 1:
        raise ValueError(f"Need at least one content, got {n_contents}")
    rng = np.random.default_rng(seed)

    bits = (rng.random((n_contents, n_features)) < feature_density).astype(int)
    ids = np.arange(1, n_contents + 1, dtype=np.int64)
    catalog = [
        MovieRecord(movie_id=int(content_id), title=f"Synthetic {content_id}", features=FeatureVector(tuple(row)))
        for content_id, row in zip(ids, bits)
    ]

    preference = np.zeros(n_features)
    preference[rng.permutation(n_features)] = zipf_weights(n_features, preference_s)
    norms = np.sqrt(bits.sum(axis=1)) * np.linalg.norm(preference)
    with np.errstate(divide="ignore", invalid="ignore"):
        affinity = np.where(norms > 0, (bits @ preference) / np.where(norms > 0, norms, 1.0), 0.0)
    ranking = ids[np.lexsort((ids, -affinity))]

    picks = rng.choice(n_contents, size=n_requests, p=zipf_weights(n_contents, zipf_s))
    window = TraceWindow(
        start=0,
        end=n_requests,
        user_ids=rng.integers(1, n_users + 1, size=n_requests, dtype=np.int64),
        movie_ids=ranking[picks].astype(np.int64),
        timestamps=np.arange(n_requests, dtype=np.int64),
    )
    logger.debug(f"Synthesized {n_requests} requests over {n_contents} contents (s={zipf_s}, seed={seed})")
    return SyntheticTrace(
        catalog=catalog,
        window=window,
        ranking=tuple(int(i) for i in ranking),
        preference=preference,
    )
