import math

import numpy as np
import pytest

from src.authentication.crypto import derive_vid
from src.blockchain.ledger import ContentMetadata, ContractRecord
from src.caching.feature_cache import (
    ContentLibrary,
    Lookup,
    cache_lookup,
    content_correlation,
    dump_correlations,
    extract_feature_popularity,
    random_prefetch,
    rank_and_prefetch,
    ranked_feature_report,
    ranked_ids,
    score_library,
)
from src.caching.features import DEFAULT_FEATURE_COUNT, FeatureVector
from src.utility.errors import DimensionError, OwnershipError


def meta(content_id, bits, cp_id="CP1"):
    return ContentMetadata(content_id, FeatureVector(tuple(bits)), cp_id)


def random_library(rng, size, length, cp_id="CP1"):
    rows = rng.integers(0, 2, size=(size, length))
    return ContentLibrary(cp_id, tuple((100 + i, FeatureVector(tuple(row))) for i, row in enumerate(rows)))


def test_popularity_is_normalized_count():
    history = [meta(1, [1, 1, 0]), meta(2, [1, 1, 0]), meta(3, [0, 0, 1])]
    popularity = extract_feature_popularity(history)
    np.testing.assert_allclose(popularity.q, [0.4, 0.4, 0.2])
    assert popularity.q_sorted_view == (0, 1, 2)
    assert popularity.requests == 3
    assert not popularity.cold


def test_popularity_ties_keep_feature_order():
    history = [meta(i, FeatureVector.from_indices([0, 3], 6).bits) for i in range(4)]
    popularity = extract_feature_popularity(history)
    assert popularity.q[0] == popularity.q[3] == 0.5
    assert popularity.q_sorted_view[:2] == (0, 3)


def test_empty_history_is_cold():
    popularity = extract_feature_popularity([])
    assert popularity.cold
    assert len(popularity) == DEFAULT_FEATURE_COUNT
    assert not popularity.q.any()


def test_featureless_history_is_cold():
    popularity = extract_feature_popularity([meta(1, [0, 0, 0]), meta(2, [0, 0, 0])])
    assert popularity.cold
    assert popularity.requests == 2
    assert not popularity.q.any()
    assert popularity.q_sorted_view == (0, 1, 2)


def test_mixed_lengths_rejected():
    with pytest.raises(DimensionError):
        extract_feature_popularity([meta(1, [1, 0]), meta(2, [1, 0, 0])])
    with pytest.raises(DimensionError):
        extract_feature_popularity([meta(1, [1, 0])], length=3)


def test_plan_records_are_skipped():
    vid = derive_vid(b"user")
    records = [
        ContractRecord("c1", vid, "CP1", meta(1, [0, 1, 1]), None, 0),
        ContractRecord("c2", vid, "CP1", None, "flat-rate", 10),
    ]
    popularity = extract_feature_popularity(records)
    assert popularity.requests == 1
    np.testing.assert_allclose(popularity.q, [0.0, 0.5, 0.5])


def test_correlation_values():
    f = FeatureVector((1, 1, 1, 0))
    assert content_correlation(f, [1, 1, 1, 1]) == pytest.approx(3 / math.sqrt(12))
    assert content_correlation(FeatureVector((1, 0, 1)), [0.5, 0.0, 0.5]) == 1.0
    assert content_correlation(FeatureVector((1, 0, 0)), [0.0, 0.3, 0.7]) == 0.0
    assert content_correlation(FeatureVector.zeros(3), [0.2, 0.3, 0.5]) == 0.0
    assert content_correlation(FeatureVector((1, 0, 1)), [0.0, 0.0, 0.0]) == 0.0


def test_correlation_length_mismatch():
    with pytest.raises(DimensionError):
        content_correlation(FeatureVector((1, 0)), [0.5, 0.25, 0.25])


def test_correlation_is_scale_invariant():
    f = FeatureVector((1, 0, 1, 1))
    q = np.array([0.1, 0.2, 0.3, 0.4])
    assert content_correlation(f, q) == pytest.approx(content_correlation(f, 7.5 * q))


def test_correlation_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        bits = tuple(int(b) for b in rng.integers(0, 2, size=8))
        q = rng.random(8)
        expected = 0.0
        if any(bits):
            dot = sum(b * w for b, w in zip(bits, q))
            expected = dot / (math.sqrt(sum(bits)) * math.sqrt(sum(w * w for w in q)))
        value = content_correlation(FeatureVector(bits), q)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_prefetch_caches_a_top_z_set():
    rng = np.random.default_rng(5)
    for _ in range(100):
        size = int(rng.integers(1, 40))
        library = random_library(rng, size, 6)
        q = rng.integers(0, 5, size=6).astype(float)
        scores = {
            content_id: content_correlation(features, q) for content_id, features in library.contents
        }
        for capacity in (0, 1, size // 2, size, size + 3):
            cache = rank_and_prefetch(library, q, capacity)
            assert len(cache.resident) == min(capacity, size)
            assert cache.resident <= library.id_set()
            outside = library.id_set() - cache.resident
            if cache.resident and outside:
                assert min(scores[i] for i in cache.resident) >= max(scores[i] for i in outside) - 1e-12


def test_ranking_breaks_ties_by_content_id():
    library = ContentLibrary("CP1", ((9, FeatureVector((1, 0))), (3, FeatureVector((1, 0))), (5, FeatureVector((0, 1)))))
    assert ranked_ids(library, [1.0, 0.0]) == [3, 9, 5]
    cold = extract_feature_popularity([], length=2)
    assert ranked_ids(library, cold) == [3, 5, 9]


def test_caches_nest_as_capacity_grows():
    rng = np.random.default_rng(8)
    library = random_library(rng, 30, 5)
    q = rng.random(5)
    caches = [rank_and_prefetch(library, q, z).resident for z in range(0, 32)]
    assert all(a <= b for a, b in zip(caches, caches[1:]))
    randoms = [random_prefetch(library, z, np.random.default_rng(3)).resident for z in range(0, 32)]
    assert all(a <= b for a, b in zip(randoms, randoms[1:]))
    assert randoms[-1] == library.id_set()


def test_negative_capacity_rejected():
    library = ContentLibrary("CP1", ((1, FeatureVector((1,))),))
    with pytest.raises(ValueError):
        rank_and_prefetch(library, [1.0], -1)
    with pytest.raises(ValueError):
        random_prefetch(library, -1, np.random.default_rng(0))


def test_score_library_keys_every_content():
    library = ContentLibrary("CP2", ((4, FeatureVector((1, 1))), (6, FeatureVector((0, 0)))))
    correlation = score_library(library, [1.0, 1.0])
    assert correlation.cp_id == "CP2"
    assert correlation.p == {4: pytest.approx(1.0), 6: 0.0}


def test_cache_lookup():
    library = ContentLibrary("CP1", ((1, FeatureVector((1, 0))), (2, FeatureVector((0, 1)))))
    cache = rank_and_prefetch(library, [1.0, 0.0], 1)
    assert cache_lookup(cache, 1) == Lookup.HIT
    assert cache_lookup(cache, 2) == Lookup.MISS
    with pytest.raises(OwnershipError):
        cache_lookup(cache, 3)


def test_library_validation():
    with pytest.raises(ValueError):
        ContentLibrary("CP1", ((1, FeatureVector((1, 0))), (1, FeatureVector((0, 1)))))
    with pytest.raises(DimensionError):
        ContentLibrary("CP1", ((1, FeatureVector((1, 0))), (2, FeatureVector((0, 1, 1)))))
    with pytest.raises(DimensionError):
        rank_and_prefetch(ContentLibrary("CP1", ((1, FeatureVector((1, 0))),)), [1.0, 0.0, 0.0], 1)


def test_ranked_feature_report():
    popularity = extract_feature_popularity([meta(1, [0, 1, 1]), meta(2, [0, 1, 0])])
    frame = ranked_feature_report(popularity, names=["Action", "Comedy", "Drama"])
    assert list(frame.columns) == ["rank", "feature", "share"]
    assert list(frame["feature"]) == ["Comedy", "Drama", "Action"]
    assert list(frame["rank"]) == [1, 2, 3]
    assert frame["share"].sum() == pytest.approx(1.0)


def test_dump_correlations(tmp_path):
    library = ContentLibrary("CP1", ((2, FeatureVector((0, 1))), (1, FeatureVector((1, 0)))))
    correlation = score_library(library, [1.0, 0.0])
    cache = rank_and_prefetch(library, [1.0, 0.0], 1)
    path = dump_correlations(correlation, cache, tmp_path / "out" / "correlations_CP1.csv")
    assert path.read_text(encoding="utf-8").splitlines() == [
        "content_id,correlation,cached",
        "1,1.000000000000,1",
        "2,0.000000000000,0",
    ]
