from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Sequence

import numpy as np

from src.caching.feature_cache import ContentLibrary
from src.trace.movielens import MovieRecord, TraceWindow
from src.utility.errors import SizingError
from src.utility.logger import logger


def cp_ids(count: int) -> List[str]:
    return [f"CP{m}" for m in range(1, count + 1)]


@dataclass(frozen=True)
class CpAssignment:
    """
    Pairwise-disjoint per-CP content sets drawn from one seed.

    A request for movie ``x`` is routed to the unique CP owning ``x``; requests
    for movies no CP owns are dropped.
    """

    libraries: Dict[str, FrozenSet[int]]
    seed: int

    def owner_map(self) -> Dict[int, str]:
        return {content_id: cp_id for cp_id, ids in self.libraries.items() for content_id in ids}

    def build_libraries(self, catalog: Sequence[MovieRecord]) -> Dict[str, ContentLibrary]:
        by_id = {movie.movie_id: movie for movie in catalog}
        return {
            cp_id: ContentLibrary(cp_id, tuple((content_id, by_id[content_id].features) for content_id in sorted(ids)))
            for cp_id, ids in self.libraries.items()
        }


def partition_libraries(catalog: Sequence[MovieRecord], cp_count: int, per_cp: int, seed: int) -> CpAssignment:
    """
    Draws ``cp_count`` disjoint uniform random subsets of ``per_cp`` movies each.

    Raises:
        SizingError: If the catalog holds fewer than ``cp_count * per_cp`` movies.
    """
    if cp_count < 1 or per_cp < 0:
        raise SizingError(f"Need at least one CP and a non-negative library size, got M={cp_count}, per_cp={per_cp}")
    ids = np.asarray(sorted(movie.movie_id for movie in catalog), dtype=np.int64)
    needed = cp_count * per_cp
    if len(ids) < needed:
        raise SizingError(f"Catalog of {len(ids)} movies cannot fill {cp_count} libraries of {per_cp}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(ids, size=needed, replace=False)
    libraries = {
        cp_id: frozenset(int(i) for i in chosen[m * per_cp:(m + 1) * per_cp])
        for m, cp_id in enumerate(cp_ids(cp_count))
    }
    logger.info(f"Partitioned {needed} of {len(ids)} movies into {cp_count} libraries (seed {seed})")
    return CpAssignment(libraries=libraries, seed=seed)


def route_requests(trace: TraceWindow, assignment: CpAssignment) -> Dict[str, TraceWindow]:
    """Splits ``trace`` into one time-ordered request stream per CP."""
    streams = {}
    for cp_id, ids in assignment.libraries.items():
        mask = np.isin(trace.movie_ids, np.fromiter(ids, dtype=np.int64, count=len(ids)))
        streams[cp_id] = trace.select(mask)
    routed = sum(len(stream) for stream in streams.values())
    logger.debug(f"Routed {routed} of {len(trace)} requests; {len(trace) - routed} target unassigned movies")
    return streams
