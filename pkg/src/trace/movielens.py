from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple
import re

import numpy as np
import pandas as pd

from src.caching.features import FeatureVector
from src.utility.errors import TraceParseError
from src.utility.logger import logger

GENRES = (
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
)
GENRE_INDEX = {name: index for index, name in enumerate(GENRES)}
GENRE_ALIASES = {"Children": "Children's"}
NO_GENRES = "(no genres listed)"
DEFAULT_IGNORED_GENRES = ("IMAX",)

# March 2014 to March 2015, UTC.
DEFAULT_WINDOW = (1393632000, 1425168000)

MOVIE_COLUMNS = ["movieId", "title", "genres"]
RATING_COLUMNS = ["userId", "movieId", "rating", "timestamp"]

_PARSER_LINE = re.compile(r"line (\d+)")


@dataclass(frozen=True)
class MovieRecord:
    movie_id: int
    title: str
    features: FeatureVector


@dataclass(frozen=True)
class RatingEvent:
    user_id: int
    movie_id: int
    timestamp: int


@dataclass(frozen=True, eq=False)
class TraceWindow:
    """
    Time-ordered requests inside ``[start, end)``, stored column-wise.

    Every rating counts as one request; the rating value is not kept.
    """

    start: int
    end: int
    user_ids: np.ndarray
    movie_ids: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return len(self.movie_ids)

    @property
    def events(self) -> List[RatingEvent]:
        return [
            RatingEvent(int(u), int(m), int(t))
            for u, m, t in zip(self.user_ids, self.movie_ids, self.timestamps)
        ]

    @classmethod
    def empty(cls, start: int, end: int) -> "TraceWindow":
        none = np.zeros(0, dtype=np.int64)
        return cls(start, end, none, none.copy(), none.copy())

    @classmethod
    def from_events(cls, events: Iterable[RatingEvent], start: int, end: int) -> "TraceWindow":
        events = list(events)
        return cls(
            start,
            end,
            np.asarray([e.user_id for e in events], dtype=np.int64),
            np.asarray([e.movie_id for e in events], dtype=np.int64),
            np.asarray([e.timestamp for e in events], dtype=np.int64),
        )

    def select(self, mask: np.ndarray) -> "TraceWindow":
        return TraceWindow(self.start, self.end, self.user_ids[mask], self.movie_ids[mask], self.timestamps[mask])

    def split(self, fraction: float) -> Tuple["TraceWindow", "TraceWindow"]:
        """Chronological split: the first ``floor(n * fraction)`` requests, then the rest."""
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"Split fraction must lie in (0, 1), got {fraction}")
        cut = int(np.floor(len(self) * fraction))
        head = np.arange(len(self)) < cut
        return self.select(head), self.select(~head)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"userId": self.user_ids, "movieId": self.movie_ids, "timestamp": self.timestamps})


def _read_table(path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError as e:
        raise TraceParseError(path, 1, "missing header") from e
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise TraceParseError(path, int(match.group(1)) if match else 0, f"malformed line ({e})") from e
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise TraceParseError(path, 1, f"header lacks column(s) {missing}")
    # Fully blank lines stay in the frame so that index + 2 is the file line number.
    frame = frame.fillna("")
    blank = (frame[list(columns)] == "").all(axis=1)
    return frame[~blank]


def genre_vector(tokens: str, ignored: Iterable[str] = DEFAULT_IGNORED_GENRES) -> FeatureVector:
    """
    Builds the indicator vector of a pipe-separated genres field.

    Raises:
        ValueError: Naming the first token outside the vocabulary.
    """
    if tokens == NO_GENRES:
        return FeatureVector.zeros(len(GENRES))
    ignored = set(ignored)
    indices = []
    for token in tokens.split("|"):
        token = GENRE_ALIASES.get(token.strip(), token.strip())
        if token in ignored:
            continue
        if token not in GENRE_INDEX:
            raise ValueError(f"unknown genre '{token}'")
        indices.append(GENRE_INDEX[token])
    return FeatureVector.from_indices(indices, len(GENRES))


def parse_movies(path, ignored_genres: Iterable[str] = DEFAULT_IGNORED_GENRES) -> List[MovieRecord]:
    """
    Parses a ``movieId,title,genres`` file into movie records.

    Raises:
        TraceParseError: Malformed line, empty genres field or unknown genre token,
            with the offending line number.
    """
    frame = _read_table(path, MOVIE_COLUMNS)
    ignored = tuple(ignored_genres)
    records = []
    for index, row in zip(frame.index, frame[MOVIE_COLUMNS].itertuples(index=False)):
        line = int(index) + 2
        movie_id, title, genres = row
        if not movie_id.strip().isdigit():
            raise TraceParseError(path, line, f"movieId '{movie_id}' is not an integer")
        if not genres.strip():
            raise TraceParseError(path, line, "empty genres field")
        try:
            features = genre_vector(genres.strip(), ignored)
        except ValueError as e:
            raise TraceParseError(path, line, str(e)) from e
        records.append(MovieRecord(movie_id=int(movie_id), title=title, features=features))
    logger.info(f"Parsed {len(records)} movies from {path}")
    return records


def parse_ratings(path, window: Optional[Tuple[int, int]] = None) -> TraceWindow:
    """
    Parses a ``userId,movieId,rating,timestamp`` file into the requests inside ``window``.

    Args:
        path: Ratings file.
        window: ``(start, end)`` epoch seconds, end exclusive. ``None`` keeps everything.

    Returns:
        TraceWindow: Events sorted by timestamp, ties kept in file order.

    Raises:
        TraceParseError: On the first line whose fields are not numeric.
    """
    frame = _read_table(path, RATING_COLUMNS)
    if frame.empty:
        start, end = window if window is not None else (0, 0)
        logger.info(f"No ratings in {path}")
        return TraceWindow.empty(int(start), int(end))
    numeric = frame[RATING_COLUMNS].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    integral = ["userId", "movieId", "timestamp"]
    bad |= (numeric[integral].fillna(0) % 1 != 0).any(axis=1)
    if bad.any():
        line = int(frame.index[bad.to_numpy().argmax()]) + 2
        raise TraceParseError(path, line, "non-numeric or fractional field")

    timestamps = numeric["timestamp"].to_numpy(dtype=np.int64)
    start, end = window if window is not None else (
        int(timestamps.min()) if len(timestamps) else 0,
        int(timestamps.max()) + 1 if len(timestamps) else 0,
    )
    keep = (timestamps >= start) & (timestamps < end)
    order = np.argsort(timestamps[keep], kind="stable")
    trace = TraceWindow(
        start=int(start),
        end=int(end),
        user_ids=numeric["userId"].to_numpy(dtype=np.int64)[keep][order],
        movie_ids=numeric["movieId"].to_numpy(dtype=np.int64)[keep][order],
        timestamps=timestamps[keep][order],
    )
    logger.info(f"Parsed {len(trace)} in-window requests (of {len(frame)}) from {path}")
    return trace


def dump_trace(trace: TraceWindow, path) -> Path:
    """Canonical line-delimited dump (``userId,movieId,timestamp``) for fixture pinning."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_frame().to_csv(path, index=False, lineterminator="\n")
    return path
