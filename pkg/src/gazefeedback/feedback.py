"""Study events, background ratings and per-method training interaction sets."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .aoi import MODALITIES, AoiDwell, ThresholdSpec, UserDurationStats, apply_threshold
from .csvio import RowError, Source, iter_ids, read_records
from .errors import PreconditionError

EVENTS_HEADER = ("user_id", "screen_id", "modality", "presented", "selected", "detailed", "seen")
RATINGS_HEADER = ("userId", "movieId", "rating", "timestamp")
INTERACTIONS_HEADER = ("user_id", "movie_id")
BACKGROUND_PREFIX = "ml:"
POSITIVE_RATING = 4.0

StatsMap = Mapping[tuple[str, str], UserDurationStats]


@dataclass(frozen=True)
class StudyEvents:
    user_id: str
    screen_id: str
    modality: str
    presented: tuple[int, ...]
    selected: int
    detailed: frozenset[int]
    seen: frozenset[int]

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if len(self.presented) != 8 or len(set(self.presented)) != 8:
            raise ValueError(f"screen {self.screen_id}: expected 8 distinct presented movies")
        p = set(self.presented)
        if self.selected not in p:
            raise ValueError(f"screen {self.screen_id}: selected movie not presented")
        if not self.detailed <= p or not self.seen <= p:
            raise ValueError(f"screen {self.screen_id}: detailed/seen movies not presented")
        if self.user_id.startswith(BACKGROUND_PREFIX):
            raise ValueError(f"study user ids may not start with {BACKGROUND_PREFIX!r}")


@dataclass(frozen=True)
class Rating:
    user_id: int
    movie_id: int
    rating: float
    timestamp: int

    def __post_init__(self):
        if not (0.5 <= self.rating <= 5.0) or (self.rating * 2) % 1:
            raise ValueError(f"rating {self.rating} not a half star in [0.5, 5]")


@dataclass(frozen=True)
class FeedbackMethod:
    kind: str
    threshold: ThresholdSpec | None = None

    def __post_init__(self):
        if self.kind not in ("random", "selected", "selected_detailed", "selected_detailed_aoi"):
            raise ValueError(f"unknown feedback method {self.kind!r}")
        if (self.kind == "selected_detailed_aoi") != (self.threshold is not None):
            raise ValueError("a threshold is required exactly for the AOI method")

    @property
    def name(self) -> str:
        if self.threshold is not None:
            return f"aoi_{self.threshold.value}"
        return self.kind

    @property
    def label(self) -> str:
        return {
            "random": "Baseline (Random)",
            "selected": "Baseline (Selected)",
            "selected_detailed": "Baseline (Selected, Detailed)",
        }.get(self.kind) or f"Selected, Detailed, AOIs {self.threshold.label}"

    @classmethod
    def from_name(cls, name: str) -> FeedbackMethod:
        for m in ALL_METHODS:
            if m.name == name:
                return m
        raise ValueError(
            f"unknown feedback method {name!r}; choose from {[m.name for m in ALL_METHODS]}"
        )


RANDOM = FeedbackMethod("random")
SELECTED = FeedbackMethod("selected")
SELECTED_DETAILED = FeedbackMethod("selected_detailed")
AOI_MU_PLUS_SIGMA = FeedbackMethod("selected_detailed_aoi", ThresholdSpec.MU_PLUS_SIGMA)
AOI_MU = FeedbackMethod("selected_detailed_aoi", ThresholdSpec.MU)
AOI_MU_MINUS_SIGMA = FeedbackMethod("selected_detailed_aoi", ThresholdSpec.MU_MINUS_SIGMA)
ALL_METHODS = (RANDOM, SELECTED, SELECTED_DETAILED, AOI_MU_PLUS_SIGMA, AOI_MU, AOI_MU_MINUS_SIGMA)


class InteractionSet:
    """Binarized (user, movie) positives with contiguous index maps.

    ``user_idx``/``item_idx`` are parallel int arrays sorted by (user, item).
    Sets produced by :meth:`restrict` keep their parent's index maps, so some
    indexed users or items may have no pairs there.
    """

    def __init__(self, user_index: dict[str, int], item_index: dict[int, int],
                 user_idx: np.ndarray, item_idx: np.ndarray):
        self.user_index = user_index
        self.item_index = item_index
        order = np.lexsort((item_idx, user_idx))
        self.user_idx = np.ascontiguousarray(user_idx[order], dtype=np.int64)
        self.item_idx = np.ascontiguousarray(item_idx[order], dtype=np.int64)
        self._users = None
        self._items = None

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> InteractionSet:
        return cls({}, {}, np.empty(0, np.int64), np.empty(0, np.int64)).extend(pairs)

    def extend(self, pairs: Iterable[tuple[str, int]]) -> InteractionSet:
        """Union with ``pairs``; existing indices are kept, new ids appended in sorted order."""
        pairs = set(pairs)
        user_index = dict(self.user_index)
        item_index = dict(self.item_index)
        for u in sorted({u for u, _ in pairs} - user_index.keys()):
            user_index[u] = len(user_index)
        for i in sorted({i for _, i in pairs} - item_index.keys()):
            item_index[i] = len(item_index)
        new_u = np.fromiter((user_index[u] for u, _ in pairs), np.int64, len(pairs))
        new_i = np.fromiter((item_index[i] for _, i in pairs), np.int64, len(pairs))
        users = np.concatenate([self.user_idx, new_u])
        items = np.concatenate([self.item_idx, new_i])
        n = max(len(item_index), 1)
        keys = np.unique(users * n + items)
        return InteractionSet(user_index, item_index, keys // n, keys % n)

    def restrict(self, mask: np.ndarray) -> InteractionSet:
        return InteractionSet(self.user_index, self.item_index, self.user_idx[mask], self.item_idx[mask])

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def __len__(self) -> int:
        return len(self.user_idx)

    @property
    def user_ids(self) -> list[str]:
        if self._users is None:
            self._users = sorted(self.user_index, key=self.user_index.__getitem__)
        return self._users

    @property
    def item_ids(self) -> list[int]:
        if self._items is None:
            self._items = sorted(self.item_index, key=self.item_index.__getitem__)
        return self._items

    @property
    def pairs(self) -> frozenset[tuple[str, int]]:
        users, items = self.user_ids, self.item_ids
        return frozenset((users[u], items[i]) for u, i in zip(self.user_idx.tolist(), self.item_idx.tolist()))

    def pairs_of(self, user_id: str) -> set[int]:
        u = self.user_index.get(user_id)
        if u is None:
            return set()
        items = self.item_ids
        lo, hi = np.searchsorted(self.user_idx, [u, u + 1])
        return {items[i] for i in self.item_idx[lo:hi].tolist()}

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERACTIONS_HEADER)
        users, items = self.user_ids, self.item_ids
        for u, i in zip(self.user_idx.tolist(), self.item_idx.tolist()):
            w.writerow([users[u], items[i]])


# --- parsing ---------------------------------------------------------------

def _rating_row(row: list[str]) -> Rating:
    u, m, r, t = (c.strip() for c in row)
    return Rating(int(u), int(m), float(r), int(t))


def load_ratings(source: Source) -> tuple[list[Rating], list[RowError]]:
    """Read a MovieLens ``ratings.csv`` (``userId,movieId,rating,timestamp``)."""
    return read_records(source, RATINGS_HEADER, _rating_row)


def write_ratings(ratings: Iterable[Rating], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RATINGS_HEADER)
    for r in ratings:
        w.writerow([r.user_id, r.movie_id, f"{r.rating:.1f}", r.timestamp])


def _events_row(row: list[str]) -> StudyEvents:
    user, screen, modality, presented, selected, detailed, seen = (c.strip() for c in row)
    return StudyEvents(
        user_id=user,
        screen_id=screen,
        modality=modality,
        presented=tuple(iter_ids(presented)),
        selected=int(selected),
        detailed=frozenset(iter_ids(detailed)),
        seen=frozenset(iter_ids(seen)),
    )


def load_events(source: Source) -> tuple[list[StudyEvents], list[RowError]]:
    return read_records(source, EVENTS_HEADER, _events_row)


def write_events(events: Iterable[StudyEvents], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EVENTS_HEADER)
    for e in events:
        w.writerow([
            e.user_id, e.screen_id, e.modality,
            ";".join(map(str, e.presented)), e.selected,
            ";".join(map(str, sorted(e.detailed))), ";".join(map(str, sorted(e.seen))),
        ])


# --- background corpus --------------------------------------------------------

def prepare_background(ratings: Iterable[Rating], study_movies: set[int]) -> InteractionSet:
    """Binarize the background corpus around the study catalog.

    Users qualify with at least one rating >= 4.0 on a study movie; for those
    users every rating >= 4.0 (study movie or not) becomes a positive pair.
    User ids are namespaced ``ml:<id>`` to keep them apart from study users.
    """
    if not study_movies:
        raise PreconditionError("study_movies is empty")
    positives: dict[int, set[int]] = {}
    qualified: set[int] = set()
    for r in ratings:
        if r.rating >= POSITIVE_RATING:
            positives.setdefault(r.user_id, set()).add(r.movie_id)
            if r.movie_id in study_movies:
                qualified.add(r.user_id)
    return InteractionSet.from_pairs(
        (f"{BACKGROUND_PREFIX}{u}", m) for u in qualified for m in positives[u]
    )


# --- training sets -----------------------------------------------------------

def screen_positives(
    method: FeedbackMethod,
    event: StudyEvents,
    dwells: Mapping[str, AoiDwell],
    stats: StatsMap,
) -> set[int]:
    """Movies of one screen that ``method`` turns into training positives."""
    if method.kind == "random":
        return set()
    out = {event.selected}
    if method.kind == "selected":
        return out
    out |= event.detailed
    if method.threshold is not None:
        key = (event.user_id, event.modality)
        if key not in stats:
            raise PreconditionError(f"no dwell statistics for user {key[0]} ({key[1]})")
        if event.screen_id not in dwells:
            raise PreconditionError(f"no dwell record for screen {event.screen_id}")
        out |= apply_threshold(dwells[event.screen_id], stats[key], method.threshold)
    return out


def study_pairs(
    method: FeedbackMethod,
    events: Iterable[StudyEvents],
    dwells: Mapping[str, AoiDwell],
    stats: StatsMap,
    held_out: tuple[str, str] | None = None,
) -> set[tuple[str, int]]:
    pairs = set()
    for e in events:
        if held_out is not None and (e.user_id, e.modality) == held_out:
            continue
        pairs.update((e.user_id, m) for m in screen_positives(method, e, dwells, stats))
    return pairs


def assemble_training(
    method: FeedbackMethod,
    events: Sequence[StudyEvents],
    dwells: Mapping[str, AoiDwell],
    stats: StatsMap,
    background: InteractionSet,
    held_out: tuple[str, str] | None,
) -> InteractionSet:
    """Background positives joined with study positives outside ``held_out``.

    ``held_out`` is a ``(user_id, modality)`` pair whose screens contribute
    nothing; ``None`` keeps every study screen.
    """
    if held_out is not None and not any(e.user_id == held_out[0] for e in events):
        raise PreconditionError(f"held-out user {held_out[0]!r} has no study events")
    return background.extend(study_pairs(method, events, dwells, stats, held_out))


def leakage_violations(
    training: InteractionSet,
    method: FeedbackMethod,
    events: Sequence[StudyEvents],
    dwells: Mapping[str, AoiDwell],
    stats: StatsMap,
    held_out: tuple[str, str],
) -> list[tuple[str, int]]:
    """Pairs of the held-out user that only held-out screens could justify."""
    user = held_out[0]
    allowed = set()
    for e in events:
        if e.user_id == user and e.modality != held_out[1]:
            allowed |= screen_positives(method, e, dwells, stats)
    return sorted((user, m) for m in training.pairs_of(user) - allowed)


# --- inclusion analysis ------------------------------------------------------

INCLUSION_CATEGORIES = ("selected", "detailed", "seen", "all")
INCLUSION_FILTERS = ("all_movies", "unfiltered_aois") + tuple(t.value for t in ThresholdSpec)
_FILTER_LABELS = {
    "all_movies": "All movies",
    "unfiltered_aois": "Unfiltered AOIs",
    **{t.value: f"AOIs {t.label}" for t in ThresholdSpec},
}


@dataclass(frozen=True)
class InclusionReport:
    """Mean per-screen inclusion percentage, ``percent[filter][category]``.

    ``n_screens[category]`` counts the screens where the category was
    non-empty and therefore entered the average.
    """

    percent: Mapping[str, Mapping[str, float]]
    n_screens: Mapping[str, int]

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("filter",) + INCLUSION_CATEGORIES)
        for f in INCLUSION_FILTERS:
            w.writerow([f] + [repr(self.percent[f][c]) for c in INCLUSION_CATEGORIES])

    def to_markdown(self) -> str:
        lines = [
            "| Filter | Selected % | Detailed % | Seen % | All movies % |",
            "|---|---|---|---|---|",
        ]
        for f in INCLUSION_FILTERS:
            cells = " | ".join(_fmt_pct(self.percent[f][c]) for c in INCLUSION_CATEGORIES)
            lines.append(f"| {_FILTER_LABELS[f]} | {cells} |")
        counts = ", ".join(f"{c}: {self.n_screens[c]}" for c in INCLUSION_CATEGORIES)
        lines.append("")
        lines.append(f"Screens per category: {counts}")
        return "\n".join(lines) + "\n"


def _fmt_pct(v: float) -> str:
    return "n/a" if v != v else f"{v:.2f}"


def read_inclusion_csv(source: Source) -> dict[str, dict[str, float]]:
    rows, _ = read_records(
        source, ("filter",) + INCLUSION_CATEGORIES, lambda r: (r[0], [float(x) for x in r[1:]])
    )
    return {f: dict(zip(INCLUSION_CATEGORIES, vals)) for f, vals in rows}


def inclusion_analysis(
    events: Iterable[StudyEvents], dwells: Mapping[str, AoiDwell], stats: StatsMap
) -> InclusionReport:
    """Share of each screen's selected/detailed/seen/all movies kept by each dwell filter."""
    sums = {f: {c: 0.0 for c in INCLUSION_CATEGORIES} for f in INCLUSION_FILTERS}
    counts = {c: 0 for c in INCLUSION_CATEGORIES}
    for e in events:
        dwell = dwells.get(e.screen_id)
        st = stats.get((e.user_id, e.modality))
        if dwell is None or st is None:
            raise PreconditionError(f"missing dwell or statistics for screen {e.screen_id}")
        kept = {
            "all_movies": set(e.presented),
            "unfiltered_aois": {m for m, d in dwell.durations.items() if d > 0},
        }
        for t in ThresholdSpec:
            kept[t.value] = apply_threshold(dwell, st, t)
        categories = {"selected": {e.selected}, "detailed": e.detailed, "seen": e.seen, "all": set(e.presented)}
        for c, members in categories.items():
            if not members:
                continue
            counts[c] += 1
            for f in INCLUSION_FILTERS:
                sums[f][c] += 100.0 * len(kept[f] & members) / len(members)
    percent = {
        f: {c: (sums[f][c] / counts[c] if counts[c] else float("nan")) for c in INCLUSION_CATEGORIES}
        for f in INCLUSION_FILTERS
    }
    return InclusionReport(percent, counts)
