"""Screen geometry, per-movie dwell aggregation and per-user dwell thresholds."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .csvio import Source, read_records
from .errors import PreconditionError
from .gaze import SCREEN_HEIGHT, SCREEN_WIDTH, Fixation

MODALITIES = ("image", "text")
MOVIES_PER_SCREEN = 8
DWELL_HEADER = ("user_id", "screen_id", "modality", "movie_id", "duration_ms")
STATS_HEADER = ("user_id", "modality", "mu_ms", "sigma_ms", "n_screens")


@dataclass(frozen=True)
class Rect:
    left: float
    top: float
    width: float
    height: float

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def center(self) -> tuple[float, float]:
        return self.left + self.width / 2, self.top + self.height / 2

    def contains(self, x: float, y: float) -> bool:
        # left/top inclusive, right/bottom exclusive
        return self.left <= x < self.right and self.top <= y < self.bottom

    def overlaps(self, other: Rect) -> bool:
        return (
            self.left < other.right
            and other.left < self.right
            and self.top < other.bottom
            and other.top < self.bottom
        )

    def within_screen(self) -> bool:
        return self.left >= 0 and self.top >= 0 and self.right <= SCREEN_WIDTH and self.bottom <= SCREEN_HEIGHT

    def to_dict(self) -> dict:
        return {"left": self.left, "top": self.top, "width": self.width, "height": self.height}


@dataclass(frozen=True)
class ScreenLayout:
    screen_id: str
    modality: str
    aois: tuple[tuple[int, Rect], ...]
    detail_button_rects: Mapping[int, Rect] = field(default_factory=dict)
    select_button_rects: Mapping[int, Rect] = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if len(self.aois) != MOVIES_PER_SCREEN:
            raise ValueError(f"screen {self.screen_id}: expected 8 AOIs, got {len(self.aois)}")
        ids = [m for m, _ in self.aois]
        if len(set(ids)) != len(ids):
            raise ValueError(f"screen {self.screen_id}: duplicate movie ids")
        rects = [r for _, r in self.aois]
        rects += list(self.detail_button_rects.values()) + list(self.select_button_rects.values())
        if not all(r.within_screen() for r in rects):
            raise ValueError(f"screen {self.screen_id}: rect outside the 1920x1200 canvas")
        for a in range(len(self.aois)):
            for b in range(a + 1, len(self.aois)):
                if self.aois[a][1].overlaps(self.aois[b][1]):
                    raise ValueError(f"screen {self.screen_id}: overlapping AOIs")

    @property
    def movie_ids(self) -> tuple[int, ...]:
        return tuple(m for m, _ in self.aois)

    def hit(self, x: float, y: float) -> int | None:
        for movie_id, rect in self.aois:
            if rect.contains(x, y):
                return movie_id
        return None


@dataclass(frozen=True)
class AoiDwell:
    user_id: str
    screen_id: str
    modality: str
    durations: Mapping[int, float]

    def values(self) -> list[float]:
        return list(self.durations.values())


@dataclass(frozen=True)
class UserDurationStats:
    user_id: str
    modality: str
    mu: float
    sigma: float
    n_screens: int


class ThresholdSpec(Enum):
    MU_PLUS_SIGMA = "mu_plus_sigma"
    MU = "mu"
    MU_MINUS_SIGMA = "mu_minus_sigma"

    def tau(self, stats: UserDurationStats) -> float:
        if self is ThresholdSpec.MU_PLUS_SIGMA:
            return stats.mu + stats.sigma
        if self is ThresholdSpec.MU:
            return stats.mu
        return stats.mu - stats.sigma

    @property
    def label(self) -> str:
        return {"mu_plus_sigma": "μ+σ", "mu": "μ", "mu_minus_sigma": "μ−σ"}[self.value]


def aggregate_dwell(
    fixations: Iterable[Fixation], layout: ScreenLayout, user_id: str
) -> AoiDwell:
    """Total fixation duration per movie AOI, hit-tested by fixation centroid."""
    totals = {m: 0.0 for m in layout.movie_ids}
    for f in fixations:
        if f.screen_id != layout.screen_id:
            raise PreconditionError(
                f"fixation from screen {f.screen_id} given for layout {layout.screen_id}"
            )
        movie = layout.hit(f.centroid_x, f.centroid_y)
        if movie is not None:
            totals[movie] += f.duration
    return AoiDwell(user_id, layout.screen_id, layout.modality, totals)


def compute_user_stats(dwells: Iterable[AoiDwell], modality: str) -> UserDurationStats:
    """Mean and sample standard deviation of one user's per-movie dwells.

    The population is every per-movie total (zeros included) over all of the
    user's screens of ``modality``, i.e. eight values per screen.
    """
    selected = [d for d in dwells if d.modality == modality]
    if not selected:
        raise PreconditionError(f"no dwell records of modality {modality!r}")
    users = {d.user_id for d in selected}
    if len(users) != 1:
        raise PreconditionError(f"dwell records from several users: {sorted(users)}")
    values = np.array([v for d in selected for v in d.values()], dtype=float)
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return UserDurationStats(selected[0].user_id, modality, float(values.mean()), sigma, len(selected))


def apply_threshold(dwell: AoiDwell, stats: UserDurationStats, spec: ThresholdSpec) -> set[int]:
    """Movies dwelled on strictly longer than the user's threshold.

    A negative threshold degrades to "any positive dwell"; unfixated movies
    are never returned.
    """
    if stats.modality != dwell.modality or stats.user_id != dwell.user_id:
        raise PreconditionError(
            f"stats for ({stats.user_id}, {stats.modality}) applied to "
            f"dwell of ({dwell.user_id}, {dwell.modality})"
        )
    tau = max(spec.tau(stats), 0.0)
    return {m for m, d in dwell.durations.items() if d > tau}


def all_user_stats(dwells: Iterable[AoiDwell]) -> dict[tuple[str, str], UserDurationStats]:
    grouped: dict[tuple[str, str], list[AoiDwell]] = {}
    for d in dwells:
        grouped.setdefault((d.user_id, d.modality), []).append(d)
    return {key: compute_user_stats(ds, key[1]) for key, ds in sorted(grouped.items())}


# --- file formats -----------------------------------------------------------

def _rect(d: Mapping) -> Rect:
    return Rect(float(d["left"]), float(d["top"]), float(d["width"]), float(d["height"]))


def layouts_to_json(layouts: Sequence[ScreenLayout]) -> dict:
    return {
        "screens": [
            {
                "screen_id": lay.screen_id,
                "modality": lay.modality,
                "aois": [{"movie_id": m, "rect": r.to_dict()} for m, r in lay.aois],
                "detail_button_rects": {str(m): r.to_dict() for m, r in lay.detail_button_rects.items()},
                "select_button_rects": {str(m): r.to_dict() for m, r in lay.select_button_rects.items()},
            }
            for lay in layouts
        ]
    }


def layouts_from_json(doc: Mapping) -> dict[str, ScreenLayout]:
    out = {}
    for s in doc["screens"]:
        lay = ScreenLayout(
            screen_id=str(s["screen_id"]),
            modality=s["modality"],
            aois=tuple((int(a["movie_id"]), _rect(a["rect"])) for a in s["aois"]),
            detail_button_rects={int(k): _rect(v) for k, v in s.get("detail_button_rects", {}).items()},
            select_button_rects={int(k): _rect(v) for k, v in s.get("select_button_rects", {}).items()},
        )
        if lay.screen_id in out:
            raise ValueError(f"duplicate screen id {lay.screen_id}")
        out[lay.screen_id] = lay
    return out


def load_layouts(path) -> dict[str, ScreenLayout]:
    with open(path, encoding="utf-8") as fh:
        return layouts_from_json(json.load(fh))


def save_layouts(layouts: Sequence[ScreenLayout], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layouts_to_json(layouts), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_dwells(dwells: Iterable[AoiDwell], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DWELL_HEADER)
    for d in dwells:
        for m, v in d.durations.items():
            w.writerow([d.user_id, d.screen_id, d.modality, m, repr(float(v))])


def read_dwells(source: Source) -> dict[str, AoiDwell]:
    rows, _ = read_records(
        source, DWELL_HEADER, lambda r: (r[0], r[1], r[2], int(r[3]), float(r[4]))
    )
    grouped: dict[str, list] = {}
    for row in rows:
        grouped.setdefault(row[1], []).append(row)
    return {
        sid: AoiDwell(rs[0][0], sid, rs[0][2], {r[3]: r[4] for r in rs})
        for sid, rs in grouped.items()
    }


def write_stats(stats: Iterable[UserDurationStats], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for s in stats:
        w.writerow([s.user_id, s.modality, repr(s.mu), repr(s.sigma), s.n_screens])


def read_stats(source: Source) -> dict[tuple[str, str], UserDurationStats]:
    rows, _ = read_records(
        source,
        STATS_HEADER,
        lambda r: UserDurationStats(r[0], r[1], float(r[2]), float(r[3]), int(r[4])),
    )
    return {(s.user_id, s.modality): s for s in rows}
