"""Seeded synthetic user study: layouts, gaze logs, events, background ratings.

Each user has a genre-preference vector; a movie's affinity for the user mixes
genre match with an idiosyncratic term. On every screen the most-liked movie
is selected, and dwell on each movie grows linearly with affinity. Gaze
traces are piecewise stationary, so fixation detection recovers the planted
visits exactly up to sample quantization.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .aoi import MODALITIES, Rect, ScreenLayout, save_layouts
from .feedback import Rating, StudyEvents, write_events, write_ratings
from .gaze import SCREEN_HEIGHT, SCREEN_WIDTH, GazeSample, write_gaze_log

CENTER = (SCREEN_WIDTH / 2, SCREEN_HEIGHT / 2)
RADIUS_X, RADIUS_Y = 560.0, 420.0
AOI_SIZE = {"image": (150.0, 210.0), "text": (260.0, 80.0)}
BUTTON_W, BUTTON_H, BUTTON_GAP = 90.0, 36.0, 10.0


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 55
    n_movies: int = 300
    n_genres: int = 8
    screens_per_modality: int = 12
    preference_concentration: float = 0.5
    genre_concentration: float = 0.3
    idiosyncratic_weight: float = 0.2
    situational_sigma: float = 0.15
    preferred_list_prob: float = 0.5
    base_ms: float = 300.0
    affinity_gain_ms: float = 1500.0
    noise_sigma_ms: float = 250.0
    min_visit_ms: float = 100.0
    revisit_prob: float = 0.3
    blink_prob: float = 0.1
    jitter_px: float = 2.0
    detail_click_prob: float = 0.4
    seen_prob: float = 0.3
    n_background_users: int = 400
    background_ratings_per_user: int = 40
    sample_rate_hz: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.situational_sigma < 0 or self.noise_sigma_ms < 0:
            raise ValueError("noise scales must be non-negative")
        counts = (self.n_users, self.n_movies, self.n_genres, self.screens_per_modality,
                  self.n_background_users, self.background_ratings_per_user)
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        if self.n_movies < 8:
            raise ValueError("need at least 8 movies to fill a screen")
        for p in ("idiosyncratic_weight", "preferred_list_prob", "revisit_prob", "blink_prob",
                  "detail_click_prob", "seen_prob"):
            if not 0.0 <= getattr(self, p) <= 1.0:
                raise ValueError(f"{p} must lie in [0, 1]")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class Visit:
    screen_id: str
    movie_id: int
    start_ms: float
    planted_ms: float


@dataclass
class GroundTruth:
    affinity: dict[str, dict[int, float]]
    best_movie: dict[str, int]
    planted_dwell: dict[str, dict[int, float]]
    visits: list[Visit]

    def to_dict(self) -> dict:
        return {
            "affinity": {u: {str(m): a for m, a in row.items()} for u, row in self.affinity.items()},
            "best_movie": self.best_movie,
            "planted_dwell": {s: {str(m): d for m, d in row.items()} for s, row in self.planted_dwell.items()},
            "visits": [asdict(v) for v in self.visits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GroundTruth:
        return cls(
            {u: {int(m): a for m, a in row.items()} for u, row in d["affinity"].items()},
            dict(d["best_movie"]),
            {s: {int(m): v for m, v in row.items()} for s, row in d["planted_dwell"].items()},
            [Visit(**v) for v in d["visits"]],
        )


@dataclass
class SyntheticStudy:
    config: SynthConfig
    layouts: list[ScreenLayout]
    gaze: dict[str, list[GazeSample]]
    events: list[StudyEvents]
    ratings: list[Rating]
    truth: GroundTruth
    movie_ids: list[int] = field(default_factory=list)


def circle_layout(screen_id: str, modality: str, movie_ids) -> ScreenLayout:
    """Eight AOIs on an ellipse around the screen center, buttons under each."""
    w, h = AOI_SIZE[modality]
    aois, detail, select = [], {}, {}
    for slot, movie in enumerate(movie_ids):
        theta = -math.pi / 2 + slot * math.pi / 4
        cx = CENTER[0] + RADIUS_X * math.cos(theta)
        cy = CENTER[1] + RADIUS_Y * math.sin(theta)
        rect = Rect(round(cx - w / 2, 1), round(cy - h / 2, 1), w, h)
        aois.append((int(movie), rect))
        top = rect.bottom + BUTTON_GAP
        select[int(movie)] = Rect(round(cx - BUTTON_W - 5, 1), top, BUTTON_W, BUTTON_H)
        detail[int(movie)] = Rect(round(cx + 5, 1), top, BUTTON_W, BUTTON_H)
    return ScreenLayout(screen_id, modality, tuple(aois), detail, select)


class _Tracer:
    """Accumulates one screen's gaze samples at a fixed sample rate."""

    def __init__(self, screen_id: str, cfg: SynthConfig, rng: np.random.Generator):
        self.screen_id = screen_id
        self.cfg = cfg
        self.rng = rng
        self.samples: list[GazeSample] = []
        self.pos = CENTER

    def _t(self) -> float:
        return round(len(self.samples) * 1000.0 / self.cfg.sample_rate_hz, 3)

    def _emit(self, x: float, y: float, valid: bool = True) -> None:
        x = min(max(x, 0.0), SCREEN_WIDTH)
        y = min(max(y, 0.0), SCREEN_HEIGHT)
        self.samples.append(GazeSample(self.screen_id, self._t(), round(x, 2), round(y, 2), valid))

    def saccade(self, target: tuple[float, float], n: int) -> None:
        (x0, y0), (x1, y1) = self.pos, target
        for j in range(1, n + 1):
            f = j / (n + 1)
            self._emit(x0 + f * (x1 - x0), y0 + f * (y1 - y0))

    def burst(self, target: tuple[float, float], n_samples: int, blink: bool = False) -> float:
        """Stationary burst; returns its start timestamp."""
        start = self._t()
        invalid: set[int] = set()
        if blink and n_samples >= 5:
            run = int(self.rng.integers(1, 4))
            first = int(self.rng.integers(1, n_samples - run))
            invalid = set(range(first, first + run))
        j = self.cfg.jitter_px
        jitter = self.rng.uniform(-j, j, size=(n_samples, 2)).tolist()
        for s, (dx, dy) in enumerate(jitter):
            self._emit(target[0] + dx, target[1] + dy, s not in invalid)
        self.pos = target
        return start


def _affinity(prefs: np.ndarray, genres: np.ndarray, idio: np.ndarray, weight: float) -> np.ndarray:
    match = prefs @ genres.T
    match = match / match.max(axis=1, keepdims=True)
    return (1.0 - weight) * match + weight * idio


def generate_study(config: SynthConfig = SynthConfig()) -> SyntheticStudy:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    dt = 1000.0 / cfg.sample_rate_hz
    min_intervals = math.ceil(cfg.min_visit_ms / dt) + 1
    movie_ids = list(range(1, cfg.n_movies + 1))
    movies = np.array(movie_ids)
    genres = rng.dirichlet(np.full(cfg.n_genres, cfg.genre_concentration), size=cfg.n_movies)
    primary_genre = genres.argmax(axis=1)

    users = [f"p{n + 1:02d}" for n in range(cfg.n_users)]
    prefs = rng.dirichlet(np.full(cfg.n_genres, cfg.preference_concentration), size=cfg.n_users)
    idio = rng.random((cfg.n_users, cfg.n_movies))
    aff = _affinity(prefs, genres, idio, cfg.idiosyncratic_weight)

    layouts, events, visits = [], [], []
    gaze: dict[str, list[GazeSample]] = {}
    best_movie, planted = {}, {}
    for un, user in enumerate(users):
        top_genres = np.argsort(-prefs[un])[:2]
        preferred_pool = movies[np.isin(primary_genre, top_genres)]
        gaze[user] = []
        for modality in MODALITIES:
            for k in range(cfg.screens_per_modality):
                screen_id = f"{user}_{modality[0]}{k + 1:02d}"
                if rng.random() < cfg.preferred_list_prob and len(preferred_pool) >= 8:
                    presented = rng.choice(preferred_pool, size=8, replace=False)
                else:
                    presented = rng.choice(movies, size=8, replace=False)
                presented = [int(m) for m in presented]
                layout = circle_layout(screen_id, modality, presented)
                layouts.append(layout)
                a = np.array([aff[un, m - 1] for m in presented])
                # momentary utility on this screen; drives both attention and choice
                a = a + rng.normal(0.0, cfg.situational_sigma, size=8)
                sel_slot = int(np.argmax(a))
                selected = presented[sel_slot]

                target = cfg.base_ms + cfg.affinity_gain_ms * a + rng.normal(0.0, cfg.noise_sigma_ms, size=8)
                intervals = np.rint(np.maximum(target, 0.0) / dt).astype(int)
                intervals[intervals < min_intervals] = 0
                if cfg.noise_sigma_ms == 0:
                    # keep the selected movie's dwell strictly largest after quantization
                    others = np.delete(intervals, sel_slot)
                    if intervals[sel_slot] <= others.max():
                        intervals[sel_slot] = others.max() + 1

                # split some dwells into two visits, each long enough to be a fixation
                pieces: dict[int, list[int]] = {}
                for slot in range(8):
                    n = int(intervals[slot])
                    if n == 0:
                        continue
                    if n >= 2 * min_intervals and rng.random() < cfg.revisit_prob:
                        first = int(rng.integers(min_intervals, n - min_intervals + 1))
                        pieces[slot] = [first, n - first]
                    else:
                        pieces[slot] = [n]
                if len(pieces) < 2:
                    pieces = {s: [sum(p)] for s, p in pieces.items()}
                first_pass = [int(s) for s in rng.permutation(sorted(pieces))]
                second_pass = [int(s) for s in rng.permutation([s for s in sorted(pieces) if len(pieces[s]) == 2])]
                if second_pass and first_pass[-1] == second_pass[0]:
                    if len(second_pass) > 1:
                        second_pass = second_pass[1:] + second_pass[:1]
                    else:
                        first_pass[-1], first_pass[-2] = first_pass[-2], first_pass[-1]
                order = first_pass + second_pass
                taken = {s: 0 for s in pieces}

                tracer = _Tracer(screen_id, cfg, rng)
                tracer.burst(CENTER, 12)
                for slot in order:
                    n = pieces[slot][taken[slot]]
                    taken[slot] += 1
                    center = layout.aois[slot][1].center
                    tracer.saccade(center, int(rng.integers(1, 3)))
                    start = tracer.burst(center, n + 1, blink=rng.random() < cfg.blink_prob)
                    visits.append(Visit(screen_id, presented[slot], start, n * dt))
                # final look at the select button; a direct jump, the button sits close to its AOI
                tracer.burst(layout.select_button_rects[selected].center, 12)
                gaze[user].extend(tracer.samples)

                dwell_ms = {presented[s]: float(intervals[s] * dt) for s in range(8)}
                top3 = sorted(range(8), key=lambda s: (-intervals[s], presented[s]))[:3]
                detailed = {presented[s] for s in top3 if intervals[s] > 0 and rng.random() < cfg.detail_click_prob}
                seen_p = np.clip(cfg.seen_prob * (0.5 + aff[un, np.array(presented) - 1]), 0.0, 1.0)
                seen = {presented[s] for s in range(8) if rng.random() < seen_p[s]}
                events.append(StudyEvents(user, screen_id, modality, tuple(presented), selected,
                                          frozenset(detailed), frozenset(seen)))
                best_movie[screen_id] = selected
                planted[screen_id] = dwell_ms

    ratings = _background_ratings(cfg, rng, genres)
    truth = GroundTruth(
        affinity={u: {m: float(aff[n, m - 1]) for m in movie_ids} for n, u in enumerate(users)},
        best_movie=best_movie,
        planted_dwell=planted,
        visits=visits,
    )
    return SyntheticStudy(cfg, layouts, gaze, events, ratings, truth, movie_ids)


def _background_ratings(cfg: SynthConfig, rng: np.random.Generator, genres: np.ndarray) -> list[Rating]:
    prefs = rng.dirichlet(np.full(cfg.n_genres, cfg.preference_concentration), size=cfg.n_background_users)
    idio = rng.random((cfg.n_background_users, cfg.n_movies))
    aff = _affinity(prefs, genres, idio, cfg.idiosyncratic_weight)
    n_rated = min(cfg.background_ratings_per_user, cfg.n_movies)
    ratings = []
    for u in range(cfg.n_background_users):
        # people mostly watch what they like
        w = np.exp(3.0 * aff[u])
        rated = np.sort(rng.choice(cfg.n_movies, size=n_rated, replace=False, p=w / w.sum()))
        raw = 0.5 + 4.5 * aff[u, rated] + rng.normal(0.0, 0.4, size=n_rated)
        stars = np.clip(np.rint(raw * 2) / 2, 0.5, 5.0)
        for j, m in enumerate(rated):
            ratings.append(Rating(u + 1, int(m) + 1, float(stars[j]), 1_400_000_000 + 86_400 * u + j))
    return ratings


def write_study(study: SyntheticStudy, out_dir: str | Path) -> dict[str, Path]:
    """Write the study in the on-disk formats read by the rest of the pipeline."""
    out = Path(out_dir)
    (out / "gaze").mkdir(parents=True, exist_ok=True)
    paths = {
        "layouts": out / "layouts.json",
        "events": out / "events.csv",
        "ratings": out / "ratings.csv",
        "gaze": out / "gaze",
        "truth": out / "ground_truth.json",
    }
    save_layouts(study.layouts, paths["layouts"])
    with open(paths["events"], "w", newline="", encoding="utf-8") as fh:
        write_events(study.events, fh)
    with open(paths["ratings"], "w", newline="", encoding="utf-8") as fh:
        write_ratings(study.ratings, fh)
    for user, samples in study.gaze.items():
        with open(paths["gaze"] / f"{user}.csv", "w", newline="", encoding="utf-8") as fh:
            write_gaze_log(samples, fh)
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump({"config": asdict(study.config), **study.truth.to_dict()}, fh, sort_keys=True)
        fh.write("\n")
    return paths
