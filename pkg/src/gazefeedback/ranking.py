"""Screen ranking, recall and mean-rank metrics and NDCG."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from .csvio import Source, read_records
from .errors import PreconditionError

RECALL_KS = (1, 2, 3, 4)
RANKS_HEADER = ("method", "user_id", "screen_id", "modality", "rank_of_selected")


class Scorer(Protocol):
    def score(self, user_id: str, movie_ids: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class RankingResult:
    user_id: str
    screen_id: str
    modality: str
    rank_of_selected: int


@dataclass(frozen=True)
class MetricsReport:
    """Recall@1..4 (percent) and rank over one method's test screens.

    ``recall_std`` is the sample standard deviation of the per-screen 0/1
    hit indicator (fraction units, as in the published table); ``rank_std``
    is the sample standard deviation of the per-screen rank.
    """

    recall: dict[int, float]
    recall_std: dict[int, float]
    mean_rank: float
    rank_std: float
    n_screens: int


def rank_of(movie_ids: Sequence[int], scores: Sequence[float], selected: int) -> int:
    """1-based position of ``selected`` after sorting by score (desc), then movie id (asc)."""
    if selected not in movie_ids:
        raise PreconditionError(f"selected movie {selected} not among the presented movies")
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.asarray(movie_ids), -scores))
    return int(np.flatnonzero(np.asarray(movie_ids)[order] == selected)[0]) + 1


def rank_selected(
    model: Scorer, user_id: str, screen_id: str, modality: str,
    movie_ids: Sequence[int], selected: int,
) -> RankingResult:
    if selected not in movie_ids:
        raise PreconditionError(f"selected movie {selected} not presented on {screen_id}")
    scores = model.score(user_id, movie_ids)
    return RankingResult(user_id, screen_id, modality, rank_of(movie_ids, scores, selected))


def _sample_std(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def compute_report(results: Iterable[RankingResult]) -> MetricsReport:
    ranks = np.array([r.rank_of_selected for r in results], dtype=float)
    if ranks.size == 0:
        raise PreconditionError("no ranking results to report")
    recall, recall_std = {}, {}
    for k in RECALL_KS:
        hit = (ranks <= k).astype(float)
        recall[k] = 100.0 * float(hit.mean())
        recall_std[k] = _sample_std(hit)
    return MetricsReport(recall, recall_std, float(ranks.mean()), _sample_std(ranks), int(ranks.size))


def random_baseline() -> MetricsReport:
    """Closed-form expectation for a uniformly random ordering of 8 movies."""
    recall = {k: 100.0 * k / 8 for k in RECALL_KS}
    std = {k: math.sqrt((k / 8) * (1 - k / 8)) for k in RECALL_KS}
    return MetricsReport(recall, std, 4.5, math.sqrt((8**2 - 1) / 12), 0)


def ndcg_at_k(ranked_items: Sequence, relevant: set, k: int) -> float:
    """Binary-relevance NDCG: hits at 1-based position r gain 1/log2(r+1)."""
    if not relevant:
        raise PreconditionError("relevant set is empty")
    dcg = sum(
        1.0 / math.log2(r + 1) for r, item in enumerate(ranked_items[:k], start=1) if item in relevant
    )
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
    return dcg / idcg


def write_ranks(rows: Iterable[tuple[str, RankingResult]], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RANKS_HEADER)
    for method, r in rows:
        w.writerow([method, r.user_id, r.screen_id, r.modality, r.rank_of_selected])


def read_ranks(source: Source) -> dict[str, list[RankingResult]]:
    rows, _ = read_records(
        source, RANKS_HEADER, lambda r: (r[0], RankingResult(r[1], r[2], r[3], int(r[4])))
    )
    out: dict[str, list[RankingResult]] = {}
    for method, res in rows:
        out.setdefault(method, []).append(res)
    return out
