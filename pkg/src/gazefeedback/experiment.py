"""Hold-out-by-modality experiment: one model per (method, user, modality)."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Mapping, Sequence

import numpy as np

from .aoi import MODALITIES, AoiDwell, UserDurationStats
from .errors import DivergenceError
from .feedback import (
    ALL_METHODS, FeedbackMethod, InteractionSet, StudyEvents, assemble_training, leakage_violations,
)
from .mf import MfModel, TrainConfig, fit
from .ranking import RECALL_KS, MetricsReport, RankingResult, compute_report, rank_selected

log = logging.getLogger(__name__)

METRICS_HEADER = (
    ("method", "label")
    + tuple(f"recall@{k}" for k in RECALL_KS)
    + tuple(f"recall@{k}_std" for k in RECALL_KS)
    + ("mean_rank", "rank_std", "n_screens", "n_models", "excluded_screens", "leakage_violations")
)


@dataclass
class StudyData:
    events: list[StudyEvents]
    dwells: Mapping[str, AoiDwell]
    stats: Mapping[tuple[str, str], UserDurationStats]

    @property
    def users(self) -> list[str]:
        return sorted({e.user_id for e in self.events})

    @property
    def movies(self) -> set[int]:
        return {m for e in self.events for m in e.presented}


class TrainedScorer:
    """Scores movies for study users with a trained model and its index maps.

    Movies unknown to the model get ``g + b_u``; unknown users get ``g + b_i``.
    """

    def __init__(self, model: MfModel, interactions: InteractionSet):
        self.model = model
        self.interactions = interactions

    def score(self, user_id: str, movie_ids: Sequence[int]) -> np.ndarray:
        m = self.model
        u = self.interactions.user_index.get(user_id)
        idx = np.array([self.interactions.item_index.get(i, -1) for i in movie_ids])
        known = idx >= 0
        scores = np.full(len(movie_ids), m.global_bias)
        scores[known] += m.item_bias[idx[known]]
        if u is not None:
            scores += m.user_bias[u]
            scores[known] += m.item_factors[idx[known]] @ m.user_factors[u]
        return scores


class RandomScorer:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def score(self, user_id: str, movie_ids: Sequence[int]) -> np.ndarray:
        return self.rng.random(len(movie_ids))


def task_seed(master_seed: int, method: FeedbackMethod, user_no: int, modality: str) -> int:
    key = (ALL_METHODS.index(method), user_no, MODALITIES.index(modality))
    return int(np.random.SeedSequence(master_seed, spawn_key=key).generate_state(1)[0])


@dataclass
class TaskOutcome:
    method: str
    results: list[RankingResult]
    diverged: bool = False
    excluded: int = 0
    leaks: int = 0


@dataclass
class ExperimentResult:
    reports: dict[str, MetricsReport | None]
    ranks: dict[str, list[RankingResult]]
    models: dict[str, int]
    excluded_screens: dict[str, int]
    leakage: dict[str, int]
    labels: dict[str, str] = field(default_factory=dict)

    def rank_rows(self):
        for name, results in self.ranks.items():
            for r in results:
                yield name, r

    def write_metrics_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for name, rep in self.reports.items():
            if rep is None:
                continue
            w.writerow(
                [name, self.labels.get(name, name)]
                + [repr(rep.recall[k]) for k in RECALL_KS]
                + [repr(rep.recall_std[k]) for k in RECALL_KS]
                + [repr(rep.mean_rank), repr(rep.rank_std), rep.n_screens,
                   self.models[name], self.excluded_screens[name], self.leakage[name]]
            )


_CTX: dict = {}


def _init_worker(ctx: dict) -> None:
    _CTX.clear()
    _CTX.update(ctx)


def _run_task(task: tuple[FeedbackMethod, str, int, str]) -> TaskOutcome:
    method, user, user_no, modality = task
    study: StudyData = _CTX["study"]
    background: InteractionSet = _CTX["background"]
    config: TrainConfig = _CTX["config"]
    seed = task_seed(_CTX["master_seed"], method, user_no, modality)
    held_out = (user, modality)
    test = [e for e in study.events if (e.user_id, e.modality) == held_out]
    if method.kind == "random":
        scorer = RandomScorer(seed)
        leaks = 0
    else:
        training = assemble_training(method, study.events, study.dwells, study.stats, background, held_out)
        leaks = len(leakage_violations(training, method, study.events, study.dwells, study.stats, held_out))
        try:
            model = fit(training, replace(config, seed=seed))
        except DivergenceError as exc:
            log.warning("%s %s/%s diverged at epoch %d", method.name, user, modality, exc.epoch)
            return TaskOutcome(method.name, [], True, len(test), leaks)
        scorer = TrainedScorer(model, training)
    results = [
        rank_selected(scorer, e.user_id, e.screen_id, e.modality, e.presented, e.selected) for e in test
    ]
    return TaskOutcome(method.name, results, leaks=leaks)


def run_experiment(
    methods: Sequence[FeedbackMethod],
    study: StudyData,
    background: InteractionSet,
    config: TrainConfig,
    master_seed: int = 0,
    jobs: int = 1,
) -> ExperimentResult:
    """Train and evaluate one model per (method, study user, held-out modality).

    Each task trains on the background corpus plus every study screen except
    the held-out user's screens of one modality, then ranks the selected
    movie on each of those held-out screens. The random method replaces the
    model with seeded uniform scores. Per-task seeds depend only on
    ``master_seed`` and the task's identity, so ``jobs`` never changes results.
    """
    users = study.users
    present = {(e.user_id, e.modality) for e in study.events}
    tasks = [
        (m, u, n, mod)
        for m in methods
        for n, u in enumerate(users)
        for mod in MODALITIES
        if (u, mod) in present
    ]
    ctx = {"study": study, "background": background, "config": config, "master_seed": master_seed}
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        _init_worker(ctx)
        outcomes = [_run_task(t) for t in tasks]
    names = [m.name for m in methods]
    ranks = {n: [] for n in names}
    models = {n: 0 for n in names}
    excluded = {n: 0 for n in names}
    leakage = {n: 0 for n in names}
    for o in outcomes:
        models[o.method] += 1
        ranks[o.method].extend(o.results)
        excluded[o.method] += o.excluded
        leakage[o.method] += o.leaks
    reports = {n: (compute_report(ranks[n]) if ranks[n] else None) for n in names}
    return ExperimentResult(reports, ranks, models, excluded, leakage, {m.name: m.label for m in methods})


def metrics_markdown(rows: Sequence[dict]) -> str:
    """Methods-by-metrics markdown table from rows of the metrics CSV."""
    head = "| Method | " + " | ".join(f"Mean Recall@{k} (Std)" for k in RECALL_KS) + " | Mean Rank (Std) | Screens | Models |"
    lines = [head, "|" + "---|" * (len(RECALL_KS) + 4)]
    for r in rows:
        cells = [f"{float(r[f'recall@{k}']):.2f} ({float(r[f'recall@{k}_std']):.2f})" for k in RECALL_KS]
        cells.append(f"{float(r['mean_rank']):.3f} ({float(r['rank_std']):.2f})")
        lines.append(f"| {r['label']} | " + " | ".join(cells) + f" | {r['n_screens']} | {r['n_models']} |")
    return "\n".join(lines) + "\n"
