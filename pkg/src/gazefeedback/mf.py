"""Biased matrix factorization on binarized feedback with sampled negatives.

Score model: ``g + b_u + b_i + p_u . q_i``. Each training example
``(u, i, t)`` contributes the loss

    (t - score)^2 + reg * (|p_u|^2 + |q_i|^2 + b_u^2 + b_i^2)

and is applied as one plain SGD step; the global bias is not regularized.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np

from .errors import DivergenceError, PreconditionError
from .feedback import InteractionSet
from .ranking import ndcg_at_k

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
NDCG_CUTOFF = 100


@dataclass
class MfModel:
    global_bias: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    seed: int | None = None

    @property
    def k(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    def copy(self) -> MfModel:
        return MfModel(
            self.global_bias, self.user_bias.copy(), self.item_bias.copy(),
            self.user_factors.copy(), self.item_factors.copy(), self.seed,
        )

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.global_bias)
            and all(np.isfinite(a).all() for a in (self.user_bias, self.item_bias, self.user_factors, self.item_factors))
        )

    def user_scores(self, u: int) -> np.ndarray:
        """Scores of every item for user index ``u``."""
        return self.global_bias + self.user_bias[u] + self.item_bias + self.item_factors @ self.user_factors[u]


@dataclass(frozen=True)
class TrainConfig:
    k: int = 16
    learning_rate: float = 0.02
    reg_lambda: float = 0.01
    epochs: int = 10
    neg_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        # learning_rate 0 is accepted so a no-op run can be expressed
        if self.k < 1 or self.learning_rate < 0 or self.reg_lambda < 0 or self.epochs < 1 or self.neg_ratio < 0:
            raise ValueError(f"invalid training config {self}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**{f: d[f] for f in cls.__dataclass_fields__ if f in d})


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.validation, self.test)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")


def default_grid(epochs: int = 10, neg_ratio: int = 4, seed: int = 0) -> list[TrainConfig]:
    return [
        TrainConfig(k=k, learning_rate=lr, reg_lambda=reg, epochs=epochs, neg_ratio=neg_ratio, seed=seed)
        for k in (8, 16, 32)
        for lr in (0.005, 0.02)
        for reg in (0.01, 0.1)
    ]


def init_model(n_users: int, n_items: int, k: int, seed: int) -> MfModel:
    if min(n_users, n_items, k) < 1:
        raise PreconditionError("model dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 0.1 / np.sqrt(k)
    return MfModel(
        global_bias=0.0,
        user_bias=np.zeros(n_users),
        item_bias=np.zeros(n_items),
        user_factors=rng.normal(0.0, scale, size=(n_users, k)),
        item_factors=rng.normal(0.0, scale, size=(n_items, k)),
        seed=seed,
    )


def predict(model: MfModel, u: int, i: int) -> float:
    if not (0 <= u < model.n_users and 0 <= i < model.n_items):
        raise IndexError(f"index ({u}, {i}) outside model of shape ({model.n_users}, {model.n_items})")
    return float(
        model.global_bias + model.user_bias[u] + model.item_bias[i]
        + model.user_factors[u] @ model.item_factors[i]
    )


def example_loss(model: MfModel, u: int, i: int, target: float, reg: float) -> float:
    p, q = model.user_factors[u], model.item_factors[i]
    err = target - predict(model, u, i)
    return float(err**2 + reg * (p @ p + q @ q + model.user_bias[u] ** 2 + model.item_bias[i] ** 2))


def example_gradients(model: MfModel, u: int, i: int, target: float, reg: float) -> dict[str, np.ndarray | float]:
    """Analytic gradient of :func:`example_loss` w.r.t. the touched parameters."""
    p, q = model.user_factors[u], model.item_factors[i]
    err = target - predict(model, u, i)
    return {
        "global_bias": -2.0 * err,
        "user_bias": -2.0 * err + 2.0 * reg * model.user_bias[u],
        "item_bias": -2.0 * err + 2.0 * reg * model.item_bias[i],
        "user_factors": -2.0 * err * q + 2.0 * reg * p,
        "item_factors": -2.0 * err * p + 2.0 * reg * q,
    }


@numba.njit(cache=True)
def _sgd_pass(gb, bu, bi, P, Q, users, items, targets, lr, reg):
    k = P.shape[1]
    for n in range(users.shape[0]):
        u = users[n]
        i = items[n]
        pred = gb[0] + bu[u] + bi[i]
        for f in range(k):
            pred += P[u, f] * Q[i, f]
        err = targets[n] - pred
        gb[0] -= lr * (-2.0 * err)
        bu[u] -= lr * (-2.0 * err + 2.0 * reg * bu[u])
        bi[i] -= lr * (-2.0 * err + 2.0 * reg * bi[i])
        for f in range(k):
            pf = P[u, f]
            qf = Q[i, f]
            P[u, f] -= lr * (-2.0 * err * qf + 2.0 * reg * pf)
            Q[i, f] -= lr * (-2.0 * err * pf + 2.0 * reg * qf)


def sgd_epoch(model: MfModel, users: np.ndarray, items: np.ndarray, targets: np.ndarray,
              learning_rate: float, reg_lambda: float) -> None:
    """One in-place SGD pass over the examples in the given order."""
    gb = np.array([model.global_bias])
    _sgd_pass(
        gb, model.user_bias, model.item_bias, model.user_factors, model.item_factors,
        np.ascontiguousarray(users, dtype=np.int64), np.ascontiguousarray(items, dtype=np.int64),
        np.ascontiguousarray(targets, dtype=np.float64), float(learning_rate), float(reg_lambda),
    )
    model.global_bias = float(gb[0])


def dataset_loss(model: MfModel, users: np.ndarray, items: np.ndarray, targets: np.ndarray, reg: float) -> float:
    """Summed per-example loss over a fixed example list."""
    p, q = model.user_factors[users], model.item_factors[items]
    pred = model.global_bias + model.user_bias[users] + model.item_bias[items] + np.einsum("ij,ij->i", p, q)
    penalty = (p**2).sum(1) + (q**2).sum(1) + model.user_bias[users] ** 2 + model.item_bias[items] ** 2
    return float(((targets - pred) ** 2 + reg * penalty).sum())


def sample_negatives(users: np.ndarray, n_items: int, positive_keys: np.ndarray, ratio: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw ``ratio`` uniform non-positive items per entry of ``users``.

    ``positive_keys`` holds sorted ``user * n_items + item`` codes. Rows whose
    user has every item positive come back as -1.
    """
    out = rng.integers(0, n_items, size=(len(users), ratio))
    if ratio == 0 or len(users) == 0:
        return out
    counts = np.bincount(positive_keys // n_items, minlength=int(users.max()) + 1)
    full = counts[users] >= n_items
    out[full] = -1
    base = users[:, None] * n_items
    bad = ~full[:, None] & np.isin(base + out, positive_keys)
    while bad.any():
        out[bad] = rng.integers(0, n_items, size=int(bad.sum()))
        bad &= np.isin(base + out, positive_keys)
    return out


def epoch_examples(interactions: InteractionSet, neg_ratio: int, rng: np.random.Generator
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffled positives, each followed by its sampled negatives."""
    n_items = interactions.n_items
    order = rng.permutation(len(interactions))
    users = interactions.user_idx[order]
    pos_items = interactions.item_idx[order]
    keys = interactions.user_idx * n_items + interactions.item_idx  # sorted by construction
    neg = sample_negatives(users, n_items, keys, neg_ratio, rng)
    items = np.concatenate([pos_items[:, None], neg], axis=1)
    targets = np.zeros_like(items, dtype=np.float64)
    targets[:, 0] = 1.0
    ex_users = np.repeat(users, 1 + neg_ratio)
    items, targets = items.ravel(), targets.ravel()
    keep = items >= 0
    return ex_users[keep], items[keep], targets[keep]


def train(model: MfModel, interactions: InteractionSet, config: TrainConfig) -> MfModel:
    """Return a trained copy of ``model``; deterministic for a given ``config.seed``."""
    if interactions.n_users > model.n_users or interactions.n_items > model.n_items:
        raise PreconditionError("interaction indices exceed the model dimensions")
    if model.k != config.k:
        raise PreconditionError(f"model has k={model.k}, config asks for k={config.k}")
    out = model.copy()
    rng = np.random.default_rng(config.seed)
    for epoch in range(1, config.epochs + 1):
        users, items, targets = epoch_examples(interactions, config.neg_ratio, rng)
        sgd_epoch(out, users, items, targets, config.learning_rate, config.reg_lambda)
        if not out.is_finite():
            raise DivergenceError(epoch)
    return out


def fit(interactions: InteractionSet, config: TrainConfig) -> MfModel:
    """Initialize a model sized to the index maps of ``interactions`` and train it."""
    model = init_model(max(interactions.n_users, 1), max(interactions.n_items, 1), config.k, config.seed)
    return train(model, interactions, config)


# --- model selection ----------------------------------------------------------

def split_interactions(interactions: InteractionSet, split: SplitSpec
                       ) -> tuple[InteractionSet, InteractionSet, InteractionSet]:
    """Per-user random partition of each user's positives into train/validation/test.

    Each user with n positives sends ``round(n * validation)`` to validation
    and ``round(n * test)`` to test, always keeping at least one for training.
    All three folds share the parent's index maps.
    """
    rng = np.random.default_rng(split.seed)
    fold = np.zeros(len(interactions), dtype=np.int8)
    starts = np.searchsorted(interactions.user_idx, np.arange(interactions.n_users + 1))
    for u in range(interactions.n_users):
        lo, hi = starts[u], starts[u + 1]
        n = hi - lo
        n_val = int(round(n * split.validation))
        n_test = int(round(n * split.test))
        while n_val + n_test > n - 1 and n_val + n_test > 0:
            if n_test >= n_val:
                n_test -= 1
            else:
                n_val -= 1
        perm = lo + rng.permutation(n)
        fold[perm[:n_val]] = 1
        fold[perm[n_val : n_val + n_test]] = 2
    return interactions.restrict(fold == 0), interactions.restrict(fold == 1), interactions.restrict(fold == 2)


def mean_ndcg(model: MfModel, train_fold: InteractionSet, target_fold: InteractionSet,
              k: int = NDCG_CUTOFF) -> float | None:
    """Mean NDCG@k over users with target positives, ranking all items outside their train fold."""
    t_starts = np.searchsorted(train_fold.user_idx, np.arange(model.n_users + 1))
    v_starts = np.searchsorted(target_fold.user_idx, np.arange(model.n_users + 1))
    scores = []
    for u in range(model.n_users):
        relevant = target_fold.item_idx[v_starts[u] : v_starts[u + 1]]
        if relevant.size == 0:
            continue
        s = model.user_scores(u)
        s[train_fold.item_idx[t_starts[u] : t_starts[u + 1]]] = -np.inf
        top = min(k, s.size)
        cand = np.argpartition(-s, top - 1)[:top]
        ranked = cand[np.lexsort((cand, -s[cand]))]
        scores.append(ndcg_at_k(ranked.tolist(), set(relevant.tolist()), k))
    return float(np.mean(scores)) if scores else None


@dataclass
class GridSearchResult:
    best: TrainConfig
    validation_ndcg: list[tuple[TrainConfig, float]] = field(default_factory=list)
    test_ndcg: float | None = None

    def to_dict(self) -> dict:
        return {
            "best": asdict(self.best),
            "validation_ndcg": [{"config": asdict(c), "ndcg": s} for c, s in self.validation_ndcg],
            "test_ndcg": self.test_ndcg,
        }


def run_grid_search(grid: Sequence[TrainConfig], interactions: InteractionSet,
                    split: SplitSpec = SplitSpec()) -> GridSearchResult:
    if not grid:
        raise PreconditionError("empty hyperparameter grid")
    train_fold, val_fold, test_fold = split_interactions(interactions, split)
    if len(val_fold) == 0:
        raise PreconditionError("no user has validation positives")
    rows = []
    best_i, best_score, best_model = 0, -np.inf, None
    for n, cfg in enumerate(grid):
        model = fit(train_fold, cfg)
        score = mean_ndcg(model, train_fold, val_fold)
        log.info("grid %d/%d %s ndcg@100=%.5f", n + 1, len(grid), cfg, score)
        rows.append((cfg, score))
        if score > best_score:  # strict: first of equal scores wins
            best_i, best_score, best_model = n, score, model
    test = mean_ndcg(best_model, train_fold, test_fold) if len(test_fold) else None
    return GridSearchResult(grid[best_i], rows, test)


def grid_search(grid: Sequence[TrainConfig], interactions: InteractionSet,
                split: SplitSpec = SplitSpec()) -> TrainConfig:
    """Config with the best mean validation NDCG@100; ties go to the earliest."""
    return run_grid_search(grid, interactions, split).best


# --- checkpoints ---------------------------------------------------------------

def save_model(model: MfModel, path: str | Path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "seed": model.seed, "k": model.k,
            "n_users": model.n_users, "n_items": model.n_items}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.array(json.dumps(meta, sort_keys=True)),
            global_bias=np.array(model.global_bias),
            user_bias=model.user_bias, item_bias=model.item_bias,
            user_factors=model.user_factors, item_factors=model.item_factors,
        )


def load_model(path: str | Path) -> MfModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        model = MfModel(
            float(z["global_bias"]), z["user_bias"].copy(), z["item_bias"].copy(),
            z["user_factors"].copy(), z["item_factors"].copy(), meta["seed"],
        )
    if (model.n_users, model.n_items, model.k) != (meta["n_users"], meta["n_items"], meta["k"]):
        raise ValueError("checkpoint arrays disagree with their metadata")
    return model
