import numpy as np
import pytest

from gazefeedback.errors import DivergenceError, PreconditionError
from gazefeedback.feedback import InteractionSet
from gazefeedback.mf import (
    MfModel, SplitSpec, TrainConfig, dataset_loss, example_gradients, example_loss, fit, grid_search,
    init_model, load_model, predict, run_grid_search, save_model, sgd_epoch, split_interactions, train,
)

PARAMS = ("user_bias", "item_bias", "user_factors", "item_factors")


def models_equal(a: MfModel, b: MfModel) -> bool:
    return a.global_bias == b.global_bias and all(np.array_equal(getattr(a, p), getattr(b, p)) for p in PARAMS)


def random_model(rng, n_users=4, n_items=5, k=3):
    return MfModel(
        float(rng.normal()), rng.normal(size=n_users), rng.normal(size=n_items),
        rng.normal(size=(n_users, k)), rng.normal(size=(n_items, k)),
    )


def block_interactions(n_blocks=4, users_per_block=12, items_per_block=10):
    pairs = [
        (f"b{b}u{u}", 1000 * b + i)
        for b in range(n_blocks)
        for u in range(users_per_block)
        for i in range(items_per_block)
    ]
    return InteractionSet.from_pairs(pairs)


# --- init / predict ---------------------------------------------------------------

def test_init_shapes_and_zero_biases():
    m = init_model(2, 3, 4, seed=7)
    assert m.user_factors.shape == (2, 4) and m.item_factors.shape == (3, 4)
    assert m.global_bias == 0 and not m.user_bias.any() and not m.item_bias.any()


def test_init_deterministic():
    assert models_equal(init_model(5, 6, 3, 7), init_model(5, 6, 3, 7))
    assert not models_equal(init_model(5, 6, 3, 7), init_model(5, 6, 3, 8))


def test_init_variance():
    k = 8
    m = init_model(625, 625, k, seed=3)  # 10^4 entries in total
    values = np.concatenate([m.user_factors.ravel(), m.item_factors.ravel()])
    assert values.var() == pytest.approx(0.01 / k, rel=0.10)


def test_predict_identity():
    m = init_model(2, 2, 2, 0)
    m.user_factors[:] = 0
    m.item_factors[:] = 0
    m.global_bias = 0.5
    assert predict(m, 1, 1) == 0.5


def test_predict_hand_arithmetic():
    m = MfModel(0.5, np.array([0.1]), np.array([0.2]), np.array([[1.0, 2.0]]), np.array([[0.5, 0.25]]))
    assert predict(m, 0, 0) == pytest.approx(1.8)


def test_predict_swap_users(rng):
    m = random_model(rng)
    before = [predict(m, 0, i) for i in range(5)], [predict(m, 1, i) for i in range(5)]
    m.user_factors[[0, 1]] = m.user_factors[[1, 0]]
    m.user_bias[[0, 1]] = m.user_bias[[1, 0]]
    assert [predict(m, 1, i) for i in range(5)] == before[0]
    assert [predict(m, 0, i) for i in range(5)] == before[1]


def test_predict_out_of_range(rng):
    with pytest.raises(IndexError):
        predict(random_model(rng), 4, 0)


def test_shift_invariance():
    m = MfModel(0.25, np.array([0.5, -1.0]), np.array([0.75, 1.5, -0.5]),
                np.array([[1.0, 0.5], [0.0, 2.0]]), np.array([[0.5, 0.5], [1.0, -1.0], [2.0, 0.0]]))
    before = [[predict(m, u, i) for i in range(3)] for u in range(2)]
    m.global_bias += 0.5
    m.item_bias -= 0.5
    assert [[predict(m, u, i) for i in range(3)] for u in range(2)] == before


# --- gradients ---------------------------------------------------------------------

def finite_difference(model, u, i, t, reg, h=1e-5):
    out = {}
    m = model.copy()
    def loss():
        return example_loss(m, u, i, t, reg)
    base = m.global_bias
    m.global_bias = base + h
    up = loss()
    m.global_bias = base - h
    out["global_bias"] = (up - loss()) / (2 * h)
    m.global_bias = base
    for name, idx in (("user_bias", u), ("item_bias", i)):
        arr = getattr(m, name)
        v = arr[idx]
        arr[idx] = v + h
        up = loss()
        arr[idx] = v - h
        out[name] = (up - loss()) / (2 * h)
        arr[idx] = v
    for name, idx in (("user_factors", u), ("item_factors", i)):
        arr = getattr(m, name)
        g = np.zeros(arr.shape[1])
        for f in range(arr.shape[1]):
            v = arr[idx, f]
            arr[idx, f] = v + h
            up = loss()
            arr[idx, f] = v - h
            g[f] = (up - loss()) / (2 * h)
            arr[idx, f] = v
        out[name] = g
    return out


def test_gradients_match_finite_differences(rng):
    worst = 0.0
    for _ in range(120):
        m = random_model(rng, k=int(rng.integers(1, 6)))
        u, i = int(rng.integers(4)), int(rng.integers(5))
        t, reg = float(rng.integers(2)), float(rng.uniform(0, 0.5))
        analytic = example_gradients(m, u, i, t, reg)
        numeric = finite_difference(m, u, i, t, reg)
        a = np.concatenate([np.atleast_1d(analytic[k]) for k in sorted(analytic)])
        n = np.concatenate([np.atleast_1d(numeric[k]) for k in sorted(numeric)])
        worst = max(worst, np.linalg.norm(a - n) / max(np.linalg.norm(a), 1e-12))
    assert worst < 1e-4


def test_kernel_step_follows_gradient(rng):
    m = random_model(rng)
    u, i, t, reg, lr = 2, 3, 1.0, 0.05, 1e-3
    grads = example_gradients(m, u, i, t, reg)
    after = m.copy()
    sgd_epoch(after, np.array([u]), np.array([i]), np.array([t]), lr, reg)
    assert (m.global_bias - after.global_bias) / lr == pytest.approx(grads["global_bias"], rel=1e-6)
    np.testing.assert_allclose((m.user_factors[u] - after.user_factors[u]) / lr, grads["user_factors"], rtol=1e-6)
    np.testing.assert_allclose((m.item_factors[i] - after.item_factors[i]) / lr, grads["item_factors"], rtol=1e-6)
    untouched = np.delete(np.arange(4), u)
    np.testing.assert_array_equal(after.user_factors[untouched], m.user_factors[untouched])


def test_single_step_reduces_error(rng):
    for _ in range(20):
        m = random_model(rng)
        u, i, t = 1, 2, float(rng.integers(2))
        before = example_loss(m, u, i, t, 0.0)
        sgd_epoch(m, np.array([u]), np.array([i]), np.array([t]), 1e-3, 0.0)
        assert example_loss(m, u, i, t, 0.0) < before


def test_loss_non_increasing_with_frozen_negatives(rng):
    interactions = block_interactions(3, 6, 5)
    m = init_model(interactions.n_users, interactions.n_items, 4, seed=1)
    from gazefeedback.mf import epoch_examples
    users, items, targets = epoch_examples(interactions, 3, rng)
    losses = [dataset_loss(m, users, items, targets, 0.01)]
    for _ in range(40):
        sgd_epoch(m, users, items, targets, 0.002, 0.01)
        losses.append(dataset_loss(m, users, items, targets, 0.01))
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


# --- training ----------------------------------------------------------------------

def test_train_learns_ordering():
    # item 1 is indexed but never positive
    s = InteractionSet({"u": 0}, {0: 0, 1: 1}, np.array([0]), np.array([0]))
    m = train(init_model(1, 2, 1, 0), s, TrainConfig(k=1, learning_rate=0.05, epochs=200, neg_ratio=1))
    assert predict(m, 0, 0) > predict(m, 0, 1)


def test_zero_learning_rate_is_noop():
    s = block_interactions(2, 3, 3)
    m0 = init_model(s.n_users, s.n_items, 2, 0)
    m1 = train(m0, s, TrainConfig(k=2, learning_rate=0.0, epochs=3))
    assert models_equal(m0, m1)


def test_training_deterministic():
    s = block_interactions(3, 5, 4)
    cfg = TrainConfig(k=3, epochs=5, seed=11)
    assert models_equal(fit(s, cfg), fit(s, cfg))
    assert not models_equal(fit(s, cfg), fit(s, TrainConfig(k=3, epochs=5, seed=12)))


def test_negatives_avoid_positives(rng):
    from gazefeedback.mf import epoch_examples
    s = block_interactions(3, 4, 5)
    users, items, targets = epoch_examples(s, 4, rng)
    positives = set(zip(s.user_idx.tolist(), s.item_idx.tolist()))
    assert len(targets) == 5 * len(s)
    for u, i, t in zip(users.tolist(), items.tolist(), targets.tolist()):
        assert ((u, i) in positives) == (t == 1.0)


def test_divergence_reports_epoch():
    s = block_interactions(2, 3, 3)
    with pytest.raises(DivergenceError) as exc:
        fit(s, TrainConfig(k=2, learning_rate=50.0, epochs=50))
    assert exc.value.epoch >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(k=0)
    with pytest.raises(ValueError):
        SplitSpec(0.8, 0.1, 0.2)
    with pytest.raises(PreconditionError):
        train(init_model(1, 1, 2, 0), block_interactions(1, 1, 1), TrainConfig(k=3))


# --- splits and grid search ---------------------------------------------------------------

def test_split_partitions_each_user():
    s = block_interactions(2, 5, 10)
    tr, va, te = split_interactions(s, SplitSpec(seed=3))
    assert len(tr) + len(va) + len(te) == len(s)
    assert tr.pairs | va.pairs | te.pairs == s.pairs
    for u in s.user_index:
        assert (len(tr.pairs_of(u)), len(va.pairs_of(u)), len(te.pairs_of(u))) == (8, 1, 1)


def test_grid_of_one():
    s = block_interactions(2, 6, 10)
    cfg = TrainConfig(k=2, epochs=3)
    assert grid_search([cfg], s, SplitSpec()) == cfg


def test_grid_tie_goes_to_first():
    s = block_interactions(2, 6, 10)
    a = TrainConfig(k=2, epochs=3, seed=5)
    res = run_grid_search([a, TrainConfig(k=4, epochs=3), a], s, SplitSpec())
    assert res.validation_ndcg[0][1] == res.validation_ndcg[2][1]
    best_score = max(score for _, score in res.validation_ndcg)
    first = next(c for c, score in res.validation_ndcg if score == best_score)
    assert res.best is first


def test_empty_grid():
    with pytest.raises(PreconditionError):
        grid_search([], block_interactions(1, 2, 2))


def test_grid_search_prefers_enough_dimensions():
    # four blocks whose preference directions need two latent dimensions
    s = block_interactions(4, 12, 10)
    grid = [TrainConfig(k=k, learning_rate=0.05, reg_lambda=0.001, epochs=60, seed=2) for k in (1, 2)]
    res = run_grid_search(grid, s, SplitSpec(seed=1))
    scores = dict((c.k, v) for c, v in res.validation_ndcg)
    assert scores[2] > scores[1]
    assert res.best.k == 2
    assert res.test_ndcg is not None


# --- checkpoints -------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    m = random_model(rng)
    m.seed = 42
    path = tmp_path / "model.npz"
    save_model(m, path)
    back = load_model(path)
    assert models_equal(m, back) and back.seed == 42
