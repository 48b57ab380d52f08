import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landuse_cdr.errors import ConfigError, ConsistencyError
from landuse_cdr.grid import ALL_CLASSES, GridSpec, LandUseClass, ZoningGrid
from landuse_cdr.rforest import (CVResult, Forest, ForestConfig, Tree, VoteTally, bootstrap_sample,
                                 cross_validate, fit_forest, objective_value, predict, search_weights,
                                 stratified_folds, thresholds_from_weights, train_forest, train_tree,
                                 tune_weights, weighted_argmax, weights_from_thresholds)
from landuse_cdr.signal import FeatureMatrix

import oracles
from cities import city_features, hard_config, stratified_holdout

R, C, I, P, O = ALL_CLASSES


def leaf_tree(counts):
    """A single-leaf tree voting for the argmax of ``counts``."""
    return Tree(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32), np.array([-1], np.int32),
                np.asarray([counts], np.int32), 0)


def fixed_vote_forest(votes, weights=None):
    # one leaf tree per vote, classes 1..len(votes)
    n = len(votes)
    trees = []
    for k, v in enumerate(votes):
        hist = [0] * n
        hist[k] = 1
        trees += [leaf_tree(hist)] * v
    return Forest(trees, range(1, n + 1), weights)


def blobs(rng, n_per_class, n_classes=3, spread=1.0, width=49):
    X, y = [], []
    for c in range(n_classes):
        centre = rng.normal(0, 3, width)
        X.append(centre + rng.normal(0, spread, (n_per_class, width)))
        y += [c + 1] * n_per_class
    return np.vstack(X), np.array(y)


def test_separable_one_feature_gives_depth_one_tree():
    X = np.array([[0.1], [0.2], [0.3], [0.7], [0.8], [0.9]])
    y = np.array([0, 0, 0, 1, 1, 1])
    t = train_tree(X, y, seed=0, mtry=1, min_leaf=1, bootstrap=False)
    assert t.n_nodes == 3 and t.feature[0] == 0 and t.threshold[0] == pytest.approx(0.5)
    assert (t.predict_index(X) == y).all()


def test_single_class_single_leaf_and_empty_input():
    X = np.random.default_rng(0).random((10, 4))
    t = train_tree(X, np.zeros(10, int), seed=1)
    assert t.is_leaf and t.n_nodes == 1 and t.hist[0].sum() == 10
    with pytest.raises(ValueError):
        train_tree(np.zeros((0, 3)), np.zeros(0, int), seed=0)


def test_min_leaf_stops_small_nodes():
    X = np.arange(4.0)[:, None]
    t = train_tree(X, np.array([0, 1, 0, 1]), seed=0, mtry=1, min_leaf=5, bootstrap=False)
    assert t.is_leaf


def test_tree_structure_invariants():
    rng = np.random.default_rng(2)
    X = rng.random((200, 6))
    y = rng.integers(0, 3, 200)
    t = train_tree(X, y, seed=5, mtry=3)
    internal = t.feature >= 0
    assert (t.left[internal] > 0).all() and (t.right[internal] > 0).all()
    leaves = ~internal
    assert (t.hist[leaves].sum(axis=1) > 0).all()
    # preorder: the left child immediately follows its parent
    assert (t.left[internal] == np.nonzero(internal)[0] + 1).all()
    assert t.hist[leaves].sum() == 200


@pytest.mark.parametrize("seed", range(25))
def test_root_split_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(20, 2)), 1)       # rounding creates repeated values
    y = rng.integers(0, 2, 20)
    t = train_tree(X, y, seed=seed, n_classes=2, mtry=2, min_leaf=1)
    rows = bootstrap_sample(seed, 0, 0, 20)
    argmins, best, parent = oracles.exhaustive_best_splits(X, y, rows, 2)
    if not argmins or best >= parent - 1e-12 * 20:
        assert t.is_leaf
    else:
        f, thr = int(t.feature[0]), float(t.threshold[0])
        assert any(f == g and abs(thr - s) < 1e-12 for g, s in argmins)


def test_bootstrap_sample_cardinality():
    for n in (1, 7, 100):
        s = bootstrap_sample(3, 0, 11, n)
        assert len(s) == n and s.min() >= 0 and s.max() < n
    assert np.array_equal(bootstrap_sample(3, 0, 11, 50), bootstrap_sample(3, 0, 11, 50))
    assert not np.array_equal(bootstrap_sample(3, 0, 11, 50), bootstrap_sample(3, 0, 12, 50))


def test_vote_threshold_hand_example():
    # fractions Res 0.5, Com 0.2, Ind 0.3; thresholds 0.6 / 0.1 / 0.6
    forest = fixed_vote_forest([5, 2, 3], weights_from_thresholds([0.6, 0.1, 0.6]))
    cls, tally = predict(forest, np.zeros(49))
    assert tally.fractions.tolist() == pytest.approx([0.5, 0.2, 0.3])
    assert tally.scores.tolist() == pytest.approx([0.8333333333, 2.0, 0.5])
    assert cls is C
    with pytest.raises(ValueError):
        predict(forest, np.zeros(48))


def test_uniform_weights_give_plurality_and_unanimity_beats_weights():
    assert predict(fixed_vote_forest([3, 5, 2]), np.zeros(49))[0] is C
    forest = fixed_vote_forest([0, 0, 10], [100.0, 50.0, 0.01])
    assert predict(forest, np.zeros(49))[0] is I
    # exact tie goes to the lower code
    assert predict(fixed_vote_forest([4, 4, 2]), np.zeros(49))[0] is R


def test_threshold_weight_conventions():
    w = weights_from_thresholds([0.6, 0.1, 0.1, 0.1, 0.1])
    assert w.tolist() == pytest.approx([1 / 0.6, 10, 10, 10, 10])
    assert thresholds_from_weights(w).tolist() == pytest.approx([0.6, 0.1, 0.1, 0.1, 0.1])
    with pytest.raises(ConfigError):
        weights_from_thresholds([0.5, 0.0])
    with pytest.raises(ConfigError):
        fixed_vote_forest([1, 1], [1.0, -1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=5, max_size=5).filter(lambda v: sum(v) > 0),
       st.lists(st.sampled_from(["1", "2", "4", "8", "0.5", "0.1", "0.25"]), min_size=5, max_size=5),
       st.floats(0.01, 100))
def test_weighted_vote_properties(votes, inv, scale):
    weights = np.array([float(v) for v in inv])
    forest = fixed_vote_forest(votes, weights)
    frac = forest.vote_fractions(np.zeros((1, 49)))[0]
    assert abs(frac.sum() - 1) < 1e-9
    # every candidate weight has an exact decimal inverse, so the hand arithmetic is exact
    expected, _ = oracles.hand_weighted_vote(votes, sum(votes), [str(1 / w) for w in weights.tolist()])
    got = forest.predict(np.zeros((1, 49)))[0]
    assert got == expected + 1
    # common scaling never changes the winner
    assert forest.with_weights(weights * scale).predict(np.zeros((1, 49)))[0] == got
    # raising the winner's weight never moves the prediction away from it
    up = weights.copy()
    up[got - 1] *= 3.0
    assert forest.with_weights(up).predict(np.zeros((1, 49)))[0] == got


def test_forest_determinism_threads_and_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    X, y = blobs(rng, 40, spread=3.0)
    Xt, _ = blobs(np.random.default_rng(4), 20, spread=3.0)
    a = fit_forest(X, y, ForestConfig(n_trees=30, master_seed=9, threads=1))
    b = fit_forest(X, y, ForestConfig(n_trees=30, master_seed=9, threads=4))
    c = fit_forest(X, y, ForestConfig(n_trees=30, master_seed=9, threads=0))
    assert np.array_equal(a.votes(Xt), b.votes(Xt)) and np.array_equal(a.votes(Xt), c.votes(Xt))
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.threshold, tb.threshold) and np.array_equal(ta.feature, tb.feature)
    a.with_weights([1.0, 2.0, 0.5]).save(tmp_path / "f.json")
    back = Forest.load(tmp_path / "f.json")
    assert np.array_equal(back.votes(Xt), a.votes(Xt))
    assert back.weights.tolist() == [1.0, 2.0, 0.5] and back.classes == (1, 2, 3)
    assert np.array_equal(back.predict(Xt), a.with_weights([1.0, 2.0, 0.5]).predict(Xt))
    other = fit_forest(X, y, ForestConfig(n_trees=30, master_seed=10))
    assert any(not np.array_equal(t1.threshold, t2.threshold) for t1, t2 in zip(a.trees, other.trees))


def test_one_tree_forest_equals_single_tree():
    rng = np.random.default_rng(5)
    X, y = blobs(rng, 30, spread=4.0)
    f = fit_forest(X, y, ForestConfig(n_trees=1, master_seed=2))
    t = train_tree(X, y - 1, seed=2, n_classes=3, mtry=7)
    Xt, _ = blobs(np.random.default_rng(6), 30, spread=4.0)
    assert np.array_equal(f.predict(Xt), t.predict_index(Xt) + 1)


def test_train_forest_rejects_unlabeled_cells():
    rng = np.random.default_rng(7)
    fm = FeatureMatrix(np.array([[0, 0], [0, 1], [1, 0]]), rng.random((3, 49)))
    zg = ZoningGrid(GridSpec(0, 0, 2, 2), [[1, 0], [2, 0]])
    with pytest.raises(ConsistencyError, match=r"\(0, 1\)"):
        train_forest(fm, zg, ForestConfig(n_trees=2))


def test_config_validation():
    for bad in (dict(n_trees=0), dict(mtry=0), dict(mtry=50), dict(k_folds=1), dict(objective="f1"),
                dict(threads=-1), dict(min_leaf=0)):
        with pytest.raises(ConfigError):
            ForestConfig(**bad)


def test_stratified_folds_partition_and_balance():
    codes = np.array([1] * 53 + [2] * 11 + [3] * 4)
    folds = stratified_folds(codes, 5, seed=1)
    assert set(folds.tolist()) == set(range(5))
    for c in (1, 2, 3):
        counts = np.bincount(folds[codes == c], minlength=5)
        assert counts.max() - counts.min() <= 1
    assert np.array_equal(folds, stratified_folds(codes, 5, seed=1))


def test_cross_validation_each_row_scored_once_and_loo():
    rng = np.random.default_rng(8)
    X, y = blobs(rng, 12, spread=1.0)
    fm = FeatureMatrix(np.column_stack([np.arange(36), np.zeros(36, int)]), X)
    cv = cross_validate(fm, y, ForestConfig(n_trees=10, k_folds=4, master_seed=1))
    assert np.bincount(cv.folds).tolist() == [9, 9, 9, 9]
    assert np.allclose(cv.fractions.sum(axis=1), 1.0)
    assert (cv.predict() == y).mean() > 0.9
    loo = cross_validate(fm, y, ForestConfig(n_trees=5, k_folds=36, master_seed=1))
    assert sorted(loo.folds.tolist()) == list(range(36))


def _cv_fixture():
    truth = np.array([1] * 8 + [2] * 2 + [3] * 2)
    frac = np.array([[0.9, 0.1, 0.0]] * 8 + [[0.6, 0.4, 0.0], [0.7, 0.3, 0.0],
                                             [0.55, 0.0, 0.45], [0.8, 0.0, 0.2]])
    return CVResult(np.zeros((12, 2), int), truth, np.arange(12) % 2, (1, 2, 3), frac)


def test_weight_search_behaviour():
    cv = _cv_fixture()
    grid = {R: (1.0,), C: (1.0, 2.0, 4.0), I: (1.0, 2.0, 4.0)}
    ws = search_weights(cv, grid)
    base = objective_value(cv.truth, cv.predict(np.ones(3)), cv.classes)
    assert ws.score >= base and base == 0.0
    # uniform weights miss every minority row; weighting fixes all but one
    assert ws.score == pytest.approx(0.75)
    assert ws.weights.tolist() == [1.0, 4.0, 2.0]   # first maximum in lexicographic order
    single = search_weights(cv, {R: (3.0,), C: (3.0,), I: (3.0,)})
    assert single.weights.tolist() == [3.0, 3.0, 3.0]
    with pytest.raises(ConfigError):
        search_weights(cv, {R: (), C: (1.0,), I: (1.0,)})
    with pytest.raises(ConfigError):
        tune_weights(FeatureMatrix(np.zeros((0, 2)), np.zeros((0, 49))), [], ForestConfig(weight_grid={}))
    assert search_weights(cv, grid, "accuracy").score >= objective_value(cv.truth, cv.predict(), cv.classes,
                                                                         "accuracy")


def test_vote_tally_winner():
    t = VoteTally((1, 2), np.array([0.5, 0.5]), np.array([0.5, 0.5]))
    assert t.winner is R
    assert weighted_argmax(np.array([[1.0, 1.0 + 1e-14, 0.5]]))[0] == 0
    assert weighted_argmax(np.array([[1.0, 1.0 + 1e-9, 0.5]]))[0] == 1
    assert LandUseClass(2) is C


@pytest.mark.parametrize("n_all", [20, 2000])
def test_both_split_search_paths_match_oracle(n_all):
    # a 20-row node inside a 20-row table scans presorted order; inside 2000 rows it sorts locally
    from landuse_cdr import _kernels
    rng = np.random.default_rng(n_all)
    for _ in range(20):
        X = np.round(rng.normal(size=(n_all, 3)), 1)
        y = rng.integers(0, 3, n_all)
        rows = rng.integers(0, n_all, 20)
        f, thr, g = _kernels.best_split(X, y, rows, 3, np.arange(3), _kernels.presort(X),
                                        np.zeros(n_all, np.int64))
        argmins, best, _ = oracles.exhaustive_best_splits(X, y, rows, 3)
        assert g == pytest.approx(best, rel=1e-12)
        assert any(f == a and abs(thr - b) < 1e-12 for a, b in argmins)


@pytest.fixture(scope="module")
def hard_city():
    zg, _, fm, _ = city_features(hard_config(seed=2))
    cfg = ForestConfig(n_trees=100, master_seed=2)
    return zg, fm, cfg, cross_validate(fm, zg, cfg)


def test_cv_agrees_with_held_out_split(hard_city):
    zg, fm, cfg, cv = hard_city
    acc_cv = np.mean(cv.predict() == cv.truth)
    test = stratified_holdout(cv.truth, 0.3, seed=2)
    forest = fit_forest(fm.X[~test], cv.truth[~test], cfg, stream=99, classes=cv.classes)
    acc_ho = np.mean(forest.predict(fm.X[test]) == cv.truth[test])
    assert acc_cv < 0.99                     # not a trivially separable city
    assert abs(acc_cv - acc_ho) < 0.03


def test_tuned_weights_beat_uniform_on_minority_classes(hard_city):
    _, _, cfg, cv = hard_city
    uniform = objective_value(cv.truth, cv.predict(), cv.classes)
    ws = search_weights(cv, cfg.weight_grid)
    assert ws.score == objective_value(cv.truth, cv.predict(ws.weights), cv.classes)
    assert ws.score > uniform
