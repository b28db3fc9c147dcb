import numpy as np
import pytest

from omicsgraph.forest import ForestConfig, RandomForest


def test_separable_classes_are_learned():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1, 2], 20)
    X = np.column_stack([y + 0.2 * rng.normal(size=60), rng.normal(size=60)])
    rf = RandomForest(ForestConfig(n_trees=25, seed=1)).fit(X, y)
    assert np.mean(rf.predict(X) == y) == 1.0


def test_regression_forest_tracks_target():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(80, 3))
    y = 3 * X[:, 0]
    rf = RandomForest(ForestConfig(n_trees=20, seed=0), classification=False).fit(X, y)
    assert np.corrcoef(rf.predict(X), y)[0, 1] > 0.95
    assert np.argmax(rf.feature_importances_) == 0


def test_same_seed_same_forest():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(30, 5)), rng.integers(0, 2, 30)
    a = RandomForest(ForestConfig(n_trees=10, seed=4)).fit(X, y)
    b = RandomForest(ForestConfig(n_trees=10, seed=4)).fit(X, y)
    np.testing.assert_array_equal(a.feature_importances_, b.feature_importances_)


def test_max_depth_one_gives_stumps():
    X = np.arange(10.0)[:, None]
    y = (np.arange(10) >= 5).astype(int)
    rf = RandomForest(ForestConfig(n_trees=1, max_depth=1, bootstrap=False)).fit(X, y)
    kinds = [node[0] for node in rf.trees[0].nodes]
    assert kinds == ["split", "leaf", "leaf"]


def test_sqrt_candidates():
    assert ForestConfig().n_candidates(100) == 10
    assert ForestConfig(max_features="all").n_candidates(7) == 7


def test_too_few_rows_error():
    with pytest.raises(ValueError):
        RandomForest(ForestConfig(min_samples_leaf=5)).fit(np.zeros((3, 1)), np.zeros(3, dtype=int))
