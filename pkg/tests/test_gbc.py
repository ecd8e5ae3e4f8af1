import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnpredict.errors import ConfigError, ValidationError
from learnpredict.gbc import GBCConfig, GBCModel, gbc_fit, gbc_predict_proba


def brute_force_stump_sse(x, r):
    """Smallest residual sum of squares over every single split of every feature."""
    best = float(((r - r.mean()) ** 2).sum())
    for f in range(x.shape[1]):
        for thr in np.unique(x[:, f])[:-1]:
            left = x[:, f] <= thr
            sse = ((r[left] - r[left].mean()) ** 2).sum() + ((r[~left] - r[~left].mean()) ** 2).sum()
            best = min(best, float(sse))
    return best


class TestFit:
    def test_single_stump_separates(self):
        x = np.array([[0.1], [0.4], [0.2], [0.9], [0.7], [0.6]])
        y = np.array([0, 0, 0, 1, 1, 1])
        model = gbc_fit(x, y, GBCConfig(n_trees=1, max_depth=1))
        assert np.array_equal(gbc_predict_proba(model, x) > 0.5, y == 1)
        assert 0.4 < model.trees[0].split_value < 0.6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_stump_is_optimal(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.integers(0, 5, size=(12, 3)).astype(float)
        y = rng.integers(0, 2, 12)
        y[:2] = (0, 1)
        model = gbc_fit(x, y, GBCConfig(n_trees=1, max_depth=1))
        r = y - y.mean()
        fitted = model.trees[0].predict(x)
        assert ((r - fitted) ** 2).sum() == pytest.approx(brute_force_stump_sse(x, r), abs=1e-9)

    def test_zero_shrinkage_rejected(self):
        with pytest.raises(ConfigError):
            GBCConfig(shrinkage=0.0)

    def test_constant_features_give_base_rate(self):
        x = np.ones((10, 3))
        y = np.array([1] * 7 + [0] * 3)
        model = gbc_fit(x, y)
        assert gbc_predict_proba(model, x) == pytest.approx(np.full(10, 0.7))

    def test_zero_trees(self):
        y = np.array([0, 1, 1, 1])
        model = gbc_fit(np.arange(4.0)[:, None], y, GBCConfig(n_trees=0))
        assert gbc_predict_proba(model, np.zeros((2, 1))) == pytest.approx([0.75, 0.75])

    def test_single_class(self):
        with pytest.raises(ValidationError):
            gbc_fit(np.ones((3, 1)), np.ones(3))

    def test_feature_count_checked(self):
        model = gbc_fit(np.arange(4.0)[:, None], np.array([0, 0, 1, 1]), GBCConfig(n_trees=2))
        with pytest.raises(ValueError):
            model.predict_proba(np.ones((1, 2)))

    def test_training_loss_descends(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(300, 5))
        y = (x[:, 0] * x[:, 1] + 0.3 * rng.normal(size=300) > 0).astype(int)
        model = gbc_fit(x, y)
        loss = np.array(model.train_loss)
        assert loss[-1] < 0.7 * loss[0]
        assert np.all(np.diff(loss) <= 1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(150, 4))
        y = (x[:, 0] + x[:, 2] ** 2 > 1).astype(int)
        a = gbc_fit(x, y, GBCConfig(n_trees=30))
        b = gbc_fit(np.exp(x) * 3 + 1, y, GBCConfig(n_trees=30))
        assert np.allclose(a.predict_proba(x), b.predict_proba(np.exp(x) * 3 + 1))

    def test_depth_limits_tree(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(80, 3))
        y = (x[:, 0] > 0).astype(int)
        model = gbc_fit(x, y, GBCConfig(n_trees=5, max_depth=2))

        def depth(node):
            return 0 if node.feature_index is None else 1 + max(depth(node.left), depth(node.right))

        assert max(depth(t) for t in model.trees) <= 2


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 4))
    y = (x[:, 1] > 0).astype(int)
    model = gbc_fit(x, y, GBCConfig(n_trees=20))
    model.save(tmp_path / "gbc.json")
    again = GBCModel.from_json(json.loads((tmp_path / "gbc.json").read_text()))
    assert np.array_equal(again.predict_proba(x), model.predict_proba(x))
