import numpy as np
import pytest

from learnpredict.errors import ValidationError
from learnpredict.models import (
    BNN,
    ESN,
    MODEL_KINDS,
    TBN,
    TrainConfig,
    build_esn_mask,
    build_model,
    gradcheck_kind,
    load_model,
    predict_proba,
    tbn_gate,
    train,
)
from learnpredict.nnet import relu, softmax
from learnpredict.textpipe import CourseText

SEG2 = np.repeat(np.arange(2), 2)  # two segments with two features each


def _course(S=4, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    return CourseText(rng.normal(size=(S, dim)), rng.normal(size=dim), np.ones(S))


def _two_layer(x, p):
    return softmax(relu(x @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"])


class TestESNMask:
    def test_floor_threshold_keeps_everything(self):
        c = _course()
        assert build_esn_mask(c.segment_vecs, c.quiz_vec, -1.0, np.repeat(np.arange(4), 3)).all()

    def test_direct_comparison(self):
        # unit vectors with cosine 0.9 and 0.1 against the quiz direction (1, 0)
        segs = np.array([[0.9, np.sqrt(1 - 0.81)], [0.1, np.sqrt(1 - 0.01)]])
        mask = build_esn_mask(segs, np.array([1.0, 0.0]), 0.5, SEG2)
        assert mask.tolist() == [True, True, False, False]

    @pytest.mark.parametrize("S", [2, 4, 10, 36])
    def test_median_keeps_half(self, S):
        c = _course(S=S, seed=S)
        seg = np.repeat(np.arange(S), 4)
        mask = build_esn_mask(c.segment_vecs, c.quiz_vec, None, seg)
        sims = c.similarities
        top = set(np.argsort(sims)[S // 2 :])
        assert set(seg[mask]) == top
        assert mask.sum() == S // 2 * 4

    def test_degenerate(self):
        c = _course()
        with pytest.raises(ValidationError, match="degenerate"):
            build_esn_mask(c.segment_vecs, c.quiz_vec, 1.0, np.repeat(np.arange(4), 2))


class TestESNForward:
    def test_full_mask_is_plain_two_layer(self):
        rng = np.random.default_rng(1)
        net = ESN(np.ones(4, dtype=bool), hidden=3, rng=rng)
        x = rng.normal(size=(5, 4))
        assert np.allclose(net.forward(x), _two_layer(x, net.params))

    def test_zero_weights(self):
        net = ESN(np.ones(4, dtype=bool), zero=True)
        assert net.forward(np.ones((1, 4))).tolist() == [[0.5, 0.5]]

    def test_hand_trace(self):
        net = ESN(np.array([True, False, True]), hidden=2, zero=True)
        net.params.update(
            W1=np.array([[1.0, -1.0], [2.0, 0.5]]),
            b1=np.array([[0.0, 0.5]]),
            W2=np.array([[1.0, 0.0], [0.0, 2.0]]),
            b2=np.array([[0.0, -1.0]]),
        )
        # selected inputs (1, 1): hidden pre (3, 0), relu (3, 0), logits (3, -1)
        x = np.array([[1.0, 99.0, 1.0]])
        p_pass = 1 / (1 + np.exp(3.0 - -1.0))
        assert net.forward(x)[0] == pytest.approx([1 - p_pass, p_pass])

    def test_masked_columns_ignored(self):
        net = ESN(np.array([True, False, True]), rng=np.random.default_rng(0))
        a = np.array([[0.3, 1.0, -0.2]])
        b = a.copy()
        b[0, 1] = -50.0
        assert np.array_equal(net.forward(a), net.forward(b))


class TestTBN:
    def _net(self, seed=0, **kw):
        rng = np.random.default_rng(seed)
        return TBN(rng.normal(size=(2, 2)), SEG2, hidden=3, rng=rng, **kw)

    def test_zero_gate_params_soft(self):
        net = self._net()
        net.params["gw"][:] = 0.0
        assert tbn_gate(net, "soft").tolist() == [0.5, 0.5]

    def test_large_bias_hard(self):
        net = self._net()
        net.params["gw"][:] = 0.0
        net.params["gb"][:] = 10.0
        assert tbn_gate(net, "hard").tolist() == [1.0, 1.0]

    @pytest.mark.parametrize("seed", range(5))
    def test_hard_is_thresholded_soft(self, seed):
        net = TBN(np.random.default_rng(seed).normal(size=(12, 4)), np.arange(12), rng=np.random.default_rng(seed))
        net.params["gb"][:] = 0.3
        assert np.array_equal(net.gates("hard"), (net.gates("soft") > 0.5).astype(float))

    def _set_hard_gates(self, net, gates):
        # with identity products each gate logit is just its own entry of gw
        net.products = np.eye(2)
        net.params["gw"] = np.array([[1.0 if g else -1.0] for g in gates])
        net.params["gb"][:] = 0.0
        net.gate_mode = "hard"

    def test_open_gates_equal_ungated(self):
        net = self._net()
        self._set_hard_gates(net, (1, 1))
        x = np.random.default_rng(3).normal(size=(4, 4))
        assert np.allclose(net.forward(x), _two_layer(x, net.params))

    def test_closed_gates_leave_biases(self):
        net = self._net()
        self._set_hard_gates(net, (0, 0))
        x = np.random.default_rng(3).normal(size=(4, 4))
        expected = _two_layer(np.zeros((1, 4)), net.params)
        assert np.allclose(net.forward(x), expected)

    def test_closed_segment_has_no_influence(self):
        net = self._net()
        self._set_hard_gates(net, (1, 0))
        x = np.random.default_rng(4).normal(size=(1, 4))
        h = 1e-5
        for col in range(4):
            up, down = x.copy(), x.copy()
            up[0, col] += h
            down[0, col] -= h
            slope = (net.forward(up)[0, 1] - net.forward(down)[0, 1]) / (2 * h)
            if SEG2[col] == 1:
                assert slope == 0.0
            else:
                assert abs(slope) > 1e-8


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_gradients_match_finite_differences(kind):
    assert gradcheck_kind(kind, seeds=range(5)) < 1e-4


def test_build_needs_course():
    with pytest.raises(ValidationError):
        build_model("esn", 8, TrainConfig())


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    # push points off the boundary so the margin is positive
    x += 0.3 * np.where(y == 1, 1, -1)[:, None] * np.array([1.0, 0.5])
    return x, y


class TestTraining:
    def test_bnn_separates(self):
        x, y = _separable()
        model, trace = train("bnn", x, y, TrainConfig(epochs=2000, seed=1))
        assert trace.accuracy[-1] == 1.0

    def test_loss_descends(self):
        x, y = _separable()
        _, trace = train("bnn", x, y, TrainConfig(epochs=300, seed=2))
        loss = np.asarray(trace.loss)
        assert loss[-20:].mean() <= loss[0]

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_deterministic(self, kind):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(60, 16))
        y = (x[:, 0] > 0).astype(int)
        course = _course(S=4, dim=5)
        seg = np.repeat(np.arange(4), 4)
        cfg = TrainConfig(epochs=30, seed=(3, 1))
        a, _ = train(kind, x, y, cfg, course, seg)
        b, _ = train(kind, x, y, cfg, course, seg)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_row_order_irrelevant(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(50, 4))
        y = (x[:, 1] > 0).astype(int)
        perm = rng.permutation(50)
        cfg = TrainConfig(epochs=40, seed=9)
        a, _ = train("bnn", x, y, cfg)
        b, _ = train("bnn", x[perm], y[perm], cfg)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_class_weights_shift_predictions(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(200, 3))
        y = (rng.random(200) < 0.85).astype(int)
        plain, _ = train("bnn", x, y, TrainConfig(epochs=300, seed=0))
        weighted, _ = train("bnn", x, y, TrainConfig(epochs=300, seed=0, class_weights="balanced"))
        assert predict_proba(weighted, x).mean() < predict_proba(plain, x).mean()

    def test_early_stop(self):
        x, y = _separable()
        _, trace = train("bnn", x, y, TrainConfig(epochs=5000, seed=0, early_stop_patience=5))
        assert len(trace.epoch) < 5000

    def test_tbn_ends_hard(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(40, 8))
        y = (x[:, 0] > 0).astype(int)
        model, _ = train("tbn", x, y, TrainConfig(epochs=10), _course(S=4, dim=5), np.repeat(np.arange(4), 2))
        assert model.gate_mode == "hard"

    @pytest.mark.parametrize("kwargs", [{"lr": 0}, {"dropout_rate": 1.0}, {"epoch_mode": "sweep"}])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestPrediction:
    def test_zero_bnn_is_half(self):
        assert BNN(5, zero=True).predict_proba(np.ones((3, 5))).tolist() == [0.5] * 3

    def test_untrained_rejected(self):
        with pytest.raises(ValueError):
            predict_proba(BNN(2), np.ones((1, 2)))

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_save_load(self, kind, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(30, 8))
        y = (x[:, 0] > 0).astype(int)
        model, _ = train(kind, x, y, TrainConfig(epochs=20), _course(S=4, dim=5), np.repeat(np.arange(4), 2))
        model.save(tmp_path / "m.json")
        again = load_model(tmp_path / "m.json")
        assert type(again) is type(model)
        assert np.array_equal(predict_proba(again, x), predict_proba(model, x))
