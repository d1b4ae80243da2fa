import json

import numpy as np
import pytest

from gradova import data, nn


def tiny_model(sizes, kinds, seed=0):
    return nn.build_mlp(sizes, kinds, seed)


def logistic_oracle(x, y, steps=3000, lr=0.5):
    """Plain gradient-descent logistic regression, used as a separability check."""
    xb = np.c_[x, np.ones(len(x))]
    w = np.zeros(xb.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-xb @ w))
        w -= lr * xb.T @ (p - y) / len(y)
    return float(((xb @ w > 0) == y.astype(bool)).mean())


def nearest_centroid_accuracy(train, test):
    cents = np.stack([train.features[train.labels == c].mean(axis=0) for c in np.unique(train.labels)])
    d = ((test.features[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float((d.argmin(axis=1) == test.labels).mean())


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        model = tiny_model([3, 4, 2], ["relu", "linear"])
        for layer in model.layers:
            layer.weight[:] = 0.0
        logits, _ = nn.forward(model, np.random.default_rng(0).normal(size=(5, 3)))
        assert np.array_equal(logits, np.zeros((5, 2)))

    def test_identity_layer(self):
        model = tiny_model([2, 2], ["linear"])
        model.layers[0].weight = np.eye(2)
        logits, hidden = nn.forward(model, [[1.0, 2.0]])
        assert np.array_equal(logits, [[1.0, 2.0]])
        assert np.array_equal(hidden, [[1.0, 2.0]])

    def test_matches_straight_line_chain(self):
        rng = np.random.default_rng(1)
        for seed in range(10):
            model = tiny_model([4, 6, 3], ["relu", "linear"], seed)
            x = rng.normal(size=4)
            w1, b1 = model.layers[0].weight, model.layers[0].bias
            w2, b2 = model.layers[1].weight, model.layers[1].bias
            h = [max(0.0, sum(w1[i, j] * x[j] for j in range(4)) + b1[i]) for i in range(6)]
            z = [sum(w2[i, j] * h[j] for j in range(6)) + b2[i] for i in range(3)]
            logits, hidden = nn.forward(model, x)
            assert np.allclose(logits[0], z, atol=1e-12, rtol=0)
            assert np.allclose(hidden[0], h, atol=1e-12, rtol=0)

    def test_dimension_mismatch(self):
        model = tiny_model([3, 2], ["linear"])
        with pytest.raises(ValueError):
            nn.forward(model, [[1.0, 2.0]])

    def test_empty_batch_with_batchnorm_in_train_mode(self):
        model = nn.discriminator(3)
        with pytest.raises(ValueError):
            nn.forward(model, np.zeros((0, 3)), mode="train")

    def test_eval_mode_uses_running_stats_and_leaves_them(self):
        model = nn.discriminator(3, seed=2)
        layer = model.layers[0]
        layer.running_mean = np.full(32, 0.3)
        layer.running_var = np.full(32, 2.0)
        x = np.random.default_rng(2).normal(size=(6, 3))
        one, _ = nn.forward(model, x[:1])
        many, _ = nn.forward(model, x)
        assert np.allclose(one[0], many[0], atol=1e-14, rtol=0)
        assert np.array_equal(layer.running_mean, np.full(32, 0.3))

    def test_batch_stat_flag_couples_samples(self):
        model = nn.discriminator(3, seed=2)
        model.batch_stats_at_inference = True
        x = np.random.default_rng(3).normal(size=(6, 3))
        a, _ = nn.forward(model, x[:3])
        b, _ = nn.forward(model, x)
        assert not np.allclose(a[0], b[0])


class TestSoftmaxAndLoss:
    def test_uniform(self):
        assert np.allclose(nn.softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)

    def test_large_logit_is_stable(self):
        p = nn.softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p)) and p[0] == 1.0

    def test_direct_evaluation(self):
        e = np.exp([1.0, 2.0, 3.0])
        want = e / e.sum()
        assert np.allclose(nn.softmax([1.0, 2.0, 3.0]), want, atol=1e-15)
        assert np.allclose(want, [0.09003057, 0.24472847, 0.66524096], atol=1e-7)

    def test_normalization_and_shift_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            z = rng.normal(scale=30, size=rng.integers(2, 9))
            p = nn.softmax(z)
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p > 0) or z.max() - z.min() > 700
            assert np.allclose(nn.softmax(z + rng.normal(scale=50)), p, atol=1e-12, rtol=0)

    def test_cross_entropy_examples(self):
        assert nn.cross_entropy([1.0, 0.0, 0.0], 0) == 0.0
        assert abs(nn.cross_entropy([1 / 3] * 3, 2) - np.log(3)) < 1e-12
        p = nn.softmax(np.random.default_rng(5).normal(size=4))
        assert nn.cross_entropy(p, 1) == -np.log(p[1])

    def test_cross_entropy_floor_and_range(self):
        assert nn.cross_entropy([1.0, 0.0], 1) == pytest.approx(-np.log(1e-30))
        with pytest.raises(ValueError):
            nn.cross_entropy([0.5, 0.5], 2)

    def test_argmax_minimizes_loss(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            p = nn.softmax(rng.normal(scale=3, size=5))
            best = nn.cross_entropy(p, int(p.argmax()))
            assert all(best <= nn.cross_entropy(p, c) for c in range(5))

    def test_sigmoid_open_interval(self):
        s = nn.sigmoid(np.array([-30.0, -1.0, 0.0, 1.0, 30.0]))
        assert np.all((s > 0) & (s < 1)) and s[2] == 0.5


class TestTrain:
    def test_separable_two_class(self):
        spec = data.DatasetSpec(class_count=2, dim=2, samples_per_class=100, separation=6.0, seed=3, ood=None)
        ds = data.generate(spec)
        assert logistic_oracle(ds.features, ds.labels) >= 0.99
        model, trace = nn.train(nn.classifier(2, 2, seed=1), ds.features, ds.labels, nn.TrainConfig(rng_seed=2))
        assert nn.accuracy(model, ds.features, ds.labels) >= 0.99
        assert len(trace) == 200 and all(np.isfinite(trace))

    def test_zero_learning_rate_keeps_parameters(self):
        model = nn.classifier(3, 2, seed=4)
        cfg = nn.TrainConfig(learning_rate=0.0, epochs=1, rng_seed=0)
        trained, _ = nn.train(model, [[0.1, 0.2, 0.3]], [1], cfg)
        for a, b in zip(model.params(), trained.params()):
            assert a.tobytes() == b.tobytes()

    def test_four_blobs_desk_defaults(self, blobs, trained):
        oracle = nearest_centroid_accuracy(blobs["train"], blobs["test"])
        assert oracle >= 0.95
        assert nn.accuracy(trained["model"], blobs["test"].features, blobs["test"].labels) >= 0.95
        assert all(np.isfinite(trained["trace"]))

    def test_deterministic(self):
        x = np.random.default_rng(7).normal(size=(40, 3))
        y = (x[:, 0] > 0).astype(int)
        cfg = nn.TrainConfig(epochs=5, rng_seed=9)
        a, ta = nn.train(nn.classifier(3, 2, seed=1), x, y, cfg)
        b, tb = nn.train(nn.classifier(3, 2, seed=1), x, y, cfg)
        assert ta == tb
        assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))

    def test_does_not_mutate_input_model(self):
        model = nn.classifier(3, 2, seed=1)
        before = [p.copy() for p in model.params()]
        nn.train(model, np.ones((4, 3)), [0, 1, 0, 1], nn.TrainConfig(epochs=2))
        assert all(np.array_equal(a, b) for a, b in zip(before, model.params()))

    def test_discriminator_needs_both_sides(self):
        with pytest.raises(ValueError):
            nn.train(nn.discriminator(2), np.ones((4, 2)), [1, 1, 1, 1], nn.TrainConfig(epochs=1), "discriminator")

    def test_discriminator_loss_is_two_separate_means(self):
        model = nn.discriminator(2, seed=3)
        x = np.random.default_rng(8).normal(size=(5, 2))
        t = np.array([1, 0, 0, 0, 1])
        value, _ = nn.loss_and_grads(model, x, t, "discriminator", mode="eval")
        s = nn.predict_proba(model, x, batch_stats=False)
        want = -np.log(s[t == 1]).mean() - np.log(1 - s[t == 0]).mean()
        assert abs(value - want) < 1e-12

    def test_non_finite_loss_raises(self):
        model = nn.classifier(2, 2, seed=0)
        model.layers[-1].bias[0] = np.nan
        with pytest.raises(nn.NumericError):
            nn.train(model, np.ones((4, 2)), [0, 1, 0, 1], nn.TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            nn.TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            nn.TrainConfig(adam_beta1=1.0)
        with pytest.raises(ValueError):
            nn.TrainConfig(epochs=0)


class TestBackpropCheck:
    def test_random_small_models(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            model = nn.classifier(4, 3, hidden=(5, 4), seed=seed)
            for layer in model.layers:
                layer.bias = rng.normal(scale=0.1, size=layer.bias.shape)
            x = rng.normal(size=(3, 4))
            assert nn.backprop_check(model, x, rng.integers(0, 3, size=3)) < 1e-4

    def test_zero_model_bias_gradients(self):
        model = nn.classifier(3, 2, hidden=(4,), seed=0)
        for layer in model.layers:
            layer.weight[:] = 0.0
        _, grads = nn.loss_and_grads(model, np.zeros((1, 3)), [1])
        # softmax is uniform, so the output bias gradient is p - e_1
        assert np.allclose(grads[-1], [0.5, -0.5], atol=1e-6)
        assert nn.backprop_check(model, np.zeros((1, 3)), [1]) < 1e-6

    def test_batchnorm_train_mode(self):
        rng = np.random.default_rng(10)
        model = nn.build_mlp([3, 5, 4, 1], ["bn_relu", "relu", "sigmoid"], seed=3)
        model.layers[0].beta = rng.normal(scale=0.5, size=5)
        # nonzero biases keep samples whose BN units are all inactive off the ReLU kink
        for layer in model.layers[1:]:
            layer.bias = rng.normal(scale=0.1, size=layer.bias.shape)
        x = rng.normal(size=(6, 3))
        assert nn.backprop_check(model, x, [0, 1, 0, 1, 1, 0]) < 1e-3


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        model = nn.discriminator(4, seed=5)
        model.layers[0].running_mean = np.random.default_rng(0).normal(size=32)
        path = tmp_path / "m.json"
        nn.save_model(model, path, {"note": 1})
        back = nn.load_model(path)
        assert all(a.tobytes() == b.tobytes() for a, b in zip(model.params(), back.params()))
        assert back.layers[0].running_mean.tobytes() == model.layers[0].running_mean.tobytes()
        assert [layer.kind for layer in back.layers] == [layer.kind for layer in model.layers]
        assert json.loads(path.read_text())["format"] == nn.MODEL_FORMAT

    def test_rejects_foreign_document(self):
        with pytest.raises(ValueError):
            nn.model_from_dict({"format": "other"})

    def test_chain_validation(self):
        a = nn.Layer(np.zeros((3, 2)), np.zeros(3), "relu")
        b = nn.Layer(np.zeros((2, 4)), np.zeros(2), "linear")
        with pytest.raises(ValueError):
            nn.MlpModel([a, b], class_count=2, rng_seed=0)
