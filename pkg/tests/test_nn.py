import math

import numpy as np
import pytest

from dropprune.data import Dataset, synth_blobs
from dropprune.nn import (
    IDENTITY,
    RELU,
    SOFTMAX,
    DenseLayer,
    Network,
    ShapeError,
    TrainConfig,
)


def identity_net(dim):
    return Network([DenseLayer(np.eye(dim), np.zeros(dim), IDENTITY)])


class TestForward:
    def test_identity_layer_passes_input_through(self):
        net = identity_net(4)
        x = np.array([[1.0, -2.0, 0.5, 3.0], [0.0, 1.0, 2.0, 3.0]])
        assert np.array_equal(net.forward(x), x)

    def test_zero_weights_broadcast_bias(self):
        b = np.array([0.3, -1.2, 4.0])
        net = Network([DenseLayer(np.zeros((5, 3)), b, IDENTITY)])
        out = net.forward(np.random.default_rng(0).normal(size=(7, 5)))
        assert np.array_equal(out, np.tile(b, (7, 1)))

    def test_two_layer_matches_hand_computed_chain(self):
        # oracle: explicit scalar loops, no matrix library
        w1 = np.array([[0.2, -0.5, 0.1, 0.7],
                       [1.0, 0.3, -0.2, 0.0],
                       [-0.4, 0.6, 0.9, -1.1]])
        b1 = np.array([0.1, -0.2, 0.0, 0.5])
        w2 = np.array([[0.3, -0.6],
                       [0.8, 0.2],
                       [-0.5, 0.4],
                       [0.1, 0.9]])
        b2 = np.array([-0.3, 0.2])
        x = np.array([[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]])

        hidden = np.zeros((2, 4))
        for i in range(2):
            for j in range(4):
                acc = b1[j]
                for k in range(3):
                    acc += x[i, k] * w1[k, j]
                hidden[i, j] = max(acc, 0.0)
        expect = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                acc = b2[j]
                for k in range(4):
                    acc += hidden[i, k] * w2[k, j]
                expect[i, j] = acc

        net = Network([DenseLayer(w1, b1, RELU), DenseLayer(w2, b2, IDENTITY)])
        np.testing.assert_allclose(net.forward(x), expect, rtol=1e-12)

    def test_softmax_outputs_probabilities(self):
        net = Network.mlp([3, 5, 4], seed=2)
        out = net.forward(np.random.default_rng(1).random((6, 3)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert (out >= 0).all()

    def test_shape_mismatch_names_layer(self):
        net = Network.mlp([3, 5, 4], seed=0)
        with pytest.raises(ShapeError, match="layer 0"):
            net.forward(np.zeros((2, 7)))


class TestBackward:
    def test_duplicated_example_equals_single_gradient(self):
        net = Network.mlp([4, 6, 3], seed=5)
        x = np.random.default_rng(2).random((1, 4))
        y = np.array([1])
        g1, l1 = net.backward(x, y)
        g2, l2 = net.backward(np.vstack([x, x]), np.array([1, 1]))
        assert l1 == pytest.approx(l2, rel=1e-12)
        for (dw1, db1), (dw2, db2) in zip(g1, g2):
            np.testing.assert_allclose(dw1, dw2, rtol=1e-12)
            np.testing.assert_allclose(db1, db2, rtol=1e-12)

    def test_zero_weight_softmax_loss_is_log_classes(self):
        net = Network([DenseLayer(np.zeros((5, 7)), np.zeros(7), SOFTMAX)])
        _, loss = net.backward(np.random.default_rng(0).random((3, 5)), np.array([0, 3, 6]))
        assert loss == pytest.approx(math.log(7), rel=1e-12)

    def test_label_out_of_range_rejected(self):
        net = Network.mlp([3, 4, 2], seed=0)
        with pytest.raises(ValueError):
            net.backward(np.zeros((1, 3)), np.array([2]))
        with pytest.raises(ValueError):
            net.backward(np.zeros((1, 3)), np.array([-1]))


def kink_margin(net, x):
    """Distance of the closest hidden ReLU pre-activation from zero."""
    margin = np.inf
    for layer in net.layers:
        z = x @ layer.weights + layer.bias
        if layer.activation == RELU:
            margin = min(margin, float(np.min(np.abs(z))))
            x = np.maximum(z, 0.0)
        else:
            x = z
    return margin


def sample_away_from_kinks(net, rng, batch, dim, margin=1e-3):
    """Inputs whose ReLU pre-activations all clear the kink by `margin`,
    so central differences stay on one linear piece."""
    for _ in range(200):
        x = rng.normal(size=(batch, dim))
        if kink_margin(net, x) > margin:
            return x
    raise AssertionError("could not find kink-free inputs")


def finite_difference_check(net, x, y, h=1e-5, tol=1e-4):
    """Central finite differences on every parameter vs analytic gradients."""
    grads, _ = net.backward(x, y)

    def loss_at():
        _, loss = net.backward(x, y)
        return loss

    for k, layer in enumerate(net.layers):
        for arr, grad in ((layer.weights, grads[k][0]), (layer.bias, grads[k][1])):
            flat = arr.ravel()
            gflat = grad.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_at()
                flat[i] = orig - h
                down = loss_at()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                denom = max(abs(numeric), abs(gflat[i]), 1e-4)
                assert abs(numeric - gflat[i]) / denom < tol, (
                    f"layer {k} param {i}: analytic {gflat[i]}, numeric {numeric}"
                )


class TestGradientCheck:
    def test_small_net_matches_finite_differences(self):
        net = Network.mlp([3, 4, 2], seed=11)
        rng = np.random.default_rng(11)
        x = sample_away_from_kinks(net, rng, 5, 3)
        y = rng.integers(0, 2, size=5)
        finite_difference_check(net, x, y)

    @pytest.mark.parametrize("seed", range(5))
    def test_various_shapes(self, seed):
        rng = np.random.default_rng(seed)
        dims = [int(rng.integers(2, 11)) for _ in range(3)] + [int(rng.integers(2, 11))]
        net = Network.mlp(dims, seed=seed)
        x = sample_away_from_kinks(net, rng, 4, dims[0])
        y = rng.integers(0, dims[-1], size=4)
        finite_difference_check(net, x, y)


class TestSgdStep:
    def test_zero_lr_leaves_net_unchanged(self):
        net = Network.mlp([3, 4, 2], seed=1)
        before = [l.weights.copy() for l in net.layers]
        grads, _ = net.backward(np.random.default_rng(0).random((2, 3)), np.array([0, 1]))
        net.sgd_step(grads, 0.0)
        for w0, layer in zip(before, net.layers):
            assert np.array_equal(w0, layer.weights)

    def test_scalar_arithmetic(self):
        net = Network([DenseLayer(np.array([[1.0]]), np.zeros(1), IDENTITY)])
        net.sgd_step([(np.array([[0.5]]), np.zeros(1))], 0.1)
        assert net.layers[0].weights[0, 0] == pytest.approx(0.95, abs=1e-15)

    def test_two_steps_equal_summed_gradients(self):
        net_a = Network.mlp([3, 4, 2], seed=9)
        net_b = net_a.copy()
        rng = np.random.default_rng(4)
        g1 = [(rng.normal(size=l.weights.shape), rng.normal(size=l.bias.shape))
              for l in net_a.layers]
        g2 = [(rng.normal(size=l.weights.shape), rng.normal(size=l.bias.shape))
              for l in net_a.layers]
        net_a.sgd_step(g1, 0.05)
        net_a.sgd_step(g2, 0.05)
        summed = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(g1, g2)]
        net_b.sgd_step(summed, 0.05)
        for la, lb in zip(net_a.layers, net_b.layers):
            np.testing.assert_allclose(la.weights, lb.weights, rtol=1e-12)


class TestEvaluate:
    def constant_class_net(self, dim, classes):
        w = np.zeros((dim, classes))
        b = np.zeros(classes)
        b[0] = 10.0  # always predicts class 0
        return Network([DenseLayer(w, b, SOFTMAX)])

    def test_all_correct(self):
        net = self.constant_class_net(4, 3)
        data = Dataset(np.random.default_rng(0).random((20, 4)), np.zeros(20, dtype=np.int64))
        assert net.evaluate(data).test_error == 0.0

    def test_half_wrong(self):
        net = self.constant_class_net(4, 3)
        labels = np.array([0, 1] * 10, dtype=np.int64)
        data = Dataset(np.random.default_rng(0).random((20, 4)), labels)
        assert net.evaluate(data).test_error == 0.5

    def test_matches_per_sample_recount(self):
        net = Network.mlp([6, 8, 4], seed=3)
        rng = np.random.default_rng(14)
        data = Dataset(rng.random((100, 6)), rng.integers(0, 4, 100))
        result = net.evaluate(data, batch_size=17)
        wrong = 0
        for i in range(100):
            scores = net.forward(data.inputs[i:i + 1])[0]
            pred = max(range(4), key=lambda c: scores[c])
            wrong += int(pred != data.labels[i])
        assert result.test_error == pytest.approx(wrong / 100, abs=1e-15)

    def test_empty_dataset_rejected(self):
        net = Network.mlp([3, 2], seed=0)
        data = Dataset(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError):
            net.evaluate(data)


class TestTraining:
    def test_seeded_training_is_bitwise_deterministic(self):
        from dropprune.engine import train_baseline

        full = synth_blobs(8, 2, 80, 5, 0.3)
        data = Dataset(full.inputs, full.labels)
        nets = []
        for _ in range(2):
            net = Network.mlp([5, 8, 2], seed=21)
            train_baseline(net, data, data, TrainConfig(lr=0.1, batch_size=16, epochs=2, seed=21))
            nets.append(net)
        for la, lb in zip(nets[0].layers, nets[1].layers):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)

    def test_loss_decreases_on_separable_blobs(self):
        full = synth_blobs(12, 2, 100, 4, 0.1)
        net = Network.mlp([4, 8, 2], seed=2)
        _, first = net.backward(full.inputs, full.labels)
        for _ in range(100):
            grads, loss = net.backward(full.inputs, full.labels)
            net.sgd_step(grads, 0.1)
        _, last = net.backward(full.inputs, full.labels)
        assert last < first


class TestConstruction:
    def test_layer_chain_validated(self):
        with pytest.raises(ShapeError):
            Network([
                DenseLayer(np.zeros((3, 4)), np.zeros(4), RELU),
                DenseLayer(np.zeros((5, 2)), np.zeros(2), IDENTITY),
            ])

    def test_softmax_only_last(self):
        with pytest.raises(ValueError):
            Network([
                DenseLayer(np.zeros((3, 4)), np.zeros(4), SOFTMAX),
                DenseLayer(np.zeros((4, 2)), np.zeros(2), IDENTITY),
            ])

    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
