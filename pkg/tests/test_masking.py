import numpy as np
import pytest

from dropprune.masking import Mask, MaskedModel, load_checkpoint, save_checkpoint
from dropprune.nn import DenseLayer, IDENTITY, Network
from dropprune.sampling import make_rng


def small_model(seed=0):
    return MaskedModel(Network.mlp([5, 7, 3], seed=seed))


class TestSparsity:
    def test_all_ones_mask(self):
        assert small_model().sparsity() == 0.0

    def test_all_zeros_mask(self):
        m = small_model()
        m.mask.set_bits(np.zeros(m.mask.size, dtype=bool))
        assert m.sparsity() == 1.0

    def test_lenet_fc_arithmetic(self):
        # 784*300 + 300*100 + 100*10 = 266,200 weights; 26,620 live -> 0.9
        mask = Mask([(784, 300), (300, 100), (100, 10)])
        assert mask.size == 266_200
        bits = np.zeros(266_200, dtype=bool)
        bits[:26_620] = True
        mask = Mask([(784, 300), (300, 100), (100, 10)], bits)
        sparsity = 1.0 - mask.support_size() / mask.size
        assert sparsity == pytest.approx(0.9, abs=1e-12)

    def test_per_layer_scope(self):
        m = small_model()
        bits = m.mask.bits.copy()
        bits[m.mask.layer_slice(0)] = False
        m.mask.set_bits(bits)
        assert m.sparsity(layer=0) == 1.0
        assert m.sparsity(layer=1) == 0.0

    def test_layer_out_of_range(self):
        with pytest.raises(IndexError):
            small_model().sparsity(layer=5)


class TestMaskedForward:
    def test_all_ones_equals_plain_forward(self):
        m = small_model()
        x = np.random.default_rng(0).random((4, 5))
        assert np.array_equal(m.masked_forward(x), m.net.forward(x))

    def test_all_zeros_depends_only_on_biases(self):
        m1, m2 = small_model(seed=1), small_model(seed=2)  # different weights
        for m in (m1, m2):
            m.mask.set_bits(np.zeros(m.mask.size, dtype=bool))
        for layer_a, layer_b in zip(m1.net.layers, m2.net.layers):
            layer_b.bias[:] = layer_a.bias
        x = np.random.default_rng(3).random((4, 5))
        assert np.array_equal(m1.masked_forward(x), m2.masked_forward(x))

    def test_random_mask_equals_zeroed_copy(self):
        m = small_model(seed=4)
        rng = make_rng(5)
        m.mask.set_bits(rng.random(m.mask.size) < 0.5)
        x = rng.random((6, 5))
        zeroed = Network(
            [DenseLayer(l.weights * m.mask.layer_view(k), l.bias.copy(), l.activation)
             for k, l in enumerate(m.net.layers)]
        )
        assert np.array_equal(m.masked_forward(x), zeroed.forward(x))


class TestMaskedSgdStep:
    def test_all_zeros_mask_freezes_weights_updates_biases(self):
        m = small_model()
        m.mask.set_bits(np.zeros(m.mask.size, dtype=bool))
        w_before = [l.weights.copy() for l in m.net.layers]
        b_before = [l.bias.copy() for l in m.net.layers]
        x = np.random.default_rng(0).random((4, 5))
        grads, _ = m.masked_backward(x, np.array([0, 1, 2, 0]))
        m.masked_sgd_step(grads, 0.1)
        for w0, layer in zip(w_before, m.net.layers):
            assert np.array_equal(w0, layer.weights)
        assert any(not np.array_equal(b0, l.bias) for b0, l in zip(b_before, m.net.layers))

    def test_masked_index_frozen_bitwise_over_steps(self):
        m = small_model(seed=7)
        rng = make_rng(8)
        m.mask.set_bits(rng.random(m.mask.size) < 0.7)
        frozen = ~m.mask.bits
        before = m.flat_weights()[frozen].copy()
        x = rng.random((8, 5))
        y = rng.integers(0, 3, 8).astype(np.int64)
        for _ in range(20):
            grads, _ = m.masked_backward(x, y)
            m.masked_sgd_step(grads, 0.05)
        after = m.flat_weights()[frozen]
        assert np.array_equal(before, after)

    def test_live_updates_match_plain_step_on_zeroed_copy(self):
        m = small_model(seed=9)
        rng = make_rng(10)
        m.mask.set_bits(rng.random(m.mask.size) < 0.6)
        zeroed = m.effective_network()
        x = rng.random((5, 5))
        y = rng.integers(0, 3, 5).astype(np.int64)

        grads, _ = m.masked_backward(x, y)
        m.masked_sgd_step(grads, 0.1)

        plain_grads, _ = zeroed.backward(x, y)
        zeroed.sgd_step(plain_grads, 0.1)
        for k, (lm, lz) in enumerate(zip(m.net.layers, zeroed.layers)):
            live = m.mask.layer_view(k)
            assert np.array_equal(lm.weights[live], lz.weights[live])
            assert np.array_equal(lm.bias, lz.bias)


class TestApplyMaskUpdates:
    def test_empty_updates_leave_mask_unchanged(self):
        m = small_model()
        before = m.mask.bits.copy()
        m.apply_mask_updates(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        assert np.array_equal(before, m.mask.bits)

    def test_support_arithmetic(self):
        # |support| 1000 - 90 away + 8 back = 918, the drop recurrence at
        # xi1=0.9, xi2=0.08, |S|=100
        mask = Mask([(40, 30)])  # 1200 weights
        bits = np.zeros(1200, dtype=bool)
        bits[:1000] = True
        mask = Mask([(40, 30)], bits)
        away = np.arange(90)
        back = np.arange(1000, 1008)
        mask.update(away, back)
        assert mask.support_size() == 918

    def test_drop_back_restores_frozen_value(self):
        m = small_model(seed=11)
        idx = 3
        frozen_value = m.flat_weights()[idx]
        m.apply_mask_updates(np.array([idx]), np.empty(0, dtype=np.int64))
        rng = make_rng(12)
        x = rng.random((6, 5))
        y = rng.integers(0, 3, 6).astype(np.int64)
        for _ in range(10):
            grads, _ = m.masked_backward(x, y)
            m.masked_sgd_step(grads, 0.1)
        m.apply_mask_updates(np.empty(0, dtype=np.int64), np.array([idx]))
        assert m.flat_weights()[idx] == frozen_value
        live = m.masked_forward(x)
        zeroed_equal = m.effective_network().forward(x)
        assert np.array_equal(live, zeroed_equal)

    def test_precondition_violations_raise(self):
        m = small_model()
        with pytest.raises(ValueError):
            m.apply_mask_updates(np.array([0]), np.array([0]))  # back not pruned
        m.apply_mask_updates(np.array([0]), np.empty(0, dtype=np.int64))
        with pytest.raises(ValueError):
            m.apply_mask_updates(np.array([0]), np.empty(0, dtype=np.int64))  # already away


class TestProperties:
    def test_freeze_restore_over_random_sequences(self):
        m = small_model(seed=13)
        rng = make_rng(14)
        x = rng.random((4, 5))
        y = rng.integers(0, 3, 4).astype(np.int64)
        history = {i: m.flat_weights()[i] for i in range(m.mask.size)}
        for _ in range(30):
            live = np.flatnonzero(m.mask.bits)
            dead = np.flatnonzero(~m.mask.bits)
            away = rng.choice(live, size=min(3, live.size), replace=False)
            back = (rng.choice(dead, size=min(2, dead.size), replace=False)
                    if dead.size else np.empty(0, dtype=np.int64))
            m.apply_mask_updates(away, back)
            grads, _ = m.masked_backward(x, y)
            m.masked_sgd_step(grads, 0.05)
            flat = m.flat_weights()
            for i in np.flatnonzero(~m.mask.bits):
                assert flat[i] == history[i], "frozen weight drifted"
            for i in np.flatnonzero(m.mask.bits):
                history[i] = flat[i]

    def test_incremental_support_matches_recount(self):
        m = small_model(seed=15)
        rng = make_rng(16)
        for _ in range(200):
            live = np.flatnonzero(m.mask.bits)
            dead = np.flatnonzero(~m.mask.bits)
            n_away = int(rng.integers(0, min(4, live.size) + 1))
            n_back = int(rng.integers(0, min(4, dead.size) + 1))
            away = rng.choice(live, size=n_away, replace=False)
            back = rng.choice(dead, size=n_back, replace=False)
            m.apply_mask_updates(away, back)
            assert m.mask.support_size() == m.mask.recount_support()


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        m = small_model(seed=17)
        rng = make_rng(18)
        m.mask.set_bits(rng.random(m.mask.size) < 0.4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert loaded.net.layer_shapes == m.net.layer_shapes
        for la, lb in zip(m.net.layers, loaded.net.layers):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)
            assert la.activation == lb.activation
        assert np.array_equal(m.mask.bits, loaded.mask.bits)
        # saving the loaded model reproduces the file byte for byte
        path2 = tmp_path / "model2.ckpt"
        save_checkpoint(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        m = small_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(m, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(ValueError):
            load_checkpoint(path)


def test_mask_network_consistency_enforced():
    net = Network.mlp([5, 7, 3], seed=0)
    with pytest.raises(ValueError):
        MaskedModel(net, Mask([(5, 7)]))
