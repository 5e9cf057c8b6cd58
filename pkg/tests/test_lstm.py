import math

import numpy as np
import numpy.testing as npt
import pytest

from icuae import ConfigError, ShapeError, grad_check
from icuae.lstm import (
    LstmCellParams,
    SeqAutoencoder,
    SeqBatch,
    decode,
    encode,
    init_lstm_cell,
    init_seq,
    lstm_step,
    seq_forward_backward,
    seq_reconstruct,
)
from icuae.numeric import flatten_arrays, write_flat


def scalar_sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def lstm_step_oracle(params, x, h_prev, c_prev):
    """Straightforward per-element gate arithmetic, no vectorization."""
    hd = params.hidden_dim
    h_out = np.zeros(hd)
    c_out = np.zeros(hd)
    for j in range(hd):
        pre = {}
        for name in "ifog":
            acc = params.gate_view(name, "b")[j]
            for k in range(params.input_dim):
                acc += x[k] * params.gate_view(name, "x")[k, j]
            for k in range(hd):
                acc += h_prev[k] * params.gate_view(name, "h")[k, j]
            pre[name] = acc
        i = scalar_sigmoid(pre["i"])
        f = scalar_sigmoid(pre["f"])
        o = scalar_sigmoid(pre["o"])
        g = math.tanh(pre["g"])
        c_out[j] = f * c_prev[j] + i * g
        h_out[j] = o * math.tanh(c_out[j])
    return h_out, c_out


def zero_cell(input_dim, hidden_dim):
    return LstmCellParams(weights_x=np.zeros((input_dim, 4 * hidden_dim)),
                          weights_h=np.zeros((hidden_dim, 4 * hidden_dim)),
                          bias=np.zeros(4 * hidden_dim))


def unit_batch(rng, b, t, f, lengths=None):
    values = rng.random((b, t, f))
    if lengths is None:
        lengths = np.full(b, t)
    lengths = np.asarray(lengths)
    for s in range(b):
        values[s, lengths[s]:, :] = 0.0
    return SeqBatch(values=values, true_lengths=lengths)


class TestLstmStep:
    def test_all_zero(self):
        p = zero_cell(3, 4)
        h, c = lstm_step(p, np.zeros(3), np.zeros(4), np.zeros(4))
        npt.assert_array_equal(h, np.zeros(4))
        npt.assert_array_equal(c, np.zeros(4))

    def test_saturated_forget_gate_preserves_cell(self):
        p = zero_cell(3, 4)
        p.gate_view("f", "b")[:] = 1e6
        c_prev = np.array([0.3, -0.7, 1.2, 0.05])
        _, c = lstm_step(p, np.zeros(3), np.zeros(4), c_prev)
        npt.assert_allclose(c, c_prev, rtol=0, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(19)
        p = init_lstm_cell(5, 7, rng)
        x = rng.standard_normal(5)
        h_prev = rng.standard_normal(7)
        c_prev = rng.standard_normal(7)
        h, c = lstm_step(p, x, h_prev, c_prev)
        h_ref, c_ref = lstm_step_oracle(p, x, h_prev, c_prev)
        npt.assert_allclose(h, h_ref, rtol=0, atol=1e-12)
        npt.assert_allclose(c, c_ref, rtol=0, atol=1e-12)

    def test_hidden_output_bounded(self):
        rng = np.random.default_rng(21)
        p = init_lstm_cell(4, 6, rng)
        h, _ = lstm_step(p, rng.random(4), rng.uniform(-1, 1, 6),
                         rng.uniform(-2, 2, 6))
        assert np.all(np.abs(h) < 1.0)

    def test_shape_mismatch(self):
        p = zero_cell(3, 4)
        with pytest.raises(ShapeError):
            lstm_step(p, np.zeros(2), np.zeros(4), np.zeros(4))
        with pytest.raises(ShapeError):
            lstm_step(p, np.zeros(3), np.zeros(5), np.zeros(4))


class TestInit:
    def test_deterministic(self):
        a = init_seq(30, 12, seed=3)
        b = init_seq(30, 12, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            npt.assert_array_equal(pa, pb)

    def test_forget_bias_one_rest_zero(self):
        rng = np.random.default_rng(0)
        p = init_lstm_cell(30, 8, rng)
        npt.assert_array_equal(p.gate_view("f", "b"), np.ones(8))
        for name in "iog":
            npt.assert_array_equal(p.gate_view(name, "b"), np.zeros(8))

    def test_glorot_bounds_per_block(self):
        rng = np.random.default_rng(1)
        p = init_lstm_cell(30, 8, rng)
        assert np.all(np.abs(p.weights_x) <= math.sqrt(6.0 / 38.0))
        assert np.all(np.abs(p.weights_h) <= math.sqrt(6.0 / 16.0))

    def test_invalid_dims(self):
        with pytest.raises(ConfigError):
            init_lstm_cell(0, 4, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            init_seq(30, 0, seed=1)


class TestSeqBatch:
    def test_nonzero_padding_rejected(self):
        values = np.full((1, 3, 2), 0.5)
        with pytest.raises(ConfigError):
            SeqBatch(values=values, true_lengths=np.array([2]))

    def test_out_of_range_values_rejected(self):
        values = np.full((1, 2, 2), 1.5)
        with pytest.raises(ConfigError):
            SeqBatch(values=values, true_lengths=np.array([2]))

    def test_bad_lengths_rejected(self):
        values = np.zeros((2, 3, 2))
        with pytest.raises(ConfigError):
            SeqBatch(values=values, true_lengths=np.array([0, 3]))
        with pytest.raises(ConfigError):
            SeqBatch(values=values, true_lengths=np.array([1, 4]))

    def test_step_mask(self):
        batch = unit_batch(np.random.default_rng(2), 2, 4, 3, lengths=[1, 3])
        mask = batch.step_mask()
        assert mask.shape == (4, 2, 1)
        npt.assert_array_equal(mask[:, 0, 0], [1, 0, 0, 0])
        npt.assert_array_equal(mask[:, 1, 0], [1, 1, 1, 0])


class TestEncode:
    def test_t1_equals_single_step(self):
        model = init_seq(30, 5, seed=7)
        batch = unit_batch(np.random.default_rng(3), 4, 1, 30)
        emb = encode(model, batch)
        h, _ = lstm_step(model.encoder, batch.values[:, 0, :],
                         np.zeros((4, 5)), np.zeros((4, 5)))
        npt.assert_allclose(emb, h, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("t", [1, 3, 9])
    def test_fixed_width_for_any_length(self, t):
        model = init_seq(30, 96, seed=1)
        batch = unit_batch(np.random.default_rng(4), 2, t, 30)
        assert encode(model, batch).shape == (2, 96)

    def test_manual_unroll_t5(self):
        model = init_seq(30, 6, seed=9)
        batch = unit_batch(np.random.default_rng(5), 3, 5, 30)
        h = np.zeros((3, 6))
        c = np.zeros((3, 6))
        for t in range(5):
            h, c = lstm_step(model.encoder, batch.values[:, t, :], h, c)
        npt.assert_allclose(encode(model, batch), h, rtol=0, atol=1e-12)

    def test_permutation_equivariance(self):
        model = init_seq(30, 4, seed=11)
        batch = unit_batch(np.random.default_rng(6), 6, 4, 30,
                           lengths=[4, 2, 3, 1, 4, 2])
        perm = np.array([3, 0, 5, 1, 4, 2])
        emb = encode(model, batch)
        permuted = SeqBatch(values=batch.values[perm],
                            true_lengths=batch.true_lengths[perm])
        npt.assert_array_equal(encode(model, permuted), emb[perm])

    def test_masked_encode_equals_truncated(self):
        model = init_seq(30, 5, seed=13)
        rng = np.random.default_rng(7)
        batch = unit_batch(rng, 3, 8, 30, lengths=[2, 8, 5])
        masked = encode(model, batch, mask_padding=True)
        for s, length in enumerate([2, 8, 5]):
            solo = SeqBatch(values=batch.values[s:s + 1, :length, :],
                            true_lengths=np.array([length]))
            npt.assert_allclose(masked[s], encode(model, solo)[0],
                                rtol=0, atol=1e-12)

    def test_long_sequence_stays_finite(self):
        model = init_seq(30, 8, seed=17)
        batch = unit_batch(np.random.default_rng(8), 2, 2000, 30)
        emb = encode(model, batch)
        assert np.all(np.isfinite(emb))


class TestDecode:
    def test_zero_model_gives_half(self):
        model = init_seq(30, 4, seed=0)
        for p in model.parameters():
            p[...] = 0.0
        out = decode(model, np.zeros((2, 4)), 3)
        npt.assert_array_equal(out, np.full((2, 3, 30), 0.5))

    def test_output_shape(self):
        model = init_seq(30, 12, seed=2)
        emb = np.random.default_rng(9).random((2, 12))
        assert decode(model, emb, 64).shape == (2, 64, 30)

    def test_manual_unroll_t3(self):
        model = init_seq(30, 5, seed=3)
        emb = np.random.default_rng(10).random((2, 5))
        h = np.zeros((2, 5))
        c = np.zeros((2, 5))
        rows = []
        for _ in range(3):
            h, c = lstm_step(model.decoder, emb, h, c)
            pre = h @ model.out_proj.weights + model.out_proj.bias
            rows.append(1.0 / (1.0 + np.exp(-pre)))
        expected = np.stack(rows, axis=1)
        npt.assert_allclose(decode(model, emb, 3), expected, rtol=0, atol=1e-12)

    def test_zero_steps_rejected(self):
        model = init_seq(30, 5, seed=3)
        with pytest.raises(ConfigError):
            decode(model, np.zeros((1, 5)), 0)


def seq_loss_and_grad(model, batch, mask_padding):
    params = model.parameters()

    def f(flat):
        write_flat(params, flat)
        loss, grads = seq_forward_backward(model, batch, mask_padding)
        return loss, flatten_arrays(grads)

    return f, flatten_arrays(params)


class TestSeqBackward:
    def test_grad_check_unmasked(self):
        model = init_seq(30, 6, seed=23)
        batch = unit_batch(np.random.default_rng(11), 3, 4, 30)
        f, p0 = seq_loss_and_grad(model, batch, mask_padding=False)
        assert grad_check(f, p0) < 1e-5

    def test_grad_check_masked(self):
        model = init_seq(30, 6, seed=29)
        batch = unit_batch(np.random.default_rng(12), 3, 4, 30,
                           lengths=[2, 4, 1])
        f, p0 = seq_loss_and_grad(model, batch, mask_padding=True)
        assert grad_check(f, p0) < 1e-5

    def test_perfect_reconstruction_zero_grads(self):
        # A fully zeroed model reconstructs 0.5 everywhere; a batch of
        # 0.5s is therefore its exact loss minimum.
        model = init_seq(30, 4, seed=0)
        for p in model.parameters():
            p[...] = 0.0
        batch = SeqBatch(values=np.full((2, 3, 30), 0.5),
                         true_lengths=np.array([3, 3]))
        loss, grads = seq_forward_backward(model, batch)
        assert loss == 0.0
        for g in grads:
            npt.assert_allclose(g, np.zeros_like(g), rtol=0, atol=1e-10)

    def test_masked_loss_equals_truncated_unmasked(self):
        model = init_seq(30, 5, seed=31)
        rng = np.random.default_rng(13)
        values = np.zeros((3, 6, 30))
        values[:, 0, :] = rng.random((3, 30))
        batch = SeqBatch(values=values, true_lengths=np.array([1, 1, 1]))
        masked_loss, _ = seq_forward_backward(model, batch, mask_padding=True)
        truncated = SeqBatch(values=values[:, :1, :],
                             true_lengths=np.array([1, 1, 1]))
        unmasked_loss, _ = seq_forward_backward(model, truncated,
                                                mask_padding=False)
        npt.assert_allclose(masked_loss, unmasked_loss, rtol=0, atol=1e-12)

    def test_gradient_step_decreases_loss(self):
        for trial in range(5):
            model = init_seq(30, 4, seed=300 + trial)
            batch = unit_batch(np.random.default_rng(400 + trial), 6, 3, 30)
            before, grads = seq_forward_backward(model, batch)
            for p, g in zip(model.parameters(), grads):
                p -= 1e-2 * g
            after, _ = seq_forward_backward(model, batch)
            assert after < before


class TestReconstruct:
    def test_matches_encode_decode(self):
        model = init_seq(30, 5, seed=37)
        batch = unit_batch(np.random.default_rng(14), 2, 4, 30)
        recon, loss = seq_reconstruct(model, batch)
        manual = decode(model, encode(model, batch), 4)
        npt.assert_allclose(recon, manual, rtol=0, atol=1e-12)
        diff = recon - batch.values
        npt.assert_allclose(loss, np.mean(diff * diff), rtol=0, atol=1e-15)

    def test_feature_mismatch_rejected(self):
        model = init_seq(30, 5, seed=37)
        bad = unit_batch(np.random.default_rng(15), 2, 4, 7)
        with pytest.raises(ShapeError):
            seq_reconstruct(model, bad)
