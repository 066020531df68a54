"""Forward-pass tests: attention math, normalization invariants, heads."""

import math

import numpy as np
import pytest

from weakloc import bpe
from weakloc import minilang as ml
from weakloc import model as nn
from weakloc.exceptions import ConfigError, SequenceTooLong
from weakloc.model import ModelConfig, Parameters


class TestScaledSelfAttention:
    def test_single_position_attends_to_itself(self):
        q = np.array([[1.0, 2.0]])
        out, alpha = nn.scaled_self_attention(q, q, np.array([[3.0, 4.0]]), d_head=2)
        np.testing.assert_allclose(alpha, [[1.0]])
        np.testing.assert_allclose(out, [[3.0, 4.0]])

    def test_zero_queries_give_uniform_rows(self):
        Q = np.zeros((2, 3))
        K = np.random.default_rng(0).normal(size=(2, 3))
        V = np.array([[1.0, 0.0], [0.0, 1.0]])
        out, alpha = nn.scaled_self_attention(Q, K, V, d_head=3)
        np.testing.assert_allclose(alpha, 0.5 * np.ones((2, 2)))
        np.testing.assert_allclose(out, 0.5 * np.ones((2, 2)))

    def test_hand_computed_softmax_row(self):
        # d_head=1 and raw logits (1, 0): row = (e/(e+1), 1/(e+1))
        Q = np.array([[1.0]])
        K = np.array([[1.0], [0.0]])
        V = np.array([[1.0], [2.0]])
        _, alpha = nn.scaled_self_attention(Q, K, V, d_head=1)
        e = math.e
        np.testing.assert_allclose(alpha, [[e / (e + 1), 1 / (e + 1)]], atol=1e-10)
        np.testing.assert_allclose(alpha, [[0.7311, 0.2689]], atol=1e-4)

    def test_rows_stochastic_and_output_is_alpha_v(self):
        rng = np.random.default_rng(1)
        Q, K, V = rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 5, 4))
        out, alpha = nn.scaled_self_attention(Q, K, V, d_head=4)
        np.testing.assert_allclose(alpha.sum(-1), np.ones((3, 5)), atol=1e-12)
        np.testing.assert_allclose(out, alpha @ V, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            nn.scaled_self_attention(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 3)), 3)
        with pytest.raises(ValueError):
            nn.scaled_self_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)), 3)


class TestMultiHead:
    def test_single_head_equals_plain_attention(self):
        rng = np.random.default_rng(2)
        d = 6
        X = rng.normal(size=(4, d))
        w_q, w_k, w_v = (rng.normal(size=(d, d)) for _ in range(3))
        w_o = np.eye(d)
        out, alpha = nn.multi_head(X, w_q, w_k, w_v, w_o, head_count=1)
        ref_out, ref_alpha = nn.scaled_self_attention(X @ w_q, X @ w_k, X @ w_v, d)
        np.testing.assert_allclose(out, ref_out, atol=1e-12)
        np.testing.assert_allclose(alpha[0], ref_alpha, atol=1e-12)

    def test_output_shape_preserved(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(5, 8))
        ws = [rng.normal(size=(8, 8)) for _ in range(4)]
        out, alpha = nn.multi_head(X, *ws, head_count=4)
        assert out.shape == X.shape
        assert alpha.shape == (4, 5, 5)

    def test_identity_output_projection_concatenates_heads(self):
        rng = np.random.default_rng(4)
        d = 4
        X = rng.normal(size=(2, d))
        w_q, w_k, w_v = (rng.normal(size=(d, d)) for _ in range(3))
        out, _ = nn.multi_head(X, w_q, w_k, w_v, np.eye(d), head_count=2)
        qh = (X @ w_q).reshape(2, 2, 2).transpose(1, 0, 2)
        kh = (X @ w_k).reshape(2, 2, 2).transpose(1, 0, 2)
        vh = (X @ w_v).reshape(2, 2, 2).transpose(1, 0, 2)
        per_head = [nn.scaled_self_attention(qh[h], kh[h], vh[h], 2)[0] for h in range(2)]
        np.testing.assert_allclose(out, np.concatenate(per_head, axis=1), atol=1e-12)


class TestLayerNorm:
    def test_normalizes_before_gain_bias(self):
        rng = np.random.default_rng(5)
        x = rng.normal(3.0, 2.5, size=(4, 7, 16))
        out, (xhat, inv, gain) = nn.layer_norm_forward(x, 1.0, 0.0)
        np.testing.assert_allclose(xhat.mean(-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(xhat.var(-1), 1.0, atol=1e-4)
        np.testing.assert_allclose(out, xhat, atol=1e-12)


class TestForward:
    def test_probability_and_attention_normalization(self, small_vocab, tiny_params):
        tokens = ml.generate_function(21).tokens[:10]
        trace = nn.forward(tiny_params, bpe.encode(small_vocab, tokens))
        assert trace.p.shape == (2,)
        assert abs(trace.p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(trace.attention.sum(-1), 1.0, atol=1e-9)

    def test_forward_is_bit_deterministic(self, small_vocab, tiny_params):
        enc = bpe.encode(small_vocab, ml.generate_function(22).tokens[:8])
        t1 = nn.forward(tiny_params, enc)
        t2 = nn.forward(tiny_params, enc)
        assert np.array_equal(t1.p, t2.p)
        assert np.array_equal(t1.hidden, t2.hidden)
        assert np.array_equal(t1.attention, t2.attention)

    def test_attention_tensor_shape(self, small_vocab, tiny_params):
        enc = bpe.encode(small_vocab, ml.generate_function(23).tokens[:6])
        trace = nn.forward(tiny_params, enc)
        T = len(enc.ids) + 1
        assert trace.attention.shape == (tiny_params.config.head_count, T, T)

    def test_padding_does_not_change_results(self, small_vocab, tiny_params):
        # a short example inside a padded batch computes the same probs as alone
        enc_short = bpe.encode(small_vocab, ml.generate_function(24).tokens[:4])
        enc_long = bpe.encode(small_vocab, ml.generate_function(25).tokens[:12])
        alone = nn.predict_probs(tiny_params, [enc_short])
        batched = nn.predict_probs(tiny_params, [enc_short, enc_long])
        np.testing.assert_allclose(alone[0], batched[0], atol=1e-12)

    def test_sequence_too_long(self, small_vocab, tiny_params):
        tokens = ml.generate_function(26).tokens
        enc = bpe.encode(small_vocab, tokens)
        assert len(enc.ids) + 1 > tiny_params.config.max_len
        with pytest.raises(SequenceTooLong):
            nn.forward(tiny_params, enc)


class TestDetect:
    def test_verdict_rule(self):
        assert nn.verdict_from_probs((0.1, 0.9)) == 1
        assert nn.verdict_from_probs((0.9, 0.1)) == 0
        # the tie goes to buggy: the comparison is inclusive
        assert nn.verdict_from_probs((0.5, 0.5)) == 1

    def test_detect_matches_forward(self, small_vocab, tiny_params):
        enc = bpe.encode(small_vocab, ml.generate_function(27).tokens[:8])
        label, p = nn.detect(tiny_params, enc)
        trace = nn.forward(tiny_params, enc)
        assert label == nn.verdict_from_probs(trace.p)
        np.testing.assert_allclose(p, trace.p)


class TestLossDetection:
    def test_perfect_prediction_is_zero(self):
        assert nn.loss_detection((0.0, 1.0), 1) == 0.0

    def test_half_probability_is_ln2(self):
        assert abs(nn.loss_detection((0.5, 0.5), 1) - math.log(2.0)) < 1e-12

    def test_exp_minus_one_gives_unit_loss(self):
        p0 = math.exp(-1.0)
        assert abs(nn.loss_detection((p0, 1 - p0), 0) - 1.0) < 1e-12

    def test_clamped_at_zero_probability(self):
        loss = nn.loss_detection((1.0, 0.0), 1)
        assert loss == pytest.approx(-math.log(nn.PROB_CLAMP))


class TestConfigValidation:
    def test_zero_layers_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=32, layer_count=0)

    def test_dim_head_divisibility(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=32, model_dim=10, head_count=4)

    def test_bad_precision(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=32, precision="float16")


class TestParameters:
    def test_initialization_deterministic(self):
        cfg = ModelConfig(vocab_size=40, layer_count=1, head_count=2, model_dim=8, ff_dim=16)
        a = Parameters.initialize(cfg, seed=9)
        b = Parameters.initialize(cfg, seed=9)
        for name in a.names():
            assert np.array_equal(a[name], b[name])

    def test_expected_tensor_inventory(self):
        cfg = ModelConfig(vocab_size=40, layer_count=2, head_count=2, model_dim=8, ff_dim=16)
        names = list(nn.tensor_shapes(cfg))
        assert names[0] == "tok_emb"
        assert "layers.1.attn.w_o" in names
        assert names[-4:] == ["cls_head.w", "cls_head.b", "mlm_head.w", "mlm_head.b"]

    def test_layer_norm_init_is_identity(self):
        cfg = ModelConfig(vocab_size=40, layer_count=1, head_count=2, model_dim=8, ff_dim=16)
        params = Parameters.initialize(cfg, seed=0)
        np.testing.assert_array_equal(params["layers.0.ln1.gain"], np.ones(8))
        np.testing.assert_array_equal(params["layers.0.ln1.bias"], np.zeros(8))
