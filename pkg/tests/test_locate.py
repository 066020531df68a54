"""Localization tests against independent brute-force oracles.

The oracles re-derive every aggregation with plain Python loops, separate
from the numpy implementations they check.
"""

import numpy as np
import pytest

import weakloc.localization as loc
from weakloc import bpe
from weakloc import minilang as ml
from weakloc.bpe import SubtokenEncoding
from weakloc.exceptions import (
    EmptyHeadSet,
    HeadIndexOutOfRange,
    NoBuggyExamples,
    WindowTooLarge,
)
from weakloc.model import ForwardTrace, ModelConfig, Parameters, forward


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def brute_locate(v, n):
    best_k, best_sum = 0, None
    for k in range(len(v) - n + 1):
        total = sum(v[k : k + n])
        if best_sum is None or total > best_sum:
            best_k, best_sum = k, total
    return best_k


def brute_top_k(v, n, k):
    sums = [(sum(v[i : i + n]), i) for i in range(len(v) - n + 1)]
    order = sorted(range(len(sums)), key=lambda i: (-sums[i][0], i))
    chosen, used = [], set()
    for i in order:
        if len(chosen) == k:
            break
        window = set(range(i, i + n))
        if window & used:
            continue
        used |= window
        chosen.append((i, sums[i][0]))
    return chosen


def brute_subtoken_sum(alpha_prime, spans):
    return [sum(alpha_prime[a : b + 1]) for a, b in spans]


# ---------------------------------------------------------------------------
# Head aggregation
# ---------------------------------------------------------------------------


class TestAggHeadAverage:
    def test_single_head_is_identity(self):
        rows = np.array([[0.3, 0.7]])
        np.testing.assert_allclose(loc.agg_head_average(rows), [0.3, 0.7])

    def test_two_heads_by_hand(self):
        rows = np.array([[0.2, 0.8], [0.6, 0.4]])
        np.testing.assert_allclose(loc.agg_head_average(rows), [0.4, 0.6])

    def test_identical_heads_collapse(self):
        rows = np.tile([0.25, 0.5, 0.25], (4, 1))
        np.testing.assert_allclose(loc.agg_head_average(rows), [0.25, 0.5, 0.25])

    def test_preserves_unit_mass(self):
        rng = np.random.default_rng(0)
        rows = rng.dirichlet(np.ones(9), size=5)
        assert abs(loc.agg_head_average(rows).sum() - 1.0) < 1e-12


class TestAggHeadSubset:
    def test_singleton_is_exact_row(self):
        rows = np.array([[0.2, 0.8], [0.6, 0.4], [0.9, 0.1]])
        np.testing.assert_array_equal(loc.agg_head_subset(rows, [1]), rows[1])

    def test_full_set_equals_average(self):
        rng = np.random.default_rng(1)
        rows = rng.dirichlet(np.ones(7), size=4)
        np.testing.assert_allclose(
            loc.agg_head_subset(rows, range(4)), loc.agg_head_average(rows), atol=1e-15
        )

    def test_pair_by_hand(self):
        rows = np.array([[0.2, 0.8], [0.6, 0.4], [0.9, 0.1]])
        np.testing.assert_allclose(loc.agg_head_subset(rows, [0, 1]), [0.4, 0.6])

    def test_errors(self):
        rows = np.array([[0.5, 0.5]])
        with pytest.raises(EmptyHeadSet):
            loc.agg_head_subset(rows, [])
        with pytest.raises(HeadIndexOutOfRange):
            loc.agg_head_subset(rows, [1])


class TestAggSubtoken:
    def test_one_to_one_alignment_is_identity(self):
        enc = SubtokenEncoding(ids=[5, 6, 7], spans=[(0, 0), (1, 1), (2, 2)], token_count=3)
        np.testing.assert_allclose(loc.agg_subtoken([0.2, 0.3, 0.5], enc), [0.2, 0.3, 0.5])

    def test_span_sum_by_hand(self):
        enc = SubtokenEncoding(ids=[5, 6, 7], spans=[(0, 0), (1, 2)], token_count=2)
        np.testing.assert_allclose(loc.agg_subtoken([0.2, 0.3, 0.5], enc), [0.2, 0.8])

    def test_conservation_against_oracle(self, small_vocab):
        rng = np.random.default_rng(2)
        for seed in range(30):
            tokens = ml.generate_function(seed).tokens
            enc = bpe.encode(small_vocab, tokens)
            alpha = rng.dirichlet(np.ones(len(enc.ids)))
            v = loc.agg_subtoken(alpha, enc)
            np.testing.assert_allclose(v, brute_subtoken_sum(alpha.tolist(), enc.spans), atol=1e-12)
            assert abs(v.sum() - alpha.sum()) < 1e-12

    def test_length_mismatch_rejected(self):
        enc = SubtokenEncoding(ids=[1, 2], spans=[(0, 0), (1, 1)], token_count=2)
        with pytest.raises(ValueError):
            loc.agg_subtoken([0.1], enc)


class TestLocate:
    def test_hand_examples(self):
        assert loc.locate([0.1, 0.5, 0.2, 0.2], 1) == 1
        assert loc.locate([0.1, 0.5, 0.2, 0.2], 2) == 1  # sums 0.6, 0.7, 0.4
        assert loc.locate([0.25, 0.25, 0.25, 0.25], 1) == 0  # tie -> lowest

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            v = rng.random(rng.integers(1, 30))
            for n in (1, 2, 3):
                if n <= len(v):
                    assert loc.locate(v, n) == brute_locate(v.tolist(), n)

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(4)
        v = rng.random(20)
        for scale in (1e-6, 3.0, 1e6):
            assert loc.locate(v * scale, 3) == loc.locate(v, 3)

    def test_window_too_large(self):
        with pytest.raises(WindowTooLarge):
            loc.locate([0.5, 0.5], 3)
        with pytest.raises(ValueError):
            loc.locate([0.5], 0)


class TestTopKWindows:
    def test_k1_equals_locate(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            v = rng.random(12)
            for n in (1, 2):
                (top,) = loc.top_k_windows(v, n, 1)
                assert top.start == loc.locate(v, n)

    def test_hand_example(self):
        windows = loc.top_k_windows([0.4, 0.1, 0.5], 1, 2)
        assert [w.start for w in windows] == [2, 0]

    def test_matches_brute_force_with_overlap_suppression(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            v = rng.random(rng.integers(2, 25))
            for n in (1, 2, 3):
                if n > len(v):
                    continue
                k = int(rng.integers(1, 6))
                got = [(w.start, w.score) for w in loc.top_k_windows(v, n, k)]
                want = brute_top_k(v.tolist(), n, k)
                assert [g[0] for g in got] == [w[0] for w in want]
                for (_, g_score), (_, w_score) in zip(got, want):
                    assert abs(g_score - w_score) < 1e-12

    def test_scores_strictly_ordered_with_tie_rule(self):
        windows = loc.top_k_windows([0.3, 0.3, 0.3, 0.3], 1, 4)
        assert [w.start for w in windows] == [0, 1, 2, 3]

    def test_hit_rate_monotone_in_k(self):
        rng = np.random.default_rng(7)
        v = rng.random(15)
        target = 9
        hit = [
            any(w.start <= target <= w.start + w.length - 1 for w in loc.top_k_windows(v, 1, k))
            for k in range(1, 16)
        ]
        assert hit == sorted(hit)


# ---------------------------------------------------------------------------
# End-to-end localization
# ---------------------------------------------------------------------------


def force_verdict(params: Parameters, buggy: bool):
    """Pin the classifier output by saturating the head bias."""
    params = params.copy()
    params.tensors["cls_head.w"][:] = 0.0
    params.tensors["cls_head.b"][:] = [-20.0, 20.0] if buggy else [20.0, -20.0]
    return params


@pytest.fixture()
def profiling_params(small_vocab) -> Parameters:
    # long enough position table for full-size generated functions
    config = ModelConfig(
        vocab_size=small_vocab.size, layer_count=1, head_count=2, model_dim=8,
        ff_dim=16, max_len=160, dropout_rate=0.0, precision="float64",
    )
    return Parameters.initialize(config, seed=3)


class TestLocalize:
    def test_clean_short_circuit(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=False)
        tokens = ml.generate_function(31).tokens[:10]
        result = loc.localize(params, small_vocab, tokens)
        assert result.verdict == "clean"
        assert result.window is None
        assert result.topk == []
        assert result.token_scores == []
        assert result.line_scores is None

    def test_buggy_equals_manual_composition(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=True)
        tokens = ml.generate_function(32).tokens[:12]
        result = loc.localize(params, small_vocab, tokens, window_size=2, top_k=3)
        enc = bpe.encode(small_vocab, tokens)
        trace = forward(params, enc)
        rows = loc.cls_attention_rows(trace)
        v = loc.agg_subtoken(loc.agg_head_average(rows), enc)
        assert result.window.start == loc.locate(v, 2)
        np.testing.assert_allclose(result.token_scores, v, atol=1e-15)
        assert [w.start for w in result.topk] == [w.start for w in loc.top_k_windows(v, 2, 3)]

    def test_single_equals_subset_singleton(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=True)
        tokens = ml.generate_function(33).tokens[:10]
        a = loc.localize(params, small_vocab, tokens, head_mode="single", heads=1)
        b = loc.localize(params, small_vocab, tokens, head_mode="subset", heads=[1])
        assert a.token_scores == b.token_scores
        assert a.window == b.window

    def test_subset_all_equals_average(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=True)
        tokens = ml.generate_function(34).tokens[:10]
        nh = params.config.head_count
        a = loc.localize(params, small_vocab, tokens, head_mode="subset", heads=range(nh))
        b = loc.localize(params, small_vocab, tokens, head_mode="average")
        np.testing.assert_allclose(a.token_scores, b.token_scores, atol=1e-12)

    def test_importance_conserves_payload_mass(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=True)
        tokens = ml.generate_function(35).tokens[:10]
        result = loc.localize(params, small_vocab, tokens)
        assert abs(sum(result.token_scores) - 1.0) < 1e-9

    def test_line_scores_emitted_on_request(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=True)
        fn = ml.generate_function(36)
        tokens, line_map = fn.tokens[:10], fn.line_map[:10]
        result = loc.localize(params, small_vocab, tokens, line_map=line_map)
        assert result.line_scores is not None
        assert abs(sum(result.line_scores) - sum(result.token_scores)) < 1e-12

    def test_result_json_schema(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=True)
        tokens = ml.generate_function(37).tokens[:8]
        payload = loc.localize(params, small_vocab, tokens, top_k=2).to_json_dict()
        assert set(payload) == {"verdict", "p", "window", "topk", "token_scores", "line_scores"}
        assert set(payload["window"]) == {"start", "len"}
        assert all(set(w) == {"start", "len", "score"} for w in payload["topk"])


class TestCleanShortCircuitNeverCarriesWindows:
    def test_over_random_inputs(self, small_vocab, tiny_params):
        params = force_verdict(tiny_params, buggy=False)
        for seed in range(20):
            tokens = ml.generate_function(seed).tokens[:10]
            result = loc.localize(params, small_vocab, tokens)
            assert result.verdict == "clean" and result.window is None and not result.topk


# ---------------------------------------------------------------------------
# Head profiling
# ---------------------------------------------------------------------------


def synthetic_trace(n_heads, length, peak_positions, p1=0.9):
    """Fabricated attention where head h peaks at peak_positions[h]."""
    attention = np.full((n_heads, length + 1, length + 1), 1e-6)
    for h, pos in enumerate(peak_positions):
        attention[h, 0, 1 + pos] = 1.0
    attention /= attention.sum(-1, keepdims=True)
    return ForwardTrace(
        hidden=np.zeros((length + 1, 4)), attention=attention, p=np.array([1 - p1, p1])
    )


class TestRankHeads:
    def test_constructed_peaks_give_perfect_and_poor_heads(self, small_vocab, tiny_params, monkeypatch):
        examples = []
        config = ml.DatasetConfig(train_size=2, valid_size=30, test_size=2, mix={"bound": 1.0}, seed=5)
        examples = [e for e in ml.build_dataset(config).valid if e.label == 1]

        def fake_forward(params, encoding):
            # head 0 always on the bug, head 1 always on token 0
            example = next(
                e for e in examples if len(bpe.encode(small_vocab, e.tokens).ids) == len(encoding.ids)
            )
            return synthetic_trace(2, len(encoding.ids), [example.bug_span[0], 0])

        monkeypatch.setattr(loc, "forward", fake_forward)
        profile = loc.rank_heads(tiny_params, small_vocab, examples, sample_cap=10, seed=1)
        assert profile.accuracies[0] == 1.0
        assert profile.ranking[0] == 0

    def test_deterministic(self, small_vocab, profiling_params, small_splits):
        params = force_verdict(profiling_params, buggy=True)
        p1 = loc.rank_heads(params, small_vocab, small_splits.valid, sample_cap=12, seed=3)
        p2 = loc.rank_heads(params, small_vocab, small_splits.valid, sample_cap=12, seed=3)
        assert p1 == p2

    def test_no_buggy_examples_rejected(self, small_vocab, profiling_params, small_splits):
        clean_only = [e for e in small_splits.valid if e.label == 0]
        with pytest.raises(NoBuggyExamples):
            loc.rank_heads(profiling_params, small_vocab, clean_only)

    def test_sample_cap_respected(self, small_vocab, profiling_params, small_splits):
        params = force_verdict(profiling_params, buggy=True)
        profile = loc.rank_heads(params, small_vocab, small_splits.valid, sample_cap=5, seed=0)
        assert profile.sample_size == 5


class TestSelectTopKHeads:
    PROFILE = loc.HeadProfile(
        accuracies=[0.3, 0.9, 0.5], ranking=[1, 2, 0], window_size=1, sample_size=10, seed=0
    )

    def test_argmax(self):
        assert loc.select_top_k_heads(self.PROFILE, 1) == [1]

    def test_top_two(self):
        assert loc.select_top_k_heads(self.PROFILE, 2) == [1, 2]

    def test_full_set(self):
        assert loc.select_top_k_heads(self.PROFILE, 3) == [0, 1, 2]

    def test_ties_break_to_lower_index(self):
        profile = loc.HeadProfile(
            accuracies=[0.5, 0.5, 0.2], ranking=[0, 1, 2], window_size=1, sample_size=4, seed=0
        )
        assert loc.select_top_k_heads(profile, 1) == [0]

    def test_range_errors(self):
        with pytest.raises(HeadIndexOutOfRange):
            loc.select_top_k_heads(self.PROFILE, 0)
        with pytest.raises(HeadIndexOutOfRange):
            loc.select_top_k_heads(self.PROFILE, 4)


class TestLineScores:
    def test_one_token_per_line_matches_token_ranking(self):
        v = [0.2, 0.5, 0.3]
        scores = loc.line_scores(v, [0, 1, 2])
        np.testing.assert_allclose(scores, v)
        assert loc.rank_lines(scores) == [1, 2, 0]

    def test_hand_sum(self):
        np.testing.assert_allclose(loc.line_scores([0.1, 0.2, 0.7], [0, 0, 1]), [0.3, 0.7])

    def test_conservation(self):
        rng = np.random.default_rng(8)
        v = rng.random(12)
        lines = sorted(rng.integers(0, 4, size=12).tolist())
        assert abs(loc.line_scores(v, lines).sum() - v.sum()) < 1e-12

    def test_rank_ties_go_to_earlier_line(self):
        assert loc.rank_lines([0.5, 0.5, 0.1]) == [0, 1, 2]
