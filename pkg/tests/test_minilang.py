"""Generator and mutation-injection tests.

The mutation soundness checks use a plain token-diff oracle: compare the
mutated sequence against its origin position by position.
"""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakloc import minilang as ml
from weakloc.exceptions import ConfigError, NoMutationSite

seeds = st.integers(min_value=0, max_value=2**40)


def token_diff(a: list[str], b: list[str]) -> list[int]:
    assert len(a) == len(b)
    return [i for i, (x, y) in enumerate(zip(a, b)) if x != y]


class TestGenerateFunction:
    def test_deterministic(self):
        assert ml.generate_function(7).tokens == ml.generate_function(7).tokens

    def test_different_seeds_differ(self):
        assert ml.generate_function(7).tokens != ml.generate_function(8).tokens

    def test_contains_toggleable_comparison(self):
        for seed in range(50):
            fn = ml.generate_function(seed)
            assert any(t in ("<", "<=", ">", ">=") for t in fn.tokens)

    @given(seed=seeds)
    @settings(max_examples=150, deadline=None)
    def test_structural_guarantees(self, seed):
        fn = ml.generate_function(seed)
        assert len(fn.tokens) <= ml.SizeConfig().max_tokens
        assert fn.mutable_cmp_positions()
        assert fn.arith_positions
        assert any(len(set(u.in_scope)) >= 2 for u in fn.var_uses)

    @given(seed=seeds)
    @settings(max_examples=150, deadline=None)
    def test_position_metadata_points_at_right_tokens(self, seed):
        fn = ml.generate_function(seed)
        for p in fn.cmp_positions:
            assert fn.tokens[p] in ml.COMPARISON_OPS
        for p in fn.arith_positions:
            assert fn.tokens[p] in ml.ARITHMETIC_OPS
        for use in fn.var_uses:
            assert fn.tokens[use.pos] in ml.IDENTIFIER_POOL
            assert fn.tokens[use.pos] in use.in_scope
        for p in fn.var_defs:
            assert fn.tokens[p] in ml.IDENTIFIER_POOL

    @given(seed=seeds)
    @settings(max_examples=150, deadline=None)
    def test_line_map_total_and_monotone(self, seed):
        fn = ml.generate_function(seed)
        assert len(fn.line_map) == len(fn.tokens)
        assert all(b >= a for a, b in zip(fn.line_map, fn.line_map[1:]))

    def test_grammar_brackets_balance(self):
        for seed in range(100):
            fn = ml.generate_function(seed)
            assert fn.tokens[0] == "fn"
            assert fn.tokens[-1] == "}"
            depth = 0
            for t in fn.tokens:
                depth += t == "{"
                depth -= t == "}"
                assert depth >= 0
            assert depth == 0

    def test_size_config_validation(self):
        with pytest.raises(ConfigError):
            ml.SizeConfig(n_params=(3, 2))
        with pytest.raises(ConfigError):
            ml.SizeConfig(max_tokens=10)


class TestInjectors:
    @pytest.mark.parametrize(
        "inject, table",
        [
            (ml.inject_bound_error, ml.BOUND_TOGGLE),
            (ml.inject_biop_misuse, ml.BIOP_SWAP),
        ],
    )
    def test_operator_swap_follows_table(self, inject, table):
        fn = ml.generate_function(5)
        ex = inject(fn, seed=9)
        (pos,) = token_diff(fn.tokens, ex.tokens)
        assert ex.bug_span == (pos, pos)
        assert ex.tokens[pos] == table[fn.tokens[pos]]

    def test_bound_toggle_is_equality_flip(self):
        # `i < n` becomes `i <= n` at the same site, everything else intact
        fn = ml.generate_function(5)
        ex = ml.inject_bound_error(fn, seed=9)
        pos = ex.bug_span[0]
        before, after = fn.tokens[pos], ex.tokens[pos]
        assert {before, after} in ({"<", "<="}, {">", ">="})

    def test_var_misuse_replacement_in_scope(self):
        for seed in range(40):
            fn = ml.generate_function(seed)
            ex = ml.inject_var_misuse(fn, seed=seed)
            pos = ex.bug_span[0]
            use = next(u for u in fn.var_uses if u.pos == pos)
            assert ex.tokens[pos] != fn.tokens[pos]
            assert ex.tokens[pos] in use.in_scope

    @pytest.mark.parametrize(
        "inject", [ml.inject_bound_error, ml.inject_biop_misuse, ml.inject_var_misuse]
    )
    def test_deterministic(self, inject):
        fn = ml.generate_function(12)
        assert inject(fn, seed=3).tokens == inject(fn, seed=3).tokens

    @pytest.mark.parametrize(
        "inject", [ml.inject_bound_error, ml.inject_biop_misuse, ml.inject_var_misuse]
    )
    @given(seed=seeds)
    @settings(max_examples=120, deadline=None)
    def test_single_token_diff_at_span(self, inject, seed):
        fn = ml.generate_function(seed)
        ex = inject(fn, seed=seed)
        diff = token_diff(fn.tokens, ex.tokens)
        assert diff == [ex.bug_span[0]]
        assert ex.bug_span[0] == ex.bug_span[1]
        assert ex.label == 1
        assert ex.line_map == fn.line_map

    def test_no_mutation_site(self):
        fn = ml.generate_function(1)
        bare = ml.MiniFunction(
            tokens=list(fn.tokens), var_defs=[], var_uses=[],
            cmp_positions=[], arith_positions=[], line_map=list(fn.line_map),
        )
        with pytest.raises(NoMutationSite):
            ml.inject_bound_error(bare, seed=0)
        with pytest.raises(NoMutationSite):
            ml.inject_biop_misuse(bare, seed=0)
        with pytest.raises(NoMutationSite):
            ml.inject_var_misuse(bare, seed=0)


class TestLabeledExample:
    def test_label_span_consistency_enforced(self):
        fn = ml.generate_function(2)
        with pytest.raises(ValueError):
            ml.LabeledExample(
                id="x", tokens=fn.tokens, label=1, bug_kind="none",
                bug_span=None, origin_id="y", line_map=fn.line_map,
            )
        with pytest.raises(ValueError):
            ml.LabeledExample(
                id="x", tokens=fn.tokens, label=0, bug_kind="bound",
                bug_span=(0, 0), origin_id="y", line_map=fn.line_map,
            )

    def test_record_field_order(self):
        fn = ml.generate_function(2)
        ex = ml.clean_example(fn, "ex", "fn0")
        assert list(ex.to_record()) == [
            "id", "tokens", "label", "bug_kind", "bug_span", "origin_id", "lines",
        ]


class TestBuildDataset:
    def test_balance_within_one(self, small_splits):
        for name in ("train", "valid", "test"):
            counts = small_splits.counts[name]
            assert abs(counts["buggy"] - counts["clean"]) <= 1

    def test_origins_disjoint_across_splits(self, small_splits):
        origins = [
            {e.origin_id for e in split}
            for split in (small_splits.train, small_splits.valid, small_splits.test)
        ]
        assert not origins[0] & origins[1]
        assert not origins[0] & origins[2]
        assert not origins[1] & origins[2]

    def test_buggy_never_shares_origin_with_a_clean_twin(self, small_splits):
        for split in (small_splits.train, small_splits.valid, small_splits.test):
            buggy_origins = {e.origin_id for e in split if e.label == 1}
            clean_origins = {e.origin_id for e in split if e.label == 0}
            assert not buggy_origins & clean_origins

    def test_byte_identical_rebuild(self, small_splits, tmp_path):
        config = ml.DatasetConfig(
            train_size=160, valid_size=60, test_size=60,
            mix={"bound": 1.0, "biop": 1.0, "varmisuse": 1.0}, seed=11,
        )
        again = ml.build_dataset(config)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        ml.write_jsonl(small_splits.train, a)
        ml.write_jsonl(again.train, b)
        assert a.read_bytes() == b.read_bytes()

    def test_mix_validation(self):
        with pytest.raises(ConfigError):
            ml.DatasetConfig(mix={"nope": 1.0})
        with pytest.raises(ConfigError):
            ml.DatasetConfig(train_size=1)

    def test_jsonl_roundtrip_and_schema(self, small_splits, tmp_path):
        path = tmp_path / "t.jsonl"
        ml.write_jsonl(small_splits.test, path)
        back = ml.read_jsonl(path)
        assert [e.to_record() for e in back] == [e.to_record() for e in small_splits.test]
        first = json.loads(path.read_text().splitlines()[0])
        assert set(first) == {"id", "tokens", "label", "bug_kind", "bug_span", "origin_id", "lines"}
