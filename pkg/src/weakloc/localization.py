"""Attention-based bug localization.

Pipeline for one input: classify; on a clean verdict stop immediately with no
window; otherwise take the last layer's [CLS] attention rows, aggregate heads
(average, an explicit subset, or a single head), sum each token's subtoken
mass into a per-token importance vector, and slide a width-N window to pick
the highest-scoring span.  Head subsets come from profiling single-head
localization accuracy on span-annotated validation examples; that profile is
the only place ground-truth spans are consumed before test time.

All tie-breaks resolve to the lowest index.  Indexing is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bpe import BpeVocabulary, SubtokenEncoding, encode
from .exceptions import (
    EmptyHeadSet,
    HeadIndexOutOfRange,
    NoBuggyExamples,
    WindowTooLarge,
)
from .minilang import LabeledExample
from .model import ForwardTrace, Parameters, forward
from .validation import derive_seed


class WindowScore(NamedTuple):
    start: int
    length: int
    score: float


@dataclass
class LocalizationResult:
    """Verdict plus, for buggy verdicts, the ranked candidate windows.

    A clean verdict short-circuits before any aggregation, so it carries no
    window, no ranked list and no scores.
    """

    verdict: str
    p: tuple[float, float]
    window: WindowScore | None
    topk: list[WindowScore]
    token_scores: list[float]
    line_scores: list[float] | None = None

    @property
    def is_buggy(self) -> bool:
        return self.verdict == "buggy"

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "p": [float(self.p[0]), float(self.p[1])],
            "window": (
                {"start": self.window.start, "len": self.window.length}
                if self.window is not None
                else None
            ),
            "topk": [
                {"start": w.start, "len": w.length, "score": w.score} for w in self.topk
            ],
            "token_scores": [float(v) for v in self.token_scores],
            "line_scores": (
                [float(v) for v in self.line_scores] if self.line_scores is not None else None
            ),
        }


@dataclass
class HeadProfile:
    """Single-head localization accuracy per head on a validation sample."""

    accuracies: list[float]
    ranking: list[int]
    window_size: int
    sample_size: int
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "accuracies": [float(a) for a in self.accuracies],
            "ranking": list(self.ranking),
            "window_size": self.window_size,
            "sample_size": self.sample_size,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "HeadProfile":
        return cls(
            accuracies=[float(a) for a in data["accuracies"]],
            ranking=[int(r) for r in data["ranking"]],
            window_size=int(data["window_size"]),
            sample_size=int(data["sample_size"]),
            seed=int(data["seed"]),
        )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def cls_attention_rows(trace: ForwardTrace) -> np.ndarray:
    """Per-head [CLS]-query attention over payload subtokens, renormalized.

    Drops the [CLS] position itself before renormalizing each head's row to
    sum 1, so downstream scores form a distribution over real subtokens.  A
    head that put essentially all mass on [CLS] falls back to uniform.
    """
    rows = np.asarray(trace.attention[:, 0, 1:], dtype=np.float64)
    sums = rows.sum(axis=-1, keepdims=True)
    degenerate = sums[:, 0] < 1e-12
    if np.any(degenerate):
        rows = rows.copy()
        rows[degenerate] = 1.0
        sums = rows.sum(axis=-1, keepdims=True)
    return rows / sums


def agg_head_average(rows: np.ndarray) -> np.ndarray:
    """Mean of all heads' [CLS] rows."""
    rows = np.asarray(rows, dtype=np.float64)
    return rows.mean(axis=0)


def agg_head_subset(rows: np.ndarray, head_ids: Iterable[int]) -> np.ndarray:
    """Mean over a subset of heads; the full set reduces to the plain average."""
    rows = np.asarray(rows, dtype=np.float64)
    ids = sorted(set(int(h) for h in head_ids))
    if not ids:
        raise EmptyHeadSet("head subset is empty")
    n_heads = rows.shape[0]
    for h in ids:
        if not 0 <= h < n_heads:
            raise HeadIndexOutOfRange(f"head {h} outside [0, {n_heads - 1}]")
    return rows[ids].mean(axis=0)


def agg_subtoken(alpha_prime: np.ndarray, encoding: SubtokenEncoding) -> np.ndarray:
    """Sum each token's subtoken scores: v_i = sum of alpha'[a_i..b_i]."""
    alpha_prime = np.asarray(alpha_prime, dtype=np.float64)
    if alpha_prime.shape[0] != len(encoding.ids):
        raise ValueError(
            f"score length {alpha_prime.shape[0]} does not match payload {len(encoding.ids)}"
        )
    return np.array([alpha_prime[a : b + 1].sum() for a, b in encoding.spans])


# ---------------------------------------------------------------------------
# Window selection
# ---------------------------------------------------------------------------


def _window_sums(v: np.ndarray, window_size: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if window_size < 1:
        raise ValueError(f"window size must be >= 1, got {window_size}")
    if window_size > v.shape[0]:
        raise WindowTooLarge(f"window {window_size} wider than sequence {v.shape[0]}")
    return sliding_window_view(v, window_size).sum(axis=1)


def locate(v, window_size: int) -> int:
    """Start index of the maximum-sum window; ties go to the smallest start."""
    return int(np.argmax(_window_sums(v, window_size)))


def top_k_windows(v, window_size: int, k: int) -> list[WindowScore]:
    """Up to k non-overlapping windows in descending score order.

    Greedy selection: scan windows by (score desc, start asc) and skip any
    window intersecting an already chosen one.  The first selected window is
    always the :func:`locate` window.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sums = _window_sums(v, window_size)
    order = sorted(range(len(sums)), key=lambda i: (-sums[i], i))
    chosen: list[WindowScore] = []
    taken = np.zeros(len(np.asarray(v)), dtype=bool)
    for start in order:
        if len(chosen) == k:
            break
        if taken[start : start + window_size].any():
            continue
        taken[start : start + window_size] = True
        chosen.append(WindowScore(start, window_size, float(sums[start])))
    return chosen


# ---------------------------------------------------------------------------
# End-to-end localization
# ---------------------------------------------------------------------------


def resolve_heads(head_mode: str, heads, head_count: int) -> list[int] | None:
    """Normalize a head_mode spec into an explicit head id list (None = average)."""
    if head_mode == "average":
        return None
    if head_mode == "single":
        if heads is None:
            raise ValueError("head_mode 'single' needs a head id")
        ids = [int(heads)] if np.isscalar(heads) else [int(h) for h in heads]
        if len(ids) != 1:
            raise ValueError("head_mode 'single' takes exactly one head id")
    elif head_mode == "subset":
        if heads is None:
            raise ValueError("head_mode 'subset' needs head ids")
        ids = [int(h) for h in heads]
    else:
        raise ValueError(f"unknown head_mode {head_mode!r}")
    if not ids:
        raise EmptyHeadSet("head subset is empty")
    for h in ids:
        if not 0 <= h < head_count:
            raise HeadIndexOutOfRange(f"head {h} outside [0, {head_count - 1}]")
    return ids


def importance_from_trace(
    trace: ForwardTrace, encoding: SubtokenEncoding, head_ids: Sequence[int] | None
) -> np.ndarray:
    rows = cls_attention_rows(trace)
    alpha_prime = agg_head_average(rows) if head_ids is None else agg_head_subset(rows, head_ids)
    return agg_subtoken(alpha_prime, encoding)


def localize(
    params: Parameters,
    vocab: BpeVocabulary,
    tokens,
    *,
    window_size: int = 1,
    head_mode: str = "average",
    heads=None,
    top_k: int = 1,
    line_map: Sequence[int] | None = None,
) -> LocalizationResult:
    """Classify, and on a buggy verdict return ranked windows and token scores."""
    head_ids = resolve_heads(head_mode, heads, params.config.head_count)
    encoding = encode(vocab, tokens)
    trace = forward(params, encoding)
    p = (float(trace.p[0]), float(trace.p[1]))
    if trace.p[1] < 0.5:
        return LocalizationResult(
            verdict="clean", p=p, window=None, topk=[], token_scores=[], line_scores=None
        )
    v = importance_from_trace(trace, encoding, head_ids)
    ranked = top_k_windows(v, window_size, top_k)
    scores = line_scores(v, line_map).tolist() if line_map is not None else None
    return LocalizationResult(
        verdict="buggy",
        p=p,
        window=ranked[0],
        topk=ranked,
        token_scores=v.tolist(),
        line_scores=scores,
    )


def window_contains_span(start: int, length: int, span: tuple[int, int]) -> bool:
    return start <= span[0] and span[1] <= start + length - 1


def rank_heads(
    params: Parameters,
    vocab: BpeVocabulary,
    examples: Sequence[LabeledExample],
    *,
    window_size: int = 1,
    sample_cap: int = 1000,
    seed: int = 0,
) -> HeadProfile:
    """Score every head by single-head localization accuracy.

    Evaluates up to `sample_cap` correctly-detected buggy examples, drawn in
    seeded shuffle order from the span-annotated validation examples.
    """
    buggy = [e for e in examples if e.label == 1 and e.bug_span is not None]
    if not buggy:
        raise NoBuggyExamples("head profiling needs buggy examples with spans")
    rng = np.random.default_rng(derive_seed(seed, "rank-heads"))
    order = rng.permutation(len(buggy))

    n_heads = params.config.head_count
    hits = np.zeros(n_heads, dtype=np.int64)
    sampled = 0
    for idx in order:
        if sampled == sample_cap:
            break
        example = buggy[idx]
        encoding = encode(vocab, example.tokens)
        trace = forward(params, encoding)
        if trace.p[1] < 0.5:
            continue
        sampled += 1
        rows = cls_attention_rows(trace)
        for h in range(n_heads):
            v = agg_subtoken(rows[h], encoding)
            start = locate(v, window_size)
            if window_contains_span(start, window_size, example.bug_span):
                hits[h] += 1
    if sampled == 0:
        raise NoBuggyExamples("no buggy example was correctly detected")
    accuracies = (hits / sampled).tolist()
    ranking = sorted(range(n_heads), key=lambda h: (-accuracies[h], h))
    return HeadProfile(
        accuracies=accuracies,
        ranking=ranking,
        window_size=window_size,
        sample_size=sampled,
        seed=seed,
    )


def select_top_k_heads(profile: HeadProfile, k: int) -> list[int]:
    """The k best heads by profiled accuracy; k = head count means all heads."""
    n_heads = len(profile.accuracies)
    if not 1 <= k <= n_heads:
        raise HeadIndexOutOfRange(f"k must lie in [1, {n_heads}], got {k}")
    return sorted(profile.ranking[:k])


def line_scores(v, line_map: Sequence[int]) -> np.ndarray:
    """Per-line importance: the sum of v over tokens mapped to each line."""
    v = np.asarray(v, dtype=np.float64)
    if len(line_map) != v.shape[0]:
        raise ValueError("line_map must cover every token")
    if len(line_map) == 0:
        return np.zeros(0)
    scores = np.zeros(max(line_map) + 1)
    np.add.at(scores, np.asarray(line_map, dtype=np.int64), v)
    return scores


def rank_lines(scores) -> list[int]:
    """Line numbers by descending score; ties go to the earlier line."""
    scores = np.asarray(scores, dtype=np.float64)
    return sorted(range(scores.shape[0]), key=lambda i: (-scores[i], i))


# ---------------------------------------------------------------------------
# Estimator wrapper
# ---------------------------------------------------------------------------


class AttentionBugLocalizer:
    """Localizer over a fitted detector, scikit-learn parameter style.

    `head_mode` is "average", "subset" (with `heads` ids) or "single" (with
    one id in `heads`); `with_top_heads` builds the subset variant from a
    head profile.
    """

    def __init__(
        self,
        detector,
        window_size: int = 1,
        head_mode: str = "average",
        heads=None,
        top_k: int = 1,
    ):
        self.detector = detector
        self.window_size = window_size
        self.head_mode = head_mode
        self.heads = heads
        self.top_k = top_k

    def get_params(self, deep: bool = True) -> dict:
        return {
            "detector": self.detector,
            "window_size": self.window_size,
            "head_mode": self.head_mode,
            "heads": self.heads,
            "top_k": self.top_k,
        }

    def set_params(self, **params) -> "AttentionBugLocalizer":
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def localize(self, tokens, line_map=None) -> LocalizationResult:
        return localize(
            self.detector.params_,
            self.detector.vocabulary_,
            tokens,
            window_size=self.window_size,
            head_mode=self.head_mode,
            heads=self.heads,
            top_k=self.top_k,
            line_map=line_map,
        )

    def predict(self, X) -> list[LocalizationResult]:
        return [self.localize(tokens) for tokens in X]

    def rank_heads(
        self, examples: Sequence[LabeledExample], sample_cap: int = 1000, seed: int = 0
    ) -> HeadProfile:
        return rank_heads(
            self.detector.params_,
            self.detector.vocabulary_,
            examples,
            window_size=self.window_size,
            sample_cap=sample_cap,
            seed=seed,
        )

    def with_top_heads(self, profile: HeadProfile, k: int) -> "AttentionBugLocalizer":
        """A copy of this localizer restricted to the k best profiled heads."""
        return AttentionBugLocalizer(
            detector=self.detector,
            window_size=self.window_size,
            head_mode="subset",
            heads=select_top_k_heads(profile, k),
            top_k=self.top_k,
        )
