"""Masked-prediction bug fixing on top of the detector and localizer.

The fixer replaces the located span's subtokens with a single [MASK] and
ranks replacement tokens by the masked-token head's probability.  Candidates
are restricted to subtokens that begin a token (marker-initial), so each one
decodes to a stand-alone token; probabilities are renormalized over the
non-special vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as nn
from .bpe import BpeVocabulary, SubtokenEncoding, encode
from .exceptions import SpanOutOfBounds
from .localization import LocalizationResult, localize
from .minilang import COMPARISON_OPS, LabeledExample
from .model import Parameters, softmax
from .validation import check_token_sequence


@dataclass
class FixCandidate:
    """One ranked replacement token for a masked span."""

    token: str
    probability: float
    rank: int


def masked_probs(params: Parameters, vocab: BpeVocabulary, payload_ids: list[int], mask_index: int) -> np.ndarray:
    """Vocabulary distribution at one masked payload position.

    Probabilities are renormalized over non-special ids; special ids get 0.
    """
    ids = list(payload_ids)
    ids[mask_index] = params.config.mask_id
    encoding = SubtokenEncoding(ids=ids, spans=[(i, i) for i in range(len(ids))], token_count=len(ids))
    batch_ids, key_mask = nn.collate(params.config, [encoding])
    logits = nn.mlm_logits(params, batch_ids, key_mask, [(0, mask_index + 1)])
    probs = softmax(np.asarray(logits, dtype=np.float64), axis=-1)[0]
    for special_id in vocab.special_ids:
        probs[special_id] = 0.0
    total = probs.sum()
    if total <= 0.0:
        raise ValueError("masked distribution has no mass outside special tokens")
    return probs / total


def fix_span(
    params: Parameters,
    vocab: BpeVocabulary,
    tokens,
    span: tuple[int, int],
    m: int = 5,
) -> list[FixCandidate]:
    """Top-m single-subtoken replacements for the span, by masked probability."""
    tokens = check_token_sequence(tokens, marker=vocab.marker)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    start, end = int(span[0]), int(span[1])
    if not 0 <= start <= end < len(tokens):
        raise SpanOutOfBounds(f"span ({start}, {end}) outside [0, {len(tokens) - 1}]")

    encoding = encode(vocab, tokens)
    a = encoding.spans[start][0]
    b = encoding.spans[end][1]
    masked_payload = encoding.ids[:a] + [params.config.mask_id] + encoding.ids[b + 1 :]
    probs = masked_probs(params, vocab, masked_payload, a)

    order = sorted(range(probs.shape[0]), key=lambda i: (-probs[i], i))
    candidates: list[FixCandidate] = []
    for idx in order:
        if len(candidates) == m:
            break
        if probs[idx] <= 0.0:
            break
        piece = vocab.id_to_token.get(idx)
        if piece is None or not piece.startswith(vocab.marker):
            continue
        candidates.append(
            FixCandidate(
                token=piece[len(vocab.marker):],
                probability=float(probs[idx]),
                rank=len(candidates) + 1,
            )
        )
    return candidates


def fix_pipeline(
    params: Parameters,
    vocab: BpeVocabulary,
    tokens,
    *,
    window_size: int = 1,
    head_mode: str = "average",
    heads=None,
    m: int = 5,
) -> tuple[LocalizationResult, list[FixCandidate] | None]:
    """Detect, localize, then propose replacements for the best window.

    A clean verdict returns (result, None) without masking anything.
    """
    result = localize(
        params, vocab, tokens, window_size=window_size, head_mode=head_mode, heads=heads
    )
    if not result.is_buggy:
        return result, None
    w = result.window
    span = (w.start, min(w.start + w.length - 1, len(list(tokens)) - 1))
    return result, fix_span(params, vocab, tokens, span, m=m)


# ---------------------------------------------------------------------------
# Masked-recovery evaluation
# ---------------------------------------------------------------------------


@dataclass
class RecoveryReport:
    """Top-1 masked-recovery accuracy vs the majority-operator baseline."""

    model_accuracy: float
    baseline_accuracy: float
    majority_token: str
    n_positions: int

    def to_json_dict(self) -> dict:
        return {
            "model_accuracy": self.model_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "majority_token": self.majority_token,
            "n_positions": self.n_positions,
        }


def comparison_recovery(
    params: Parameters,
    vocab: BpeVocabulary,
    examples: Sequence[LabeledExample],
    *,
    operators: Sequence[str] = COMPARISON_OPS,
    max_positions: int | None = None,
) -> RecoveryReport:
    """Mask each comparison-operator position in clean examples and score
    top-1 recovery against always predicting the set's majority operator."""
    operator_set = set(operators)
    positions: list[tuple[LabeledExample, int]] = []
    for example in examples:
        if example.label != 0:
            continue
        for pos, token in enumerate(example.tokens):
            if token in operator_set:
                positions.append((example, pos))
    if max_positions is not None:
        positions = positions[:max_positions]
    if not positions:
        raise ValueError("no comparison-operator positions found in clean examples")

    truths = [example.tokens[pos] for example, pos in positions]
    counts: dict[str, int] = {}
    for t in truths:
        counts[t] = counts.get(t, 0) + 1
    majority = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    model_hits = 0
    for (example, pos), truth in zip(positions, truths):
        top = fix_span(params, vocab, example.tokens, (pos, pos), m=1)
        if top and top[0].token == truth:
            model_hits += 1
    n = len(positions)
    return RecoveryReport(
        model_accuracy=model_hits / n,
        baseline_accuracy=truths.count(majority) / n,
        majority_token=majority,
        n_positions=n,
    )
