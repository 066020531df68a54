"""Byte-pair-encoding subtoken vocabulary with token/subtoken alignment.

Every source token is prefixed with a token-begin marker before splitting,
and merges never cross token boundaries.  Alignment spans are recovered by
scanning the encoded sequence for marker-initial subtokens, so each span
(a_i, b_i) concatenates back to its source token exactly.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import EmptyCorpus, SpecialIdInPayload
from .validation import check_token_corpus, check_token_sequence

DEFAULT_MARKER = "Ġ"  # the Ġ token-begin convention
DEFAULT_MERGE_COUNT = 512

SPECIAL_NAMES = ("cls", "pad", "mask", "unk")
SPECIAL_STRINGS = {"cls": "[CLS]", "pad": "[PAD]", "mask": "[MASK]", "unk": "[UNK]"}


@dataclass
class SubtokenEncoding:
    """Subtoken ids for one token sequence plus per-token alignment spans.

    Spans are inclusive (a_i, b_i) pairs into the payload id sequence; they
    are contiguous, ordered and partition [0, len(ids) - 1].  The [CLS]
    position is not part of the payload; the model applies its own offset.
    """

    ids: list[int]
    spans: list[tuple[int, int]]
    token_count: int

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class BpeVocabulary:
    """An ordered merge-rule list plus the subtoken-to-id table."""

    merges: list[tuple[str, str]]
    token_to_id: dict[str, int]
    specials: dict[str, int]
    marker: str
    id_to_token: dict[int, str] = field(init=False, repr=False)
    special_ids: frozenset[int] = field(init=False, repr=False)
    _encode_cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.id_to_token = {i: tok for tok, i in self.token_to_id.items()}
        for name in SPECIAL_NAMES:
            self.id_to_token[self.specials[name]] = SPECIAL_STRINGS[name]
        self.special_ids = frozenset(self.specials.values())

    def __len__(self) -> int:
        return len(self.specials) + len(set(self.token_to_id.values()))

    @property
    def size(self) -> int:
        """Number of distinct ids (embedding-table size)."""
        return max(list(self.id_to_token)) + 1

    def to_json_dict(self) -> dict:
        return {
            "merges": [list(pair) for pair in self.merges],
            "vocab": dict(self.token_to_id),
            "specials": {name: self.specials[name] for name in SPECIAL_NAMES},
            "marker": self.marker,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_json_dict(), ensure_ascii=False, separators=(",", ":"))

    def save(self, path: str | Path):
        Path(path).write_text(self.canonical_json() + "\n", encoding="utf-8")

    @classmethod
    def from_json_dict(cls, data: dict) -> "BpeVocabulary":
        return cls(
            merges=[tuple(pair) for pair in data["merges"]],
            token_to_id={str(k): int(v) for k, v in data["vocab"].items()},
            specials={name: int(data["specials"][name]) for name in SPECIAL_NAMES},
            marker=data["marker"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "BpeVocabulary":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def vocab_hash(vocab: BpeVocabulary) -> str:
    """Stable fingerprint used to pair checkpoints with their vocabulary."""
    return hashlib.sha256(vocab.canonical_json().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train_bpe(
    corpus, merge_count: int = DEFAULT_MERGE_COUNT, marker: str = DEFAULT_MARKER
) -> BpeVocabulary:
    """Learn a merge list by greedy pair-frequency counting.

    Deterministic: ties between equally frequent pairs break on lexicographic
    pair order.  The base alphabet is every character seen plus the marker.
    """
    if merge_count < 0:
        raise ValueError(f"merge_count must be >= 0, got {merge_count}")
    sequences = check_token_corpus(corpus, marker=marker)
    word_counts: Counter[str] = Counter()
    for seq in sequences:
        word_counts.update(seq)
    if not word_counts:
        raise EmptyCorpus("cannot train a vocabulary on an empty corpus")

    words: dict[str, tuple[str, ...]] = {
        w: (marker,) + tuple(w) for w in word_counts
    }
    alphabet = {marker}
    for w in word_counts:
        alphabet.update(w)

    merges: list[tuple[str, str]] = []
    for _ in range(merge_count):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for w, symbols in words.items():
            count = word_counts[w]
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        a, b = best
        merged = a + b
        for w, symbols in words.items():
            if a in symbols and b in symbols:
                words[w] = _merge_once(symbols, a, b, merged)

    token_to_id: dict[str, int] = {}
    specials = {}
    next_id = 0
    for name in SPECIAL_NAMES:
        specials[name] = next_id
        next_id += 1
    for ch in sorted(alphabet):
        token_to_id[ch] = next_id
        next_id += 1
    for a, b in merges:
        merged = a + b
        if merged not in token_to_id:
            token_to_id[merged] = next_id
            next_id += 1
    return BpeVocabulary(merges=merges, token_to_id=token_to_id, specials=specials, marker=marker)


def _merge_once(symbols: tuple[str, ...], a: str, b: str, merged: str) -> tuple[str, ...]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == a and symbols[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


# ---------------------------------------------------------------------------
# Encoding / decoding
# ---------------------------------------------------------------------------


def _split_token(vocab: BpeVocabulary, token: str) -> tuple[str, ...]:
    cached = vocab._encode_cache.get(token)
    if cached is not None:
        return cached
    symbols = (vocab.marker,) + tuple(token)
    for a, b in vocab.merges:
        if len(symbols) < 2:
            break
        if a in symbols and b in symbols:
            symbols = _merge_once(symbols, a, b, a + b)
    vocab._encode_cache[token] = symbols
    return symbols


def encode(vocab: BpeVocabulary, tokens) -> SubtokenEncoding:
    """Encode a token sequence into subtoken ids with alignment spans.

    Unknown characters map to [UNK]; the alignment is recovered by scanning
    for marker-initial subtokens.
    """
    tokens = check_token_sequence(tokens, marker=vocab.marker)
    pieces: list[str] = []
    for token in tokens:
        pieces.extend(_split_token(vocab, token))

    unk = vocab.specials["unk"]
    ids = [vocab.token_to_id.get(piece, unk) for piece in pieces]

    starts = [j for j, piece in enumerate(pieces) if piece.startswith(vocab.marker)]
    if len(starts) != len(tokens):
        raise AssertionError("marker scan found a token-boundary mismatch")
    spans = []
    for i, start in enumerate(starts):
        end = (starts[i + 1] - 1) if i + 1 < len(starts) else len(pieces) - 1
        spans.append((start, end))
    return SubtokenEncoding(ids=ids, spans=spans, token_count=len(tokens))


def decode(vocab: BpeVocabulary, ids) -> list[str]:
    """Invert :func:`encode` by splitting at marker-initial subtokens."""
    ids = list(ids)
    if not ids:
        return []
    for i in ids:
        if i in vocab.special_ids:
            raise SpecialIdInPayload(f"id {i} ({vocab.id_to_token[i]}) is a special id")
    pieces = []
    for i in ids:
        piece = vocab.id_to_token.get(i)
        if piece is None:
            raise ValueError(f"unknown subtoken id {i}")
        pieces.append(piece)
    if not pieces[0].startswith(vocab.marker):
        raise ValueError("payload does not start at a token boundary")
    tokens = []
    current: list[str] = []
    for piece in pieces:
        if piece.startswith(vocab.marker) and current:
            tokens.append("".join(current)[len(vocab.marker):])
            current = []
        current.append(piece)
    tokens.append("".join(current)[len(vocab.marker):])
    return tokens


# ---------------------------------------------------------------------------
# Estimator wrapper
# ---------------------------------------------------------------------------


class BpeTokenizer(BaseEstimator):
    """Subtoken tokenizer with a scikit-learn fit/transform surface.

    ``fit`` learns the merge list from a corpus of token sequences,
    ``transform`` maps token sequences to :class:`SubtokenEncoding` values
    and ``inverse_transform`` decodes payload id sequences back to tokens.
    """

    def __init__(self, merge_count: int = DEFAULT_MERGE_COUNT, marker: str = DEFAULT_MARKER):
        self.merge_count = merge_count
        self.marker = marker

    def fit(self, X, y=None):
        self.vocabulary_ = train_bpe(X, merge_count=self.merge_count, marker=self.marker)
        return self

    def _check_fitted(self) -> BpeVocabulary:
        if not hasattr(self, "vocabulary_"):
            raise NotFittedError("BpeTokenizer is not fitted; call fit first")
        return self.vocabulary_

    def transform(self, X) -> list[SubtokenEncoding]:
        vocab = self._check_fitted()
        return [encode(vocab, tokens) for tokens in X]

    def inverse_transform(self, X) -> list[list[str]]:
        vocab = self._check_fitted()
        return [decode(vocab, ids) for ids in X]

    def encode(self, tokens) -> SubtokenEncoding:
        return encode(self._check_fitted(), tokens)

    def decode(self, ids) -> list[str]:
        return decode(self._check_fitted(), ids)

    @classmethod
    def from_vocabulary(cls, vocab: BpeVocabulary) -> "BpeTokenizer":
        tok = cls(merge_count=len(vocab.merges), marker=vocab.marker)
        tok.vocabulary_ = vocab
        return tok
