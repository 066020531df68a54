"""Input validation helpers shared by the estimators and the functional core."""

from __future__ import annotations

import hashlib
from typing import Sequence

from .exceptions import ConfigError


def check_token_sequence(tokens: Sequence[str], marker: str | None = None) -> list[str]:
    """Validate a single token sequence and return it as a list of str.

    Tokens must be non-empty strings; when ``marker`` is given, no token may
    contain the token-begin marker character (it is reserved for alignment).
    """
    if not isinstance(tokens, (list, tuple)):
        raise TypeError(f"expected a list of tokens, got {type(tokens).__name__}")
    if len(tokens) == 0:
        raise ValueError("token sequence is empty")
    out = []
    for i, tok in enumerate(tokens):
        if not isinstance(tok, str) or not tok:
            raise ValueError(f"token {i} is not a non-empty string: {tok!r}")
        if marker is not None and marker in tok:
            raise ValueError(f"token {i} contains the reserved marker {marker!r}: {tok!r}")
        out.append(tok)
    return out


def check_token_corpus(corpus, marker: str | None = None) -> list[list[str]]:
    """Validate a collection of token sequences."""
    if not isinstance(corpus, (list, tuple)):
        raise TypeError(f"expected a list of token sequences, got {type(corpus).__name__}")
    return [check_token_sequence(seq, marker) for seq in corpus]


def check_range(name: str, bounds: tuple[int, int], minimum: int = 0) -> tuple[int, int]:
    """Validate an inclusive integer range used by a size configuration."""
    lo, hi = bounds
    if lo > hi:
        raise ConfigError(f"{name}: empty range ({lo}, {hi})")
    if lo < minimum:
        raise ConfigError(f"{name}: lower bound {lo} below minimum {minimum}")
    return (int(lo), int(hi))


def check_span(span: tuple[int, int], length: int) -> tuple[int, int]:
    """Validate an inclusive token span against a sequence length."""
    start, end = int(span[0]), int(span[1])
    if not (0 <= start <= end < length):
        raise ValueError(f"span ({start}, {end}) out of bounds for length {length}")
    return (start, end)


def derive_seed(*parts) -> int:
    """Derive a stable 63-bit child seed from arbitrary labelled parts.

    Used everywhere a sub-stream of randomness is needed, so that runs are
    reproducible across processes (unlike ``hash``, which is salted).
    """
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
