"""Terminal and HTML heatmaps for localization results.

Backgrounds darken with importance, normalized by the maximum token score so
the most suspicious token is always the darkest cell; the selected window is
underlined (ANSI) or outlined (HTML).
"""

from __future__ import annotations

import html as html_lib
from typing import Sequence

from .localization import LocalizationResult

_RESET = "\x1b[0m"


def _normalized_scores(result: LocalizationResult, n_tokens: int) -> list[float]:
    scores = result.token_scores
    if not scores:
        return [0.0] * n_tokens
    peak = max(scores)
    if peak <= 0.0:
        return [0.0] * n_tokens
    return [s / peak for s in scores]


def _in_window(result: LocalizationResult, i: int) -> bool:
    w = result.window
    return w is not None and w.start <= i < w.start + w.length


def render_ansi(
    tokens: Sequence[str],
    result: LocalizationResult,
    line_map: Sequence[int] | None = None,
) -> str:
    """256-color heatmap; grayscale background, darkest = highest importance."""
    header = "CLEAN" if not result.is_buggy else (
        f"BUGGY p1={result.p[1]:.3f} window=[{result.window.start}, "
        f"{result.window.start + result.window.length - 1}]"
    )
    weights = _normalized_scores(result, len(tokens))
    lines: list[list[str]] = [[]]
    current_line = line_map[0] if line_map else 0
    for i, token in enumerate(tokens):
        if line_map is not None and line_map[i] != current_line:
            lines.append([])
            current_line = line_map[i]
        if result.is_buggy:
            # 255 (white) down to 232 (black) on the grayscale ramp.
            level = 255 - int(round(weights[i] * 23))
            fg = "\x1b[97m" if level < 244 else "\x1b[30m"
            cell = f"\x1b[48;5;{level}m{fg}{token}{_RESET}"
            if _in_window(result, i):
                cell = f"\x1b[4m{cell}{_RESET}"
        else:
            cell = token
        lines[-1].append(cell)
    body = "\n".join(" ".join(line) for line in lines)
    return f"{header}\n{body}"


def render_html(
    tokens: Sequence[str],
    result: LocalizationResult,
    line_map: Sequence[int] | None = None,
) -> str:
    header = "CLEAN" if not result.is_buggy else (
        f"BUGGY p1={result.p[1]:.3f} window start {result.window.start}, "
        f"len {result.window.length}"
    )
    weights = _normalized_scores(result, len(tokens))
    parts: list[str] = []
    current_line = line_map[0] if line_map else 0
    for i, token in enumerate(tokens):
        if line_map is not None and line_map[i] != current_line:
            parts.append("<br/>")
            current_line = line_map[i]
        opacity = weights[i] if result.is_buggy else 0.0
        color = "#fff" if opacity > 0.5 else "#000"
        border = "border:1px solid #c00;" if result.is_buggy and _in_window(result, i) else ""
        parts.append(
            f'<span style="background:rgba(0,0,0,{opacity:.3f});color:{color};{border}'
            f'padding:1px 2px;">{html_lib.escape(token)}</span>'
        )
    return (
        "<!DOCTYPE html><html><body style=\"font-family:monospace\">"
        f"<p>{html_lib.escape(header)}</p><p>{' '.join(parts)}</p></body></html>"
    )
