"""Detection/localization metrics and the evaluation harness.

Detection metrics are the usual confusion-matrix rates.  Localization
accuracy is joint by default: a buggy example counts as correct only when it
is both classified buggy and its best window contains the full ground-truth
span; the detection-conditional variant is reported alongside.  Top-K rates
count a hit when any of the K best windows (or lines) contains the span.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bpe import BpeVocabulary
from .localization import (
    HeadProfile,
    LocalizationResult,
    localize,
    rank_heads,
    rank_lines,
    window_contains_span,
)
from .minilang import LabeledExample
from .model import Parameters


@dataclass
class DetectionMetrics:
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_json_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def detection_metrics(predictions, labels) -> DetectionMetrics:
    """Precision/recall/accuracy with the 0-when-undefined convention."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("empty prediction list")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    accuracy = (tp + tn) / predictions.size
    return DetectionMetrics(precision, recall, accuracy, tp, fp, fn, tn)


@dataclass
class LocalizationAccuracy:
    joint: float
    conditional: float
    hits: int
    detected: int
    buggy_total: int

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.joint,
            "accuracy_detected_only": self.conditional,
            "hits": self.hits,
            "detected": self.detected,
            "buggy_total": self.buggy_total,
        }


def _check_aligned(results: Sequence[LocalizationResult], examples: Sequence[LabeledExample]):
    if len(results) != len(examples):
        raise ValueError(f"results ({len(results)}) not aligned with examples ({len(examples)})")


def localization_accuracy(
    results: Sequence[LocalizationResult], examples: Sequence[LabeledExample]
) -> LocalizationAccuracy:
    """Joint detect-and-locate accuracy over all buggy examples.

    The numerator requires a buggy verdict whose best window contains the
    whole ground-truth span; clean examples never enter either side.
    """
    _check_aligned(results, examples)
    hits = detected = buggy_total = 0
    for result, example in zip(results, examples):
        if example.label != 1:
            continue
        buggy_total += 1
        if not result.is_buggy:
            continue
        detected += 1
        w = result.window
        if w is not None and window_contains_span(w.start, w.length, example.bug_span):
            hits += 1
    if buggy_total == 0:
        raise ValueError("no buggy examples in the evaluation set")
    return LocalizationAccuracy(
        joint=hits / buggy_total,
        conditional=hits / detected if detected else 0.0,
        hits=hits,
        detected=detected,
        buggy_total=buggy_total,
    )


def topk_accuracy(
    results: Sequence[LocalizationResult],
    examples: Sequence[LabeledExample],
    ks: Sequence[int],
    unit: str = "window",
) -> dict[int, float]:
    """Fraction of buggy examples hit within the K best windows (or lines)."""
    if unit not in ("window", "line"):
        raise ValueError(f"unknown unit {unit!r}")
    _check_aligned(results, examples)
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive integers")
    hits = {k: 0 for k in ks}
    buggy_total = 0
    for result, example in zip(results, examples):
        if example.label != 1:
            continue
        buggy_total += 1
        if not result.is_buggy:
            continue
        span = example.bug_span
        for k in ks:
            if unit == "window":
                candidates = result.topk[:k]
                if any(window_contains_span(w.start, w.length, span) for w in candidates):
                    hits[k] += 1
            else:
                if result.line_scores is None:
                    raise ValueError("line ranking requested but result has no line scores")
                top_lines = rank_lines(result.line_scores)[:k]
                span_line = example.line_map[span[0]]
                if span_line in top_lines:
                    hits[k] += 1
    if buggy_total == 0:
        raise ValueError("no buggy examples in the evaluation set")
    return {k: hits[k] / buggy_total for k in ks}


def topk_all_accuracy(
    results: Sequence[LocalizationResult], examples: Sequence[LabeledExample]
) -> float:
    """Hit rate when every returned window counts (K = all windows)."""
    _check_aligned(results, examples)
    hits = buggy_total = 0
    for result, example in zip(results, examples):
        if example.label != 1:
            continue
        buggy_total += 1
        if not result.is_buggy:
            continue
        span = example.bug_span
        if any(window_contains_span(w.start, w.length, span) for w in result.topk):
            hits += 1
    if buggy_total == 0:
        raise ValueError("no buggy examples in the evaluation set")
    return hits / buggy_total


def random_baseline(examples: Sequence[LabeledExample], window_size: int) -> float:
    """Expected accuracy of uniform window picking, in closed form.

    Per buggy example: (number of windows containing the span) / (number of
    windows); the mean over examples is exact, no sampling involved.
    """
    rates = []
    for example in examples:
        if example.label != 1 or example.bug_span is None:
            continue
        l = len(example.tokens)
        n_windows = l - window_size + 1
        if n_windows <= 0:
            rates.append(0.0)
            continue
        s, e = example.bug_span
        lo = max(0, e - window_size + 1)
        hi = min(s, l - window_size)
        containing = max(0, hi - lo + 1)
        rates.append(containing / n_windows)
    if not rates:
        raise ValueError("no buggy examples with spans")
    return float(np.mean(rates))


def head_ablation_report(
    params: Parameters,
    vocab: BpeVocabulary,
    examples: Sequence[LabeledExample],
    *,
    window_size: int = 1,
    sample_cap: int = 2000,
    seed: int = 0,
) -> HeadProfile:
    """Single-head localization accuracy per head over correctly-classified
    buggy examples (up to `sample_cap`, seeded sampling)."""
    return rank_heads(
        params, vocab, examples, window_size=window_size, sample_cap=sample_cap, seed=seed
    )


# ---------------------------------------------------------------------------
# Evaluation harness
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    detection: DetectionMetrics
    localization: LocalizationAccuracy
    topk: dict[int, float]
    topk_all: float
    random_baseline: float
    config: dict = field(default_factory=dict)
    per_head: HeadProfile | None = None

    def to_json_dict(self) -> dict:
        out = {
            "detection": self.detection.to_json_dict(),
            "localization": self.localization.to_json_dict(),
            "topk": {str(k): v for k, v in sorted(self.topk.items())},
            "topk_all": self.topk_all,
            "random_baseline": self.random_baseline,
            "config": self.config,
        }
        out["per_head"] = self.per_head.to_json_dict() if self.per_head is not None else None
        return out

    def render_text(self) -> str:
        det, loc = self.detection, self.localization
        lines = [
            "detection",
            f"  precision {det.precision:.4f}  recall {det.recall:.4f}  accuracy {det.accuracy:.4f}",
            f"  confusion tp={det.tp} fp={det.fp} fn={det.fn} tn={det.tn}",
            "localization",
            f"  accuracy (joint)      {loc.joint:.4f}   ({loc.hits}/{loc.buggy_total})",
            f"  accuracy (detected)   {loc.conditional:.4f}   ({loc.hits}/{loc.detected})",
            f"  random baseline       {self.random_baseline:.4f}",
        ]
        for k, rate in sorted(self.topk.items()):
            lines.append(f"  top-{k:<3d}               {rate:.4f}")
        lines.append(f"  top-all               {self.topk_all:.4f}")
        if self.per_head is not None:
            lines.append("per-head accuracy")
            for h, acc in enumerate(self.per_head.accuracies):
                lines.append(f"  head {h}: {acc:.4f}")
        return "\n".join(lines)


def evaluate(
    params: Parameters,
    vocab: BpeVocabulary,
    examples: Sequence[LabeledExample],
    *,
    window_size: int = 1,
    head_mode: str = "average",
    heads=None,
    ks: Sequence[int] = (1, 3, 5, 10),
    config_echo: dict | None = None,
) -> tuple[EvalReport, list[LocalizationResult]]:
    """Localize every example and assemble the full metric report.

    Every result carries all non-overlapping windows, so the top-K table and
    the all-windows rate come from one pass.
    """
    results = []
    for example in examples:
        results.append(
            localize(
                params,
                vocab,
                example.tokens,
                window_size=window_size,
                head_mode=head_mode,
                heads=heads,
                top_k=len(example.tokens),
                line_map=example.line_map,
            )
        )
    predictions = [1 if r.is_buggy else 0 for r in results]
    labels = [e.label for e in examples]
    report = EvalReport(
        detection=detection_metrics(predictions, labels),
        localization=localization_accuracy(results, examples),
        topk=topk_accuracy(results, examples, ks),
        topk_all=topk_all_accuracy(results, examples),
        random_baseline=random_baseline(examples, window_size),
        config=dict(config_echo or {}),
    )
    return report, results
