"""Weakly supervised bug detection, localization and fixing.

A binary bug detector is trained from buggy/clean labels alone; its [CLS]
attention then localizes the bug token, and a masked-token head proposes
fixes.  Ships with a deterministic mini-language corpus generator and
single-token bug injectors.
"""

from .bpe import BpeTokenizer, BpeVocabulary, SubtokenEncoding, decode, encode, train_bpe, vocab_hash
from .detector import TransformerBugDetector
from .fixer import FixCandidate, RecoveryReport, comparison_recovery, fix_pipeline, fix_span
from .localization import (
    AttentionBugLocalizer,
    HeadProfile,
    LocalizationResult,
    WindowScore,
    agg_head_average,
    agg_head_subset,
    agg_subtoken,
    line_scores,
    localize,
    locate,
    rank_heads,
    select_top_k_heads,
    top_k_windows,
)
from .metrics import (
    DetectionMetrics,
    EvalReport,
    detection_metrics,
    evaluate,
    head_ablation_report,
    localization_accuracy,
    random_baseline,
    topk_accuracy,
)
from .minilang import (
    DatasetConfig,
    DatasetSplits,
    LabeledExample,
    MiniFunction,
    SizeConfig,
    build_dataset,
    generate_function,
    inject_biop_misuse,
    inject_bound_error,
    inject_var_misuse,
    read_jsonl,
    write_jsonl,
)
from .model import ForwardTrace, ModelConfig, Parameters, detect, forward, grad_check, loss_detection
from .training import OptimizerConfig, load_checkpoint, pretrain_mlm, save_checkpoint, train_detection

__version__ = "0.1.0"

__all__ = [
    "AttentionBugLocalizer",
    "BpeTokenizer",
    "BpeVocabulary",
    "DatasetConfig",
    "DatasetSplits",
    "DetectionMetrics",
    "EvalReport",
    "FixCandidate",
    "ForwardTrace",
    "HeadProfile",
    "LabeledExample",
    "LocalizationResult",
    "MiniFunction",
    "ModelConfig",
    "OptimizerConfig",
    "Parameters",
    "RecoveryReport",
    "SizeConfig",
    "SubtokenEncoding",
    "TransformerBugDetector",
    "WindowScore",
    "agg_head_average",
    "agg_head_subset",
    "agg_subtoken",
    "build_dataset",
    "comparison_recovery",
    "decode",
    "detect",
    "detection_metrics",
    "encode",
    "evaluate",
    "fix_pipeline",
    "fix_span",
    "forward",
    "generate_function",
    "grad_check",
    "head_ablation_report",
    "inject_biop_misuse",
    "inject_bound_error",
    "inject_var_misuse",
    "line_scores",
    "load_checkpoint",
    "localization_accuracy",
    "localize",
    "locate",
    "loss_detection",
    "pretrain_mlm",
    "random_baseline",
    "rank_heads",
    "read_jsonl",
    "save_checkpoint",
    "select_top_k_heads",
    "top_k_windows",
    "topk_accuracy",
    "train_bpe",
    "train_detection",
    "vocab_hash",
    "write_jsonl",
]
