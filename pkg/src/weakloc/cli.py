"""Command-line pipeline: corpus generation, tokenizer and model training,
evaluation, head profiling, single-input localization and fixing.

Every command is reproducible from (flags, seed, inputs), refuses to
overwrite outputs without --force, and records its resolved configuration
next to what it writes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import minilang as ml
from .bpe import BpeVocabulary, train_bpe, vocab_hash
from .detector import check_vocab_compatible
from .fixer import fix_pipeline
from .localization import HeadProfile, localize, rank_heads, select_top_k_heads
from .metrics import evaluate
from .model import ModelConfig, Parameters
from .render import render_ansi, render_html
from .training import (
    OptimizerConfig,
    load_checkpoint,
    pretrain_mlm,
    save_checkpoint,
    train_detection,
)

# Flags resolvable through --config files use None defaults; the effective
# value is defaults < config file < explicit flag.
MODEL_DEFAULTS = {
    "layers": 2,
    "heads": 4,
    "dim": 64,
    "ff_dim": 128,
    "max_len": 192,
    "dropout": 0.1,
    "precision": "float32",
}
OPT_DEFAULTS = {
    "lr": 1e-3,
    "weight_decay": 0.01,
    "batch_size": 64,
    "epochs": 6,
}


class CliError(Exception):
    pass


def _fail(message: str) -> "NoReturn":  # noqa: F821 - py3.10 spelling
    raise CliError(message)


def _check_output(path: Path, force: bool):
    if path.exists() and not force:
        _fail(f"refusing to overwrite {path} (pass --force)")


def _write_json(path: Path, obj: dict):
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def _log_resolved(command: str, resolved: dict):
    print(f"[weakloc {command}] config: {json.dumps(resolved, sort_keys=True)}", file=sys.stderr)


def _read_config_file(path: str | None) -> dict:
    """Flat key=value overrides; values parse as JSON scalars when possible."""
    if path is None:
        return {}
    overrides = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            _fail(f"config line is not key=value: {line!r}")
        key, value = line.split("=", 1)
        try:
            overrides[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError:
            overrides[key.strip()] = value.strip()
    return overrides


def _resolve(defaults: dict, file_overrides: dict, args: argparse.Namespace) -> dict:
    resolved = dict(defaults)
    for key in defaults:
        if key in file_overrides:
            resolved[key] = file_overrides[key]
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _parse_mix(spec: str) -> dict:
    if spec == "mixed":
        return {kind: 1.0 for kind in ml.BUG_KINDS}
    if "=" not in spec:
        return {kind: 1.0 for kind in spec.split(",")}
    mix = {}
    for part in spec.split(","):
        kind, _, weight = part.partition("=")
        mix[kind.strip()] = float(weight)
    return mix


def _parse_head_mode(spec: str, profile_path: str | None):
    """Returns (head_mode, heads, resolved_note) for locate-layer calls."""
    if spec == "average":
        return "average", None, {"head_mode": "average"}
    kind, _, arg = spec.partition(":")
    if kind == "single":
        return "single", int(arg), {"head_mode": spec}
    if kind == "subset":
        ids = [int(x) for x in arg.split(",") if x != ""]
        return "subset", ids, {"head_mode": spec}
    if kind == "top":
        if profile_path is None:
            _fail("head mode 'top:k' needs --heads-profile")
        profile = HeadProfile.from_json_dict(json.loads(Path(profile_path).read_text(encoding="utf-8")))
        ids = select_top_k_heads(profile, int(arg))
        return "subset", ids, {"head_mode": spec, "resolved_heads": ids}
    _fail(f"unknown head mode {spec!r}")


def _load_model(model_path: str, vocab_path: str) -> tuple[Parameters, BpeVocabulary]:
    vocab = BpeVocabulary.load(vocab_path)
    params, expected_hash = load_checkpoint(model_path)
    check_vocab_compatible(vocab, expected_hash, context=model_path)
    return params, vocab


def _read_tokens(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").split()


def _model_config(resolved: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        layer_count=int(resolved["layers"]),
        head_count=int(resolved["heads"]),
        model_dim=int(resolved["dim"]),
        ff_dim=int(resolved["ff_dim"]),
        max_len=int(resolved["max_len"]),
        dropout_rate=float(resolved["dropout"]),
        precision=str(resolved["precision"]),
    )


def _opt_config(resolved: dict) -> OptimizerConfig:
    return OptimizerConfig(
        learning_rate=float(resolved["lr"]),
        weight_decay=float(resolved["weight_decay"]),
        batch_size=int(resolved["batch_size"]),
        epochs=int(resolved["epochs"]),
    )


def _add_model_opt_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="flat key=value config file")
    for key in MODEL_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        kind = type(MODEL_DEFAULTS[key])
        sub.add_argument(flag, dest=key, type=kind, default=None)
    for key in OPT_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        kind = type(OPT_DEFAULTS[key])
        sub.add_argument(flag, dest=key, type=kind, default=None)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--init", help="checkpoint to start from (e.g. a pretrained encoder)")


def _initial_params(args, resolved: dict, vocab: BpeVocabulary) -> Parameters:
    if args.init:
        params, expected_hash = load_checkpoint(args.init)
        check_vocab_compatible(vocab, expected_hash, context=args.init)
        return params
    return Parameters.initialize(_model_config(resolved, vocab.size), seed=args.seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / f"{name}.jsonl" for name in ("train", "valid", "test")}
    for path in paths.values():
        _check_output(path, args.force)
    config = ml.DatasetConfig(
        train_size=args.train,
        valid_size=args.valid,
        test_size=args.test,
        mix=_parse_mix(args.mix),
        seed=args.seed,
        size_cfg=ml.SizeConfig(max_tokens=args.max_tokens),
    )
    splits = ml.build_dataset(config)
    for name, path in paths.items():
        ml.write_jsonl(splits.split(name), path)
    resolved = {
        "train": args.train, "valid": args.valid, "test": args.test,
        "mix": config.mix, "seed": args.seed, "max_tokens": args.max_tokens,
    }
    _write_json(out_dir / "manifest.json", {"config": resolved, "counts": splits.counts})
    _log_resolved("gen-corpus", resolved)
    return 0


def cmd_train_bpe(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    examples = ml.read_jsonl(args.data)
    vocab = train_bpe([e.tokens for e in examples], merge_count=args.merges)
    vocab.save(out)
    resolved = {"data": args.data, "merges": args.merges, "vocab_size": vocab.size}
    _log_resolved("train-bpe", resolved)
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    file_overrides = _read_config_file(args.config)
    resolved = _resolve({**MODEL_DEFAULTS, **OPT_DEFAULTS}, file_overrides, args)
    vocab = BpeVocabulary.load(args.vocab)
    train_tokens, train_labels = ml.read_training_jsonl(args.train)
    valid_tokens, valid_labels = ml.read_training_jsonl(args.valid)
    params0 = _initial_params(args, resolved, vocab)
    result = train_detection(
        params0,
        vocab,
        train_tokens,
        train_labels,
        valid_tokens,
        valid_labels,
        opt=_opt_config(resolved),
        seed=args.seed,
    )
    save_checkpoint(out, result.params, vocab_hash(vocab))
    run_log = {
        "command": "train",
        "config": {**resolved, "seed": args.seed, "init": args.init,
                   "train": args.train, "valid": args.valid, "vocab": args.vocab},
        "best_epoch": result.best_epoch,
        "best_valid_accuracy": result.best_valid_accuracy,
        "history": result.history_records(),
    }
    _write_json(out.with_suffix(out.suffix + ".run.json"), run_log)
    _log_resolved("train", run_log["config"])
    print(f"best epoch {result.best_epoch}, valid accuracy {result.best_valid_accuracy:.4f}")
    return 0


def cmd_pretrain_mlm(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    file_overrides = _read_config_file(args.config)
    resolved = _resolve({**MODEL_DEFAULTS, **OPT_DEFAULTS}, file_overrides, args)
    if args.epochs is None and "epochs" not in file_overrides:
        resolved["epochs"] = 12
    vocab = BpeVocabulary.load(args.vocab)
    all_tokens, all_labels = ml.read_training_jsonl(args.data)
    clean = [tokens for tokens, label in zip(all_tokens, all_labels) if label == 0]
    params0 = _initial_params(args, resolved, vocab)
    result = pretrain_mlm(
        params0, vocab, clean, mask_prob=args.mask_prob, opt=_opt_config(resolved), seed=args.seed
    )
    save_checkpoint(out, result.params, vocab_hash(vocab))
    run_log = {
        "command": "pretrain-mlm",
        "config": {**resolved, "seed": args.seed, "mask_prob": args.mask_prob,
                   "init": args.init, "data": args.data, "vocab": args.vocab},
        "history": result.history_records(),
    }
    _write_json(out.with_suffix(out.suffix + ".run.json"), run_log)
    _log_resolved("pretrain-mlm", run_log["config"])
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    params, vocab = _load_model(args.model, args.vocab)
    examples = ml.read_jsonl(args.data)
    head_mode, heads, note = _parse_head_mode(args.head_mode, args.heads_profile)
    ks = [int(k) for k in args.ks.split(",")]
    config_echo = {
        "model": args.model, "data": args.data, "window_size": args.n,
        "ks": ks, **note,
    }
    report, _ = evaluate(
        params, vocab, examples,
        window_size=args.n, head_mode=head_mode, heads=heads, ks=ks,
        config_echo=config_echo,
    )
    _write_json(out, report.to_json_dict())
    _log_resolved("eval", config_echo)
    print(report.render_text())
    return 0


def cmd_heads(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    params, vocab = _load_model(args.model, args.vocab)
    examples = ml.read_jsonl(args.data)
    profile = rank_heads(
        params, vocab, examples,
        window_size=args.n, sample_cap=args.sample_cap, seed=args.seed,
    )
    _write_json(out, profile.to_json_dict())
    resolved = {"model": args.model, "data": args.data, "window_size": args.n,
                "sample_cap": args.sample_cap, "seed": args.seed}
    _log_resolved("heads", resolved)
    for head, acc in enumerate(profile.accuracies):
        print(f"head {head}: {acc:.4f}")
    print(f"ranking: {profile.ranking} (n={profile.sample_size})")
    return 0


def cmd_localize(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    params, vocab = _load_model(args.model, args.vocab)
    tokens = _read_tokens(args.input)
    head_mode, heads, note = _parse_head_mode(args.head_mode, args.heads_profile)
    result = localize(
        params, vocab, tokens,
        window_size=args.n, head_mode=head_mode, heads=heads, top_k=args.k,
    )
    _write_json(out, result.to_json_dict())
    resolved = {"model": args.model, "input": args.input, "window_size": args.n,
                "k": args.k, "render": args.render, **note}
    _write_json(out.with_suffix(out.suffix + ".run.json"), {"command": "localize", "config": resolved})
    _log_resolved("localize", resolved)
    if args.render == "ansi":
        print(render_ansi(tokens, result))
    elif args.render == "html":
        html_path = out.with_suffix(out.suffix + ".html")
        _check_output(html_path, args.force)
        html_path.write_text(render_html(tokens, result), encoding="utf-8")
        print(f"wrote {html_path}")
    else:
        print(json.dumps(result.to_json_dict(), ensure_ascii=False))
    return 0


def cmd_fix(args) -> int:
    out = Path(args.out)
    _check_output(out, args.force)
    params, vocab = _load_model(args.model, args.vocab)
    tokens = _read_tokens(args.input)
    head_mode, heads, note = _parse_head_mode(args.head_mode, args.heads_profile)
    result, candidates = fix_pipeline(
        params, vocab, tokens,
        window_size=args.n, head_mode=head_mode, heads=heads, m=args.m,
    )
    payload = {
        "verdict": result.verdict,
        "window": (
            {"start": result.window.start, "len": result.window.length}
            if result.window is not None
            else None
        ),
        "candidates": (
            [{"token": c.token, "p": c.probability} for c in candidates]
            if candidates is not None
            else []
        ),
    }
    _write_json(out, payload)
    resolved = {"model": args.model, "input": args.input, "window_size": args.n,
                "m": args.m, **note}
    _write_json(out.with_suffix(out.suffix + ".run.json"), {"command": "fix", "config": resolved})
    _log_resolved("fix", resolved)
    print(json.dumps(payload, ensure_ascii=False))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakloc",
        description="Weakly supervised bug detection, localization and fixing.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-corpus", help="generate JSONL dataset splits")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=8000)
    p.add_argument("--valid", type=int, default=1000)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--mix", default="bound", help="bound|biop|varmisuse|mixed or kind=weight list")
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_corpus)

    p = subs.add_parser("train-bpe", help="learn the subtoken vocabulary")
    p.add_argument("--data", required=True)
    p.add_argument("--merges", type=int, default=512)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train_bpe)

    p = subs.add_parser("train", help="train the bug detector")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_model_opt_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("pretrain-mlm", help="masked-token pretraining on clean examples")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-prob", type=float, default=0.15)
    p.add_argument("--force", action="store_true")
    _add_model_opt_flags(p)
    p.set_defaults(func=cmd_pretrain_mlm)

    p = subs.add_parser("eval", help="run the metric suite on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1, help="localization window size")
    p.add_argument("--head-mode", default="average")
    p.add_argument("--heads-profile")
    p.add_argument("--ks", default="1,3,5,10")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("heads", help="profile per-head localization accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--sample-cap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_heads)

    p = subs.add_parser("localize", help="localize one token sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="text file of whitespace-separated tokens")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--head-mode", default="average")
    p.add_argument("--heads-profile")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--render", choices=("json", "ansi", "html"), default="json")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_localize)

    p = subs.add_parser("fix", help="localize then rank replacement tokens")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--head-mode", default="average")
    p.add_argument("--heads-profile")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fix)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
