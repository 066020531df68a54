"""Deterministic training loops, the optimizer and checkpoint serialization.

Training is single-threaded and fully determined by (data, config, seed):
shuffle order and dropout masks come from seeded generators and there are no
order-dependent reductions, so repeated runs produce byte-identical
checkpoints.  The detection loop consumes only (tokens, label) pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as nn
from .bpe import BpeVocabulary, SubtokenEncoding, encode
from .exceptions import ConfigError, TrainingDiverged
from .model import ModelConfig, Parameters
from .validation import derive_seed

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam-style moment estimation with decoupled weight decay."""

    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")


class AdamW:
    """Per-tensor Adam moments; decay applies only to matrices/embeddings."""

    def __init__(self, names: Sequence[str], config: OptimizerConfig):
        self.names = list(names)
        self.config = config
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: Parameters, grads: dict[str, np.ndarray]):
        cfg = self.config
        self.t += 1
        bias1 = 1.0 - cfg.beta1 ** self.t
        bias2 = 1.0 - cfg.beta2 ** self.t
        for name in self.names:
            tensor = params[name]
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(tensor)
                self._v[name] = np.zeros_like(tensor)
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
            if cfg.weight_decay > 0.0 and tensor.ndim >= 2:
                update = update + cfg.weight_decay * tensor
            tensor -= np.asarray(cfg.learning_rate * update, dtype=tensor.dtype)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    valid_accuracy: float | None = None


@dataclass
class TrainResult:
    params: Parameters
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_accuracy: float = float("nan")

    def history_records(self) -> list[dict]:
        return [asdict(h) for h in self.history]


def _encode_all(vocab: BpeVocabulary, token_lists) -> list[SubtokenEncoding]:
    return [encode(vocab, tokens) for tokens in token_lists]


def _bucketed_batches(lengths: np.ndarray, batch_size: int, rng) -> list[np.ndarray]:
    """Seeded length-bucketed batching: shuffle, stable-sort by length, slice
    into batches, then shuffle the batch order.  Grouping similar lengths
    keeps the quadratic attention cost close to the per-example minimum."""
    n = len(lengths)
    perm = rng.permutation(n)
    by_len = perm[np.argsort(lengths[perm], kind="stable")]
    batches = [by_len[s : s + batch_size] for s in range(0, n, batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def valid_accuracy(params: Parameters, encodings, labels, batch_size: int = 64) -> float:
    probs = nn.predict_probs(params, encodings, batch_size=batch_size)
    predicted = (probs[:, 1] >= 0.5).astype(np.int64)
    return float(np.mean(predicted == np.asarray(labels, dtype=np.int64)))


def train_detection(
    params: Parameters,
    vocab: BpeVocabulary,
    train_tokens,
    train_labels,
    valid_tokens,
    valid_labels,
    opt: OptimizerConfig | None = None,
    seed: int = 0,
) -> TrainResult:
    """Train the detection head end to end; returns the best-validation checkpoint.

    Consumes only token sequences and binary labels.  With epochs=0 the
    initialization is returned unchanged.
    """
    opt = opt or OptimizerConfig()
    params = params.copy()
    enc_train = _encode_all(vocab, train_tokens)
    y_train = np.asarray(train_labels, dtype=np.int64)
    enc_valid = _encode_all(vocab, valid_tokens)
    y_valid = np.asarray(valid_labels, dtype=np.int64)
    if len(enc_train) != len(y_train) or len(enc_valid) != len(y_valid):
        raise ValueError("tokens and labels have different lengths")

    result = TrainResult(params=params)
    if opt.epochs == 0:
        return result

    shuffle_rng = np.random.default_rng(derive_seed(seed, "detection", "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(seed, "detection", "dropout"))
    # The detection objective never touches the masked-token head.
    trained = [n for n in params.names() if not n.startswith("mlm_head.")]
    optimizer = AdamW(trained, opt)

    lengths = np.asarray([len(e.ids) for e in enc_train])
    best_acc = -1.0
    for epoch in range(opt.epochs):
        losses = []
        for step, batch_idx in enumerate(_bucketed_batches(lengths, opt.batch_size, shuffle_rng)):
            batch_enc = [enc_train[i] for i in batch_idx]
            ids, key_mask = nn.collate(params.config, batch_enc)
            loss, _, grads = nn.detection_loss_and_grads(
                params, ids, key_mask, y_train[batch_idx], train=True, dropout_rng=dropout_rng
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, step, loss)
            optimizer.step(params, grads)
            losses.append(loss)
        acc = valid_accuracy(params, enc_valid, y_valid, batch_size=opt.batch_size)
        result.history.append(EpochStats(epoch, float(np.mean(losses)), acc))
        if acc > best_acc:
            best_acc = acc
            result.params = params.copy()
            result.best_epoch = epoch
            result.best_valid_accuracy = acc
    return result


def pretrain_mlm(
    params: Parameters,
    vocab: BpeVocabulary,
    clean_tokens,
    mask_prob: float = 0.15,
    opt: OptimizerConfig | None = None,
    seed: int = 0,
) -> TrainResult:
    """Masked-token pretraining on clean sequences; the detection head is untouched.

    Each selected payload position is replaced by [MASK] outright.  Batches
    without any masked position are skipped, so mask_prob=0 leaves the
    parameters unchanged.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ConfigError(f"mask_prob must be in [0, 1], got {mask_prob}")
    opt = opt or OptimizerConfig()
    params = params.copy()
    encodings = _encode_all(vocab, clean_tokens)

    result = TrainResult(params=params)
    if opt.epochs == 0:
        return result

    shuffle_rng = np.random.default_rng(derive_seed(seed, "mlm", "shuffle"))
    mask_rng = np.random.default_rng(derive_seed(seed, "mlm", "mask"))
    dropout_rng = np.random.default_rng(derive_seed(seed, "mlm", "dropout"))
    trained = [n for n in params.names() if not n.startswith("cls_head.")]
    optimizer = AdamW(trained, opt)

    mask_id = params.config.mask_id
    lengths = np.asarray([len(e.ids) for e in encodings])
    for epoch in range(opt.epochs):
        losses = []
        for step, batch_idx in enumerate(_bucketed_batches(lengths, opt.batch_size, shuffle_rng)):
            batch_enc = [encodings[i] for i in batch_idx]
            ids, key_mask = nn.collate(params.config, batch_enc)
            positions, targets = [], []
            for b, enc in enumerate(batch_enc):
                hits = np.nonzero(mask_rng.random(len(enc.ids)) < mask_prob)[0]
                for t in hits:
                    col = int(t) + 1  # + [CLS]
                    positions.append((b, col))
                    targets.append(int(ids[b, col]))
            if not positions:
                continue
            for b, col in positions:
                ids[b, col] = mask_id
            loss, _, grads = nn.mlm_loss_and_grads(
                params, ids, key_mask, positions, targets, train=True, dropout_rng=dropout_rng
            )
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, step, loss)
            optimizer.step(params, grads)
            losses.append(loss)
        result.history.append(EpochStats(epoch, float(np.mean(losses)) if losses else 0.0))
    result.params = params
    result.best_epoch = opt.epochs - 1
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_manifest(params: Parameters, vocab_hash: str) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(params.config),
        "vocab_hash": vocab_hash,
        "tensors": {
            name: {"shape": list(t.shape), "data": t.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }


def checkpoint_json(params: Parameters, vocab_hash: str) -> str:
    """Canonical checkpoint text; identical runs serialize byte-identically."""
    return json.dumps(checkpoint_manifest(params, vocab_hash), ensure_ascii=False, separators=(",", ":"))


def save_checkpoint(path: str | Path, params: Parameters, vocab_hash: str):
    Path(path).write_text(checkpoint_json(params, vocab_hash) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[Parameters, str]:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version {version!r}")
    config = ModelConfig(**manifest["config"])
    tensors = {}
    for name, entry in manifest["tensors"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        tensors[name] = arr.astype(config.dtype)
    return Parameters(config, tensors), manifest["vocab_hash"]
