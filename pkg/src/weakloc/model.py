"""Small transformer-encoder classifier with hand-written gradients.

The network is a stack of post-norm transformer layers over learned token and
position embeddings, pooled through the [CLS] position into a two-way softmax
head, plus a masked-token head over the vocabulary.  Forward and reverse-mode
passes are implemented directly on numpy arrays; gradients are exact and are
validated against central finite differences by :func:`grad_check`.

Shapes follow the batched convention (B, T, d) with the [CLS] column at
position 0.  Padded key positions receive a large negative attention bias, so
their attention weights underflow to exactly zero and padded batches compute
the same values as unpadded ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import erf

from .bpe import SubtokenEncoding
from .exceptions import ConfigError, SequenceTooLong

PROB_CLAMP = 1e-12
LN_EPS = 1e-8
MASK_BIAS = -1e9

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; `model_dim` must be divisible by `head_count`."""

    vocab_size: int
    layer_count: int = 2
    head_count: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    max_len: int = 192
    dropout_rate: float = 0.1
    precision: str = "float32"
    cls_id: int = 0
    pad_id: int = 1
    mask_id: int = 2

    def __post_init__(self):
        if self.layer_count < 1:
            raise ConfigError(f"layer_count must be >= 1, got {self.layer_count}")
        if self.head_count < 1:
            raise ConfigError(f"head_count must be >= 1, got {self.head_count}")
        if self.model_dim % self.head_count != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by head_count {self.head_count}"
            )
        if self.ff_dim < 1:
            raise ConfigError(f"ff_dim must be >= 1, got {self.ff_dim}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must be >= 5, got {self.vocab_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.precision not in _DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_DTYPES)}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.head_count

    @property
    def dtype(self):
        return _DTYPES[self.precision]


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape map; iteration order is fixed."""
    d, ff = config.model_dim, config.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.layer_count):
        prefix = f"layers.{i}"
        shapes[f"{prefix}.attn.w_q"] = (d, d)
        shapes[f"{prefix}.attn.w_k"] = (d, d)
        shapes[f"{prefix}.attn.w_v"] = (d, d)
        shapes[f"{prefix}.attn.w_o"] = (d, d)
        shapes[f"{prefix}.ln1.gain"] = (d,)
        shapes[f"{prefix}.ln1.bias"] = (d,)
        shapes[f"{prefix}.ff.w1"] = (d, ff)
        shapes[f"{prefix}.ff.b1"] = (ff,)
        shapes[f"{prefix}.ff.w2"] = (ff, d)
        shapes[f"{prefix}.ff.b2"] = (d,)
        shapes[f"{prefix}.ln2.gain"] = (d,)
        shapes[f"{prefix}.ln2.bias"] = (d,)
    shapes["cls_head.w"] = (d, 2)
    shapes["cls_head.b"] = (2,)
    shapes["mlm_head.w"] = (d, config.vocab_size)
    shapes["mlm_head.b"] = (config.vocab_size,)
    return shapes


class Parameters:
    """All trainable tensors, keyed by canonical name in a fixed order."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = tensor_shapes(config)
        if list(tensors) != list(expected):
            raise ConfigError("tensor names do not match the configured architecture")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ConfigError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(tensors[name])):
                raise ConfigError(f"tensor {name} contains non-finite values")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "Parameters":
        return Parameters(self.config, {n: t.copy() for n, t in self.tensors.items()})

    def astype(self, precision: str) -> "Parameters":
        cfg = replace(self.config, precision=precision)
        return Parameters(cfg, {n: t.astype(cfg.dtype) for n, t in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(t) for n, t in self.tensors.items()}

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "Parameters":
        """Seeded init: uniform(-0.05, 0.05) embeddings, 1/sqrt(fan_in)-scaled
        normal linear weights, zero biases, unit layer-norm gains."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in tensor_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if name in ("tok_emb", "pos_emb"):
                t = rng.uniform(-0.05, 0.05, size=shape)
            elif leaf in ("b1", "b2", "b", "bias"):
                t = np.zeros(shape)
            elif leaf == "gain":
                t = np.ones(shape)
            else:
                fan_in = shape[0]
                t = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
            tensors[name] = t.astype(config.dtype)
        return cls(config, tensors)


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_forward(x: np.ndarray):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, cdf


def gelu_grad(x: np.ndarray, cdf: np.ndarray | None = None) -> np.ndarray:
    if cdf is None:
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


def layer_norm_forward(x, gain, bias, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    dgain = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbias = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def scaled_self_attention(Q, K, V, d_head: int, bias=None):
    """softmax(Q Kᵀ / sqrt(d_head)) V over the trailing two axes.

    Returns (output, attention); attention rows are stochastic.  ``bias`` is
    an optional additive term on the attention logits (used for padding).
    """
    if d_head <= 0:
        raise ValueError(f"d_head must be positive, got {d_head}")
    Q, K, V = np.asarray(Q), np.asarray(K), np.asarray(V)
    if K.shape[-2] != V.shape[-2]:
        raise ValueError(f"K/V row counts differ: {K.shape[-2]} vs {V.shape[-2]}")
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(f"Q/K widths differ: {Q.shape[-1]} vs {K.shape[-1]}")
    scores = np.matmul(Q, np.swapaxes(K, -1, -2)) / math.sqrt(d_head)
    if bias is not None:
        scores = scores + bias
    alpha = softmax(scores, axis=-1)
    return np.matmul(alpha, V), alpha


def _split_heads(x: np.ndarray, head_count: int) -> np.ndarray:
    """(..., T, d) -> (..., head_count, T, d  / head_count)."""
    *lead, T, d = x.shape
    x = x.reshape(*lead, T, head_count, d // head_count)
    return np.moveaxis(x, -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    """(..., head_count, T, d_head) -> (..., T, head_count * d_head)."""
    x = np.moveaxis(x, -3, -2)
    *lead, T, nh, dh = x.shape
    return x.reshape(*lead, T, nh * dh)


def multi_head(X, w_q, w_k, w_v, w_o, head_count: int, bias=None):
    """Multi-head attention over one sequence: per-head scaled attention,
    concatenation, then the output projection.

    Returns (output (T, d), attention (head_count, T, T)).
    """
    X = np.asarray(X)
    d = X.shape[-1]
    if d % head_count != 0:
        raise ValueError(f"width {d} not divisible by head_count {head_count}")
    qh = _split_heads(X @ w_q, head_count)
    kh = _split_heads(X @ w_k, head_count)
    vh = _split_heads(X @ w_v, head_count)
    ctx, alpha = scaled_self_attention(qh, kh, vh, d // head_count, bias=bias)
    return _merge_heads(ctx) @ w_o, alpha


def _dropout(x, rate: float, train: bool, rng):
    if not train or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return x * mask, mask


# ---------------------------------------------------------------------------
# Encoder forward / backward
# ---------------------------------------------------------------------------


def collate(config: ModelConfig, encodings: Sequence[SubtokenEncoding]):
    """Stack encodings into a padded (ids, key_mask) pair with [CLS] at 0."""
    if not encodings:
        raise ValueError("empty batch")
    T = 1 + max(len(e.ids) for e in encodings)
    if T > config.max_len:
        raise SequenceTooLong(f"encoded length {T - 1} + [CLS] exceeds max_len {config.max_len}")
    B = len(encodings)
    ids = np.full((B, T), config.pad_id, dtype=np.int64)
    key_mask = np.zeros((B, T), dtype=bool)
    ids[:, 0] = config.cls_id
    key_mask[:, 0] = True
    for b, enc in enumerate(encodings):
        n = len(enc.ids)
        ids[b, 1 : 1 + n] = enc.ids
        key_mask[b, 1 : 1 + n] = True
    return ids, key_mask


def encoder_forward(params: Parameters, ids, key_mask, *, train: bool = False, dropout_rng=None):
    """Run the transformer stack; returns (hidden, last-layer attention, cache)."""
    cfg = params.config
    B, T = ids.shape
    if T > cfg.max_len:
        raise SequenceTooLong(f"sequence length {T} exceeds max_len {cfg.max_len}")
    X = params["tok_emb"][ids] + params["pos_emb"][:T][None, :, :]
    # Parameter-free normalization of the embedding sum; without it the
    # first layer's attention logits start several orders of magnitude too
    # small for training from scratch to get off the ground.
    X, emb_ln_cache = layer_norm_forward(X, X.dtype.type(1.0), X.dtype.type(0.0))
    X, emb_drop = _dropout(X, cfg.dropout_rate, train, dropout_rng)
    # Large negative logit bias on padded keys; their weights underflow to 0.
    att_bias = np.where(key_mask[:, None, None, :], 0.0, MASK_BIAS).astype(X.dtype)
    cache = {"ids": ids, "key_mask": key_mask, "emb_ln": emb_ln_cache, "emb_drop": emb_drop, "layers": []}
    alpha = None
    for li in range(cfg.layer_count):
        X, alpha, layer_cache = _layer_forward(params, li, X, att_bias, train, dropout_rng)
        cache["layers"].append(layer_cache)
    cache["hidden"] = X
    return X, alpha, cache


def _layer_forward(params: Parameters, li: int, X, att_bias, train: bool, rng):
    cfg = params.config
    nh, dh = cfg.head_count, cfg.head_dim
    prefix = f"layers.{li}"
    w_q, w_k, w_v, w_o = (params[f"{prefix}.attn.{n}"] for n in ("w_q", "w_k", "w_v", "w_o"))

    qh = _split_heads(X @ w_q, nh)
    kh = _split_heads(X @ w_k, nh)
    vh = _split_heads(X @ w_v, nh)
    ctx, alpha = scaled_self_attention(qh, kh, vh, dh, bias=att_bias)
    ctxm = _merge_heads(ctx)
    attn_out = ctxm @ w_o
    attn_out, attn_drop = _dropout(attn_out, cfg.dropout_rate, train, rng)

    res1 = X + attn_out
    ln1_out, ln1_cache = layer_norm_forward(res1, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])

    a1 = ln1_out @ params[f"{prefix}.ff.w1"] + params[f"{prefix}.ff.b1"]
    g, gelu_cdf = _gelu_forward(a1)
    ff_out = g @ params[f"{prefix}.ff.w2"] + params[f"{prefix}.ff.b2"]
    ff_out, ff_drop = _dropout(ff_out, cfg.dropout_rate, train, rng)

    res2 = ln1_out + ff_out
    out, ln2_cache = layer_norm_forward(res2, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])

    layer_cache = {
        "X": X, "qh": qh, "kh": kh, "vh": vh, "alpha": alpha, "ctxm": ctxm,
        "attn_drop": attn_drop, "ln1": ln1_cache, "ln1_out": ln1_out,
        "a1": a1, "g": g, "gelu_cdf": gelu_cdf, "ff_drop": ff_drop, "ln2": ln2_cache,
    }
    return out, alpha, layer_cache


def _weight_grad(x, dy):
    """Gradient of y = x @ w for stacked inputs: sum over all leading axes."""
    xf = x.reshape(-1, x.shape[-1])
    dyf = dy.reshape(-1, dy.shape[-1])
    return xf.T @ dyf


def _layer_backward(params: Parameters, li: int, dout, layer_cache, grads):
    cfg = params.config
    nh, dh = cfg.head_count, cfg.head_dim
    prefix = f"layers.{li}"
    c = layer_cache

    dres2, dg2, db2 = layer_norm_backward(dout, c["ln2"])
    grads[f"{prefix}.ln2.gain"] += dg2
    grads[f"{prefix}.ln2.bias"] += db2

    dln1_out = dres2.copy()
    dff_out = dres2 if c["ff_drop"] is None else dres2 * c["ff_drop"]
    w2 = params[f"{prefix}.ff.w2"]
    grads[f"{prefix}.ff.w2"] += _weight_grad(c["g"], dff_out)
    grads[f"{prefix}.ff.b2"] += dff_out.reshape(-1, dff_out.shape[-1]).sum(axis=0)
    dg = dff_out @ w2.T
    da1 = dg * gelu_grad(c["a1"], c["gelu_cdf"])
    w1 = params[f"{prefix}.ff.w1"]
    grads[f"{prefix}.ff.w1"] += _weight_grad(c["ln1_out"], da1)
    grads[f"{prefix}.ff.b1"] += da1.reshape(-1, da1.shape[-1]).sum(axis=0)
    dln1_out += da1 @ w1.T

    dres1, dg1, db1 = layer_norm_backward(dln1_out, c["ln1"])
    grads[f"{prefix}.ln1.gain"] += dg1
    grads[f"{prefix}.ln1.bias"] += db1

    dX = dres1.copy()
    dattn_out = dres1 if c["attn_drop"] is None else dres1 * c["attn_drop"]
    w_o = params[f"{prefix}.attn.w_o"]
    grads[f"{prefix}.attn.w_o"] += _weight_grad(c["ctxm"], dattn_out)
    dctxm = dattn_out @ w_o.T
    dctx = _split_heads(dctxm, nh)

    alpha, vh, qh, kh = c["alpha"], c["vh"], c["qh"], c["kh"]
    dalpha = np.matmul(dctx, np.swapaxes(vh, -1, -2))
    dvh = np.matmul(np.swapaxes(alpha, -1, -2), dctx)
    dscores = alpha * (dalpha - np.sum(dalpha * alpha, axis=-1, keepdims=True))
    dscores /= math.sqrt(dh)
    dqh = np.matmul(dscores, kh)
    dkh = np.matmul(np.swapaxes(dscores, -1, -2), qh)

    dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
    X = c["X"]
    for name, dproj in (("w_q", dq), ("w_k", dk), ("w_v", dv)):
        grads[f"{prefix}.attn.{name}"] += _weight_grad(X, dproj)
        dX += dproj @ params[f"{prefix}.attn.{name}"].T
    return dX


def encoder_backward(params: Parameters, cache, dhidden, grads):
    """Propagate dL/dhidden back to every encoder tensor (in-place on grads)."""
    dX = dhidden
    for li in reversed(range(params.config.layer_count)):
        dX = _layer_backward(params, li, dX, cache["layers"][li], grads)
    if cache["emb_drop"] is not None:
        dX = dX * cache["emb_drop"]
    dX, _, _ = layer_norm_backward(dX, cache["emb_ln"])
    ids = cache["ids"]
    np.add.at(grads["tok_emb"], ids, dX)
    grads["pos_emb"][: ids.shape[1]] += dX.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Heads and losses
# ---------------------------------------------------------------------------


def classifier_probs(params: Parameters, h0: np.ndarray) -> np.ndarray:
    logits = h0 @ params["cls_head.w"] + params["cls_head.b"]
    return softmax(logits, axis=-1)


def loss_detection(p, y) -> float:
    """Cross-entropy -y log p1 - (1-y) log p0, clamped away from log(0)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
        y = np.asarray([y])
    y = np.asarray(y, dtype=np.int64)
    picked = np.clip(p[np.arange(len(y)), y], PROB_CLAMP, 1.0)
    return float(-np.log(picked).mean())


def detection_loss_and_grads(
    params: Parameters, ids, key_mask, labels, *, train: bool = False, dropout_rng=None
):
    """Mean detection loss, class probabilities and gradients for a batch.

    The gradient treats the probability clamp as inactive, which holds
    whenever the picked-class probability exceeds the clamp.
    """
    H, _, cache = encoder_forward(params, ids, key_mask, train=train, dropout_rng=dropout_rng)
    h0 = H[:, 0, :]
    p = classifier_probs(params, h0)
    y = np.asarray(labels, dtype=np.int64)
    loss = loss_detection(p, y)

    B = len(y)
    dlogits = p.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    grads = params.zeros_like()
    grads["cls_head.w"] += h0.T @ dlogits
    grads["cls_head.b"] += dlogits.sum(axis=0)
    dH = np.zeros_like(H)
    dH[:, 0, :] = dlogits @ params["cls_head.w"].T
    encoder_backward(params, cache, dH, grads)
    return loss, p, grads


def mlm_loss_and_grads(
    params: Parameters, ids, key_mask, positions, targets, *, train: bool = False, dropout_rng=None
):
    """Mean masked-token cross-entropy over `positions` ((b, t) pairs)."""
    H, _, cache = encoder_forward(params, ids, key_mask, train=train, dropout_rng=dropout_rng)
    b_idx = np.asarray([b for b, _ in positions], dtype=np.int64)
    t_idx = np.asarray([t for _, t in positions], dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    rows = H[b_idx, t_idx]
    logits = rows @ params["mlm_head.w"] + params["mlm_head.b"]
    probs = softmax(logits, axis=-1)
    M = len(targets)
    picked = np.clip(probs[np.arange(M), targets], PROB_CLAMP, 1.0)
    loss = float(-np.log(picked).mean())

    dlogits = probs.copy()
    dlogits[np.arange(M), targets] -= 1.0
    dlogits /= M
    grads = params.zeros_like()
    grads["mlm_head.w"] += rows.T @ dlogits
    grads["mlm_head.b"] += dlogits.sum(axis=0)
    dH = np.zeros_like(H)
    dH[b_idx, t_idx] = dlogits @ params["mlm_head.w"].T
    encoder_backward(params, cache, dH, grads)
    return loss, probs, grads


def mlm_logits(params: Parameters, ids, key_mask, positions) -> np.ndarray:
    H, _, _ = encoder_forward(params, ids, key_mask, train=False)
    b_idx = np.asarray([b for b, _ in positions], dtype=np.int64)
    t_idx = np.asarray([t for _, t in positions], dtype=np.int64)
    return H[b_idx, t_idx] @ params["mlm_head.w"] + params["mlm_head.b"]


# ---------------------------------------------------------------------------
# Single-example inference
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Inference-mode forward results for one example.

    `attention` holds only the last layer's multi-head tensor, with the [CLS]
    query at row 0 of every head.
    """

    hidden: np.ndarray
    attention: np.ndarray
    p: np.ndarray
    encoding: SubtokenEncoding = field(repr=False, default=None)


def forward(params: Parameters, encoding: SubtokenEncoding) -> ForwardTrace:
    """Inference forward: [CLS] prepended, dropout off, last-layer attention kept."""
    ids, key_mask = collate(params.config, [encoding])
    H, alpha, _ = encoder_forward(params, ids, key_mask, train=False)
    p = classifier_probs(params, H[:, 0, :])[0]
    return ForwardTrace(hidden=H[0], attention=alpha[0], p=p, encoding=encoding)


def verdict_from_probs(p) -> int:
    """Buggy (1) iff p_1 >= 0.5; the tie goes to buggy."""
    return 1 if p[1] >= 0.5 else 0


def detect(params: Parameters, encoding: SubtokenEncoding):
    """Binary verdict from a single forward pass."""
    trace = forward(params, encoding)
    return verdict_from_probs(trace.p), trace.p


def predict_probs(params: Parameters, encodings: Sequence[SubtokenEncoding], batch_size: int = 64):
    """Batched inference probabilities, order-preserving."""
    out = []
    for start in range(0, len(encodings), batch_size):
        chunk = encodings[start : start + batch_size]
        ids, key_mask = collate(params.config, chunk)
        H, _, _ = encoder_forward(params, ids, key_mask, train=False)
        out.append(classifier_probs(params, H[:, 0, :]))
    return np.concatenate(out, axis=0)


def backward(params: Parameters, batch):
    """Gradients of the mean detection loss over [(encoding, label), ...]."""
    encodings = [enc for enc, _ in batch]
    labels = [y for _, y in batch]
    ids, key_mask = collate(params.config, encodings)
    _, _, grads = detection_loss_and_grads(params, ids, key_mask, labels, train=False)
    return grads


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_tensor: str
    worst_index: int
    per_tensor: dict[str, float]
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    params: Parameters,
    batch,
    *,
    loss: str = "detection",
    tolerance: float = 1e-4,
    n_samples: int = 50,
    step: float = 1e-5,
    seed: int = 0,
    mask_prob: float = 0.2,
    analytic: dict | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Samples up to `n_samples` coordinates per tensor.  Relative error uses a
    1e-5 denominator floor so finite-difference noise on near-zero
    coordinates is not misread as a gradient bug.  Requires float64.
    """
    if params.config.precision != "float64":
        raise ConfigError("grad_check requires precision='float64'")
    if loss not in ("detection", "mlm"):
        raise ValueError(f"unknown loss {loss!r}")

    encodings = [enc for enc, _ in batch]
    labels = [y for _, y in batch]
    ids, key_mask = collate(params.config, encodings)

    if loss == "detection":
        def loss_fn():
            H, _, _ = encoder_forward(params, ids, key_mask, train=False)
            return loss_detection(classifier_probs(params, H[:, 0, :]), labels)

        if analytic is None:
            _, _, analytic = detection_loss_and_grads(params, ids, key_mask, labels, train=False)
    else:
        mask_rng = np.random.default_rng(seed)
        positions, targets = [], []
        for b, enc in enumerate(encodings):
            cols = [t + 1 for t in range(len(enc.ids)) if mask_rng.random() < mask_prob]
            if not cols:
                cols = [1]
            for t in cols:
                positions.append((b, t))
                targets.append(int(ids[b, t]))
        masked_ids = ids.copy()
        for (b, t) in positions:
            masked_ids[b, t] = params.config.mask_id

        def loss_fn():
            H, _, _ = encoder_forward(params, masked_ids, key_mask, train=False)
            b_idx = np.asarray([b for b, _ in positions])
            t_idx = np.asarray([t for _, t in positions])
            logits = H[b_idx, t_idx] @ params["mlm_head.w"] + params["mlm_head.b"]
            probs = softmax(logits, axis=-1)
            picked = np.clip(probs[np.arange(len(targets)), targets], PROB_CLAMP, 1.0)
            return float(-np.log(picked).mean())

        if analytic is None:
            _, _, analytic = mlm_loss_and_grads(
                params, masked_ids, key_mask, positions, targets, train=False
            )

    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    worst = (0.0, "", -1)
    n_checked = 0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        size = flat.shape[0]
        picks = rng.choice(size, size=min(n_samples, size), replace=False)
        tensor_worst = 0.0
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + step
            up = loss_fn()
            flat[idx] = original - step
            down = loss_fn()
            flat[idx] = original
            fd = (up - down) / (2.0 * step)
            an = float(analytic[name].reshape(-1)[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-5)
            n_checked += 1
            if rel > tensor_worst:
                tensor_worst = rel
            if rel > worst[0]:
                worst = (rel, name, int(idx))
        per_tensor[name] = tensor_worst
    return GradCheckReport(
        max_rel_error=worst[0],
        worst_tensor=worst[1],
        worst_index=worst[2],
        per_tensor=per_tensor,
        n_checked=n_checked,
        tolerance=tolerance,
    )
