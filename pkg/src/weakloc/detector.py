"""Binary bug detector with a scikit-learn estimator surface.

`fit` consumes token sequences and binary labels only; ground-truth bug
spans never enter the training path.  The fitted estimator predicts
buggy/clean labels and exposes the forward traces the localizer consumes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import model as nn
from .bpe import BpeTokenizer, BpeVocabulary, encode, vocab_hash
from .exceptions import VocabularyMismatch
from .model import ForwardTrace, ModelConfig, Parameters
from .training import OptimizerConfig, TrainResult, load_checkpoint, save_checkpoint, train_detection


class TransformerBugDetector(BaseEstimator, ClassifierMixin):
    """Transformer-encoder binary classifier over subtoken sequences.

    Parameters mirror the architecture and optimizer defaults; `tokenizer`
    is a fitted :class:`BpeTokenizer` (one is trained on the fly from the
    training tokens when omitted).
    """

    def __init__(
        self,
        tokenizer: BpeTokenizer | None = None,
        layer_count: int = 2,
        head_count: int = 4,
        model_dim: int = 64,
        ff_dim: int = 128,
        max_len: int = 192,
        dropout_rate: float = 0.1,
        precision: str = "float32",
        learning_rate: float = 1e-3,
        weight_decay: float = 0.01,
        batch_size: int = 64,
        epochs: int = 6,
        seed: int = 0,
    ):
        self.tokenizer = tokenizer
        self.layer_count = layer_count
        self.head_count = head_count
        self.model_dim = model_dim
        self.ff_dim = ff_dim
        self.max_len = max_len
        self.dropout_rate = dropout_rate
        self.precision = precision
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    # -- fitting ------------------------------------------------------------

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            layer_count=self.layer_count,
            head_count=self.head_count,
            model_dim=self.model_dim,
            ff_dim=self.ff_dim,
            max_len=self.max_len,
            dropout_rate=self.dropout_rate,
            precision=self.precision,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
        )

    def fit(self, X, y, validation_data=None, init_params: Parameters | None = None):
        """Train on token sequences X and binary labels y.

        `validation_data` is an (X, y) pair used for best-checkpoint
        selection; without one, the training set doubles as validation.
        `init_params` warm-starts from existing parameters (e.g. a
        masked-token pretrained encoder); its config must match.
        """
        tokenizer = self.tokenizer
        if tokenizer is None:
            tokenizer = BpeTokenizer().fit(X)
        elif not hasattr(tokenizer, "vocabulary_"):
            tokenizer = tokenizer.fit(X)
        vocab = tokenizer.vocabulary_

        if init_params is not None:
            if init_params.config.vocab_size != vocab.size:
                raise VocabularyMismatch(
                    f"init_params vocab_size {init_params.config.vocab_size} "
                    f"does not match tokenizer vocabulary size {vocab.size}"
                )
            params0 = init_params
        else:
            params0 = Parameters.initialize(self.model_config(vocab.size), seed=self.seed)

        if validation_data is None:
            validation_data = (X, y)
        result: TrainResult = train_detection(
            params0,
            vocab,
            X,
            y,
            validation_data[0],
            validation_data[1],
            opt=self.optimizer_config(),
            seed=self.seed,
        )
        self.tokenizer_ = tokenizer
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_valid_accuracy_ = result.best_valid_accuracy
        return self

    # -- inference ----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("TransformerBugDetector is not fitted; call fit first")

    @property
    def vocabulary_(self) -> BpeVocabulary:
        self._check_fitted()
        return self.tokenizer_.vocabulary_

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        encodings = [encode(self.vocabulary_, tokens) for tokens in X]
        return nn.predict_probs(self.params_, encodings, batch_size=self.batch_size)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def trace(self, tokens) -> ForwardTrace:
        """Inference forward for one token sequence, attention included."""
        self._check_fitted()
        return nn.forward(self.params_, encode(self.vocabulary_, tokens))

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path):
        self._check_fitted()
        save_checkpoint(path, self.params_, vocab_hash(self.vocabulary_))

    @classmethod
    def from_checkpoint(cls, path: str | Path, vocab: BpeVocabulary) -> "TransformerBugDetector":
        params, expected_hash = load_checkpoint(path)
        check_vocab_compatible(vocab, expected_hash, context=str(path))
        detector = cls(
            tokenizer=BpeTokenizer.from_vocabulary(vocab),
            layer_count=params.config.layer_count,
            head_count=params.config.head_count,
            model_dim=params.config.model_dim,
            ff_dim=params.config.ff_dim,
            max_len=params.config.max_len,
            dropout_rate=params.config.dropout_rate,
            precision=params.config.precision,
        )
        detector.tokenizer_ = detector.tokenizer
        detector.params_ = params
        detector.history_ = []
        detector.best_epoch_ = -1
        detector.best_valid_accuracy_ = float("nan")
        return detector


def check_vocab_compatible(vocab: BpeVocabulary, expected_hash: str, context: str = "checkpoint"):
    actual = vocab_hash(vocab)
    if actual != expected_hash:
        raise VocabularyMismatch(
            f"{context} was trained with vocabulary {expected_hash[:12]}..., "
            f"but the supplied vocabulary hashes to {actual[:12]}..."
        )
