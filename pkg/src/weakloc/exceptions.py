"""Exception types raised across the package."""


class WeaklocError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(WeaklocError, ValueError):
    """A configuration value violates its documented constraints."""


class NoMutationSite(WeaklocError):
    """The function offers no position where the requested bug can be injected."""


class EmptyCorpus(WeaklocError):
    """A tokenizer was asked to train on an empty corpus."""


class SpecialIdInPayload(WeaklocError):
    """A payload id sequence contains a reserved special id."""


class SequenceTooLong(WeaklocError):
    """An encoded sequence does not fit the model's position table."""


class WindowTooLarge(WeaklocError):
    """The sliding window is wider than the scored sequence."""


class EmptyHeadSet(WeaklocError):
    """An aggregation was requested over zero attention heads."""


class HeadIndexOutOfRange(WeaklocError):
    """A head id lies outside [0, head_count - 1]."""


class NoBuggyExamples(WeaklocError):
    """Head profiling needs buggy examples with ground-truth spans."""


class SpanOutOfBounds(WeaklocError):
    """A token span does not lie inside the sequence."""


class TrainingDiverged(WeaklocError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class VocabularyMismatch(WeaklocError):
    """A checkpoint was produced with a different vocabulary than the one supplied."""
