"""Exception hierarchy shared by every module."""


class ProtoContrastError(ValueError):
    """Base class for all errors raised by the engine."""


class ZeroNorm(ProtoContrastError):
    pass


class EmptyInput(ProtoContrastError):
    pass


class DimMismatch(ProtoContrastError):
    pass


class NonPositiveTemperature(ProtoContrastError):
    pass


class EmptyBatch(ProtoContrastError):
    pass


# ProtoCLR's name for the same condition
BatchEmpty = EmptyBatch


class BatchTooSmall(ProtoContrastError):
    pass


class SingletonAnchor(ProtoContrastError):
    """An anchor has no positives and the active policy forbids skipping it."""

    def __init__(self, index, label):
        super().__init__(f"anchor {index} (class {label}) has no positives in the batch")
        self.index = index
        self.label = label


class OddRowCount(ProtoContrastError):
    pass


class LabelOutOfRange(ProtoContrastError):
    pass


class ShapeMismatch(ProtoContrastError):
    pass


class StaleCache(ProtoContrastError):
    pass


class InsufficientData(ProtoContrastError):
    pass


class MalformedHeader(ProtoContrastError):
    pass


class TruncatedPayload(ProtoContrastError):
    pass


class InconsistentRowLength(ProtoContrastError):
    pass


class ClassTooSmall(ProtoContrastError):
    """A class cannot supply k support items plus at least one query."""

    def __init__(self, class_id, count, k):
        super().__init__(
            f"class {class_id} has {count} examples; a {k}-shot task needs at least {k + 1}"
        )
        self.class_id = class_id
        self.count = count
        self.k = k


class EmptySupport(ProtoContrastError):
    pass


class CounterMismatch(ProtoContrastError):
    pass
