"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(EngineError):
    """Two grids or embedding blocks that must share a shape do not."""


class MalformedRle(EngineError):
    """Run counts are negative or do not sum to height * width."""


class MissingScore(EngineError):
    """A mask entering suppression carries no stability score."""


class ParseError(EngineError):
    """A file could not be parsed against its documented format."""


class MagicMismatch(ParseError):
    """An embeddings file does not start with the expected magic bytes."""


class InvariantViolation(EngineError):
    """Parsed data violates a documented invariant (names the offending id)."""


class AdapterFailure(EngineError):
    """An external adapter process exited nonzero or produced no output."""


class IdMismatch(EngineError):
    """An adapter returned a different id set than was requested."""


class EmptyMask(EngineError):
    """An operation that needs at least one set pixel received an empty mask."""


class ZeroNormRow(EngineError):
    """An embedding row has zero or non-finite norm and cannot be normalized."""


class UnsortedInput(EngineError):
    """Detections must be sorted by descending score before matching."""


class ClassListMismatch(EngineError):
    """Two datasets that must agree on their class lists do not."""


class UnknownImage(EngineError):
    """An image id was requested that the dataset does not contain."""


class TooManyClasses(EngineError):
    """More classes than the single-channel index format can encode."""


class UnnormalizableBox(EngineError):
    """A box cannot be normalized because the image has zero size."""


class SizeMismatch(EngineError):
    """Paired semantic maps have different shapes."""


class ValueOutOfRange(EngineError):
    """A semantic map contains values outside [0, num_classes]."""


class CrowdNotSupported(EngineError):
    """Annotations with iscrowd=1 are rejected."""


class ConfigError(EngineError):
    """A pipeline configuration is incomplete or contradictory."""
