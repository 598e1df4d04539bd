"""
Exception hierarchy shared by the domain, infrastructure and surface layers.
"""


class MtcnnError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MtcnnError, ValueError):
    """Tensor extents do not satisfy a layer's or operation's shape contract."""


class InvalidBoxError(MtcnnError, ValueError):
    """A box has non-positive extent, an out-of-range score or malformed landmarks."""


class BoxOutsideImageError(MtcnnError, ValueError):
    """A crop box does not overlap the image at all."""


class NonFiniteGradientError(MtcnnError):
    def __init__(self, name: str, bad_count: int) -> None:
        super().__init__(f"non-finite gradient in parameter {name!r} ({bad_count} entries)")
        self.name = name
        self.bad_count = bad_count


class DivergenceError(MtcnnError):
    def __init__(self, batch_index: int, value: float) -> None:
        super().__init__(f"training diverged at batch {batch_index}: loss={value!r}")
        self.batch_index = batch_index
        self.value = value


class EmptyPoolError(MtcnnError):
    def __init__(self, pool: str) -> None:
        super().__init__(f"sample pool {pool!r} is empty but the batch ratio requests it")
        self.pool = pool


class WeightsFormatError(MtcnnError):
    """A weights file is truncated, has a bad header or does not match the architecture."""


class ImageFormatError(MtcnnError):
    """An image file could not be decoded."""


class AnnotationParseError(MtcnnError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class UntrainedNetworkError(MtcnnError):
    """A cascade prefix network was used before it was trained or loaded."""


class ConfigError(MtcnnError):
    """Configuration values or files are invalid."""
