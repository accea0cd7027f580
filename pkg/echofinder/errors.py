from __future__ import annotations


class EchoFinderError(Exception):
    """所有 echofinder 异常的基类。"""

    exit_code = 3


class UsageError(EchoFinderError):
    """命令行参数错误。"""

    exit_code = 1


class DataError(EchoFinderError, ValueError):
    """输入数据或配置不合法。"""

    exit_code = 2


class ConfigError(DataError):
    pass


class BadMagicError(DataError):
    pass


class UnsupportedVersionError(DataError):
    pass


class TruncatedPayloadError(DataError):
    pass


class NonFiniteValueError(DataError):
    pass


class AnnotationFormatError(DataError):
    pass


class BoxOutOfBoundsError(DataError):
    pass


class CorruptModelError(DataError):
    pass


class ModelVersionError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class PlacementError(DataError):
    """合成数据中鱼群无法在尝试上限内无重叠放置。"""


class TrainingDataError(DataError):
    """训练样本缺少某一类别或包含非有限值。"""
