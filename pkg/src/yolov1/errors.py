"""Exception hierarchy shared by every module of the package."""


class YoloError(Exception):
    """Base class for all errors raised by yolov1."""


class DegenerateBox(YoloError, ValueError):
    pass


class MalformedXml(YoloError, ValueError):
    pass


class UnknownClass(YoloError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown class {self.name!r}"


class BadBox(YoloError, ValueError):
    pass


class BadLabelLine(YoloError, ValueError):
    def __init__(self, line_no, reason=""):
        super().__init__(line_no, reason)
        self.line_no = line_no
        self.reason = reason

    def __str__(self):
        return f"bad label line {self.line_no}: {self.reason}"


class UnsupportedFormat(YoloError, ValueError):
    pass


class Truncated(YoloError, ValueError):
    pass


class ClassOutOfRange(YoloError, ValueError):
    pass


class ShapeMismatch(YoloError, ValueError):
    pass


class InvalidTarget(YoloError, ValueError):
    pass


class BadFactor(YoloError, ValueError):
    pass


class UnknownArchitecture(YoloError, KeyError):
    pass


class ShapeUnderflow(YoloError, ValueError):
    pass


class WeightMismatch(YoloError, ValueError):
    pass


class BadMagic(WeightMismatch):
    pass


class DimensionMismatch(WeightMismatch):
    pass


class StepOutOfRange(YoloError, IndexError):
    pass
