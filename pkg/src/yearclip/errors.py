"""Exception types shared across the package.

``ValidationError`` subclasses map to CLI exit code 1, ``NumericError``
subclasses to exit code 2.
"""

from __future__ import annotations


class YearClipError(Exception):
    pass


class ValidationError(YearClipError, ValueError):
    pass


class NumericError(YearClipError, ArithmeticError):
    pass


class DuplicateId(ValidationError):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate id {record_id!r}")
        self.record_id = record_id


class FieldOutOfRange(ValidationError):
    def __init__(self, record_id: str, field: str, value: object):
        super().__init__(f"record {record_id!r}: field {field!r} out of range ({value!r})")
        self.record_id = record_id
        self.field = field
        self.value = value


class YearOutOfRange(ValidationError):
    def __init__(self, year: float, lo: float, hi: float):
        super().__init__(f"year {year} outside [{lo}, {hi}]")
        self.year = year


class BadMagic(ValidationError):
    pass


class VersionMismatch(ValidationError):
    pass


class TruncatedFile(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class UnknownId(ValidationError):
    def __init__(self, record_id: str):
        super().__init__(f"unknown id {record_id!r}")
        self.record_id = record_id


class MissingInput(ValidationError):
    pass


class NonFiniteGradient(NumericError):
    def __init__(self, names: list[str]):
        super().__init__("non-finite gradient in: " + ", ".join(names))
        self.names = names


class GradcheckFailed(NumericError):
    pass
