"""Exception types shared across the package."""

from __future__ import annotations


class PerceptError(Exception):
    """Base class for all package errors."""


class SchemaError(PerceptError):
    """A row of an annotation file violates the file schema."""

    def __init__(self, row: int, column: str, reason: str):
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"row {row}, column {column!r}: {reason}")


class DuplicateAnnotationId(PerceptError):
    pass


class EmptyInput(PerceptError):
    pass


class PreconditionViolation(PerceptError):
    pass


class InsufficientRaters(PerceptError):
    pass


class InsufficientData(PerceptError):
    pass


class EmptyGroup(InsufficientData):
    pass


class DegenerateVariance(PerceptError):
    pass


class ConfigError(PerceptError):
    pass
