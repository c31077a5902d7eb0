"""Exception types shared across the package."""

from __future__ import annotations


class NestcolError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSchema(NestcolError):
    """A schema tree violates a structural invariant."""


class MalformedNames(NestcolError):
    """A set of column names does not describe any valid schema."""


class TypeMismatch(NestcolError):
    """A value does not conform to the schema it is being encoded under."""


class MalformedArrays(NestcolError):
    """Stored arrays are inconsistent with each other or with the schema."""


class TagOutOfRange(NestcolError):
    """A union tag value is outside the declared alternative range."""


class RangeError(NestcolError):
    """A runtime index fell outside the bounds of its list or column."""


class PathError(NestcolError):
    """A random-access path step does not match the schema at that point."""


class MissingColumn(NestcolError):
    """A required column is absent from the store."""


class StoreError(NestcolError):
    """Misuse of a column store (frozen writes, prefix conflicts, ...)."""


class ParseError(NestcolError):
    """Query source text is not valid PQ. Carries a source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


class CompileError(NestcolError):
    """A query misuses a stored object in a way that cannot be compiled.

    Carries the source position of the offending construct.
    """

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


class QueryRuntimeError(NestcolError):
    """Dynamic type error while interpreting a query over materialized values."""
