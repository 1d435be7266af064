"""
Exceptions Module
Error types raised by the classifier toolchain.

Each error carries the process exit code the CLI reports for it:
2 parse, 3 capacity, 4 structural, 5 verification mismatch.
"""

from typing import Optional


class ClassifierError(Exception):
    """Base class for all classifier toolchain errors."""

    exit_code = 1


class ClassBenchParseError(ClassifierError, ValueError):
    """A ruleset file could not be parsed."""

    exit_code = 2

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        self.message = message
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class TraceParseError(ClassBenchParseError):
    """A packet trace file could not be parsed."""


class NoCuttableDimensionError(ClassifierError, ValueError):
    """No cut can separate the rules of a node."""


class InvalidEncodingError(ClassifierError, ValueError):
    """A bit-packed value does not decode to a canonical field."""

    exit_code = 4


class ImageTooLargeError(ClassifierError, ValueError):
    """The memory image needs more words than a 24-bit address reaches."""

    exit_code = 3


class ImageFormatError(ClassifierError, ValueError):
    """An image file has a bad magic, version or length."""

    exit_code = 4


class StructuralError(ClassifierError, ValueError):
    """A memory image is internally inconsistent."""

    exit_code = 4


class SorterOverflowError(ClassifierError, RuntimeError):
    """More completions are outstanding than the reorder sorter can hold."""


class VerificationMismatch(ClassifierError):
    """Classification disagreed with an expected id or the linear oracle."""

    exit_code = 5

    def __init__(self, mismatches: int, checked: int):
        self.mismatches = mismatches
        self.checked = checked
        super().__init__(f"{mismatches} of {checked} packets mismatched")
