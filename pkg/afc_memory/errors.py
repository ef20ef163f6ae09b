"""Exception hierarchy for the AFC memory simulator."""

from __future__ import annotations

from typing import Optional


class AfcMemoryError(Exception):
    """Base class for all simulator errors.

    ``code`` is the stable, user-facing error name printed by the CLI.
    """

    code = "afc-memory-error"


class ValidationError(AfcMemoryError):
    """Raised when a value or configuration entry is invalid."""

    code = "validation-error"

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


class ConfigParseError(AfcMemoryError):
    """Raised when a configuration file cannot be parsed."""

    code = "parse-error"

    def __init__(self, path: str, message: str, line: Optional[int] = None, column: Optional[int] = None) -> None:
        location = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{path}{location}: {message}")
        self.path = path
        self.line = line
        self.column = column


class DomainError(AfcMemoryError):
    """Raised when a formula is evaluated outside its domain."""

    code = "domain-error"


class GridError(AfcMemoryError):
    """Base class for grid compatibility problems."""


class GridTooCoarseError(GridError):
    code = "grid-too-coarse"


class CombExceedsSpanError(GridError):
    code = "comb-exceeds-span"


class GridMismatchError(GridError):
    code = "grid-mismatch"


class NoSolutionError(AfcMemoryError):
    """Raised when observables are inconsistent with any comb in bounds."""

    code = "no-solution-in-bounds"


class ConvergenceError(AfcMemoryError):
    code = "non-convergence"


class EmptyBoundsError(AfcMemoryError):
    code = "empty-or-inverted-bounds"


class CapacityInfeasibleError(AfcMemoryError):
    code = "capacity-infeasible"


class BandwidthTooSmallError(AfcMemoryError):
    code = "bandwidth-too-small"


class EchoWindowError(AfcMemoryError):
    """Base class for echo integration window problems."""


class OverlappingWindowsError(EchoWindowError):
    code = "overlapping-windows"


class WindowOutOfRangeError(EchoWindowError):
    code = "window-out-of-range"


class ZeroReferenceError(AfcMemoryError):
    code = "zero-reference"


class UnsortedTimesError(AfcMemoryError):
    code = "unsorted-times"


class SequenceInvariantError(AfcMemoryError):
    """Raised when a storage or preparation sequence is not well ordered."""

    code = "sequence-invariant-violation"


class FitError(AfcMemoryError):
    code = "fit-failure"


class DegenerateDataError(FitError):
    code = "degenerate-data"
