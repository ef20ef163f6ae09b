"""Shared numeric helpers, validation shortcuts and deterministic seeding."""

from __future__ import annotations

import hashlib
import math
from typing import Any, Iterable, Mapping, Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import ValidationError

UNITS_NOTE = "units: frequency MHz, time us, power mW"


def is_power_of_two(value: int) -> bool:
    """Return True for 1, 2, 4, 8, ..."""
    return isinstance(value, (int, np.integer)) and value > 0 and (int(value) & (int(value) - 1)) == 0


def next_power_of_two(value: float) -> int:
    """Smallest power of two that is >= value (at least 1)."""
    if value <= 1:
        return 1
    return 1 << int(math.ceil(math.log2(value) - 1e-12))


def require_positive(key: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ValidationError(key, f"must be a positive finite number, got {value!r}")


def require_non_negative(key: str, value: float) -> None:
    if not (value >= 0 and math.isfinite(value)):
        raise ValidationError(key, f"must be a non-negative finite number, got {value!r}")


def require_fraction(key: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValidationError(key, f"must lie in [0, 1], got {value!r}")


def derive_seed(master_seed: int, label: str) -> int:
    """Derive a 64-bit seed for the stream named ``label``.

    Streams are keyed by (master seed, label hash) so adding a new labelled
    run never perturbs the numbers drawn by existing ones.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    label_key = int.from_bytes(digest[:8], "little")
    sequence = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, label_key])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def make_rng(master_seed: int, label: Optional[str] = None) -> np.random.Generator:
    """Build a Generator for ``label`` (or the master seed itself)."""
    if label is None:
        return np.random.default_rng(int(master_seed))
    return np.random.default_rng(derive_seed(master_seed, label))


def measure_fwhm(x: ArrayLike, y: ArrayLike) -> float:
    """Full width at half maximum of a single-peaked sampled curve.

    Crossing points are located by linear interpolation between samples.
    Returns 0.0 for an all-zero curve.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    peak_index = int(np.argmax(y))
    half = y[peak_index] / 2.0
    if half <= 0:
        return 0.0

    left = peak_index
    while left > 0 and y[left] > half:
        left -= 1
    right = peak_index
    while right < len(y) - 1 and y[right] > half:
        right += 1

    def _cross(i0: int, i1: int) -> float:
        if y[i1] == y[i0]:
            return float(x[i0])
        return float(x[i0] + (half - y[i0]) * (x[i1] - x[i0]) / (y[i1] - y[i0]))

    return _cross(right - 1, right) - _cross(left, left + 1)


def spans_full_turn(phases: Iterable[float]) -> bool:
    """True when the phase list covers at least one full 2*pi turn.

    A periodic sampling such as 0, 30, ..., 330 degrees counts as a full
    turn: the span plus one sampling step must reach 2*pi.
    """
    values = np.unique(np.asarray(list(phases), dtype=float))
    if values.size < 2:
        return False
    step = float(np.median(np.diff(values)))
    return float(values[-1] - values[0]) + step >= 2 * math.pi - 1e-9


def check_keys(data: Mapping[str, Any], allowed: Iterable[str], required: Iterable[str] = (), prefix: str = "") -> None:
    """Reject unknown keys and report the first missing required key by its dotted path."""
    if not isinstance(data, Mapping):
        raise ValidationError(prefix.rstrip(".") or "config", "expected an object")
    allowed = set(allowed)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValidationError(f"{prefix}{unknown[0]}", "unknown key")
    for key in required:
        if key not in data:
            raise ValidationError(f"{prefix}{key}", "missing required key")
