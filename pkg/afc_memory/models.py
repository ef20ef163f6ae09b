"""Shared value types for spectra, comb geometry and optical traces.

Units follow one repository-wide convention: ordinary (not angular)
frequencies in MHz, times in microseconds, powers in mW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ValidationError
from .utils import is_power_of_two, require_non_negative, require_positive

# sqrt(pi / ln 16): Gaussian area divided by (FWHM * peak height)
GAUSSIAN_AREA_FACTOR = math.sqrt(math.pi / math.log(16.0))


class ToothShape(str, Enum):
    GAUSSIAN = "gaussian"


class PulseShape(str, Enum):
    GAUSSIAN = "gaussian"
    SQUARE = "square"


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform frequency grid, ascending, centred on ``center_frequency``."""

    center_frequency: float
    span: float
    num_points: int

    def __post_init__(self) -> None:
        require_positive("span", self.span)
        if not is_power_of_two(self.num_points) or self.num_points < 2:
            raise ValidationError("num_points", f"must be a power of two >= 2, got {self.num_points!r}")

    @property
    def resolution(self) -> float:
        return self.span / self.num_points

    @property
    def frequencies(self) -> np.ndarray:
        offsets = np.arange(self.num_points) - self.num_points // 2
        return self.center_frequency + offsets * self.resolution


@dataclass(frozen=True)
class CombSpec:
    """Geometry of an atomic frequency comb made of Gaussian teeth."""

    delta: float
    tooth_fwhm: float
    num_teeth: int
    peak_depth: float
    background_depth: float = 0.0
    tooth_shape: ToothShape = ToothShape.GAUSSIAN

    def __post_init__(self) -> None:
        require_positive("delta_mhz", self.delta)
        require_positive("tooth_fwhm_mhz", self.tooth_fwhm)
        if int(self.num_teeth) != self.num_teeth or self.num_teeth < 1:
            raise ValidationError("num_teeth", f"must be a positive integer, got {self.num_teeth!r}")
        require_non_negative("peak_depth", self.peak_depth)
        require_non_negative("background_depth", self.background_depth)
        try:
            object.__setattr__(self, "tooth_shape", ToothShape(self.tooth_shape))
        except ValueError:
            raise ValidationError("tooth_shape", f"unsupported tooth shape {self.tooth_shape!r}") from None
        if self.finesse < 1.0:
            raise ValidationError("tooth_fwhm_mhz", f"finesse delta/tooth_fwhm must be >= 1, got {self.finesse:.3f}")

    @property
    def finesse(self) -> float:
        return self.delta / self.tooth_fwhm

    @property
    def bandwidth(self) -> float:
        return self.num_teeth * self.delta

    @property
    def storage_time(self) -> float:
        """Rephasing time tau = 1/delta in microseconds."""
        return 1.0 / self.delta

    @property
    def tooth_positions(self) -> np.ndarray:
        """Tooth centres relative to the comb centre."""
        return (np.arange(self.num_teeth) - (self.num_teeth - 1) / 2.0) * self.delta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta_mhz": self.delta,
            "tooth_fwhm_mhz": self.tooth_fwhm,
            "num_teeth": int(self.num_teeth),
            "peak_depth": self.peak_depth,
            "background_depth": self.background_depth,
            "tooth_shape": self.tooth_shape.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CombSpec":
        allowed = {"delta_mhz", "tooth_fwhm_mhz", "num_teeth", "peak_depth", "background_depth", "tooth_shape"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValidationError(unknown[0], "unknown comb key")
        for key in ("delta_mhz", "tooth_fwhm_mhz", "num_teeth", "peak_depth"):
            if key not in data:
                raise ValidationError(key, "missing required comb key")
        return cls(
            delta=float(data["delta_mhz"]),
            tooth_fwhm=float(data["tooth_fwhm_mhz"]),
            num_teeth=int(data["num_teeth"]),
            peak_depth=float(data["peak_depth"]),
            background_depth=float(data.get("background_depth", 0.0)),
            tooth_shape=data.get("tooth_shape", ToothShape.GAUSSIAN.value),
        )


@dataclass(frozen=True, eq=False)
class OpticalDepthProfile:
    """Sampled optical depth d(nu) on a spectral grid."""

    grid: SpectralGrid
    depth: np.ndarray

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=float)
        if depth.shape != (self.grid.num_points,):
            raise ValidationError("depth", f"expected {self.grid.num_points} samples, got shape {depth.shape}")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise ValidationError("depth", "optical depth must be finite and non-negative")
        depth.setflags(write=False)
        object.__setattr__(self, "depth", depth)

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.frequencies

    def total_weight(self) -> float:
        """Integral of d(nu) over the grid (rectangle rule)."""
        return float(np.sum(self.depth) * self.grid.resolution)


@dataclass(frozen=True)
class CombDesign:
    comb: CombSpec
    predicted_afc_efficiency: float
    predicted_3le_efficiency: float
    mode_capacity: int

    def __post_init__(self) -> None:
        if self.mode_capacity > self.comb.num_teeth:
            raise ValidationError("mode_capacity", "cannot exceed the number of teeth")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "comb": self.comb.to_dict(),
            "storage_time_us": self.comb.storage_time,
            "finesse": self.comb.finesse,
            "predicted_afc_efficiency": self.predicted_afc_efficiency,
            "predicted_3le_efficiency": self.predicted_3le_efficiency,
            "mode_capacity": self.mode_capacity,
        }


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid of ``num_points`` samples starting at ``start_time``."""

    duration: float
    num_points: int
    start_time: float = 0.0

    def __post_init__(self) -> None:
        require_positive("duration", self.duration)
        if not is_power_of_two(self.num_points) or self.num_points < 2:
            raise ValidationError("num_points", f"must be a power of two >= 2, got {self.num_points!r}")

    @property
    def dt(self) -> float:
        return self.duration / self.num_points

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.num_points) * self.dt

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration


@dataclass(frozen=True)
class Pulse:
    """Weak input pulse; ``width`` is the intensity FWHM (gaussian) or full width (square)."""

    shape: PulseShape
    width: float
    arrival_time: float
    carrier_detuning: float = 0.0
    phase: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "shape", PulseShape(self.shape))
        except ValueError:
            raise ValidationError("shape", f"unsupported pulse shape {self.shape!r}") from None
        require_positive("width_us", self.width)
        if not math.isfinite(self.phase):
            raise ValidationError("phase", "must be finite")

    def envelope(self, times: np.ndarray) -> np.ndarray:
        """Complex field envelope sampled at ``times``."""
        t = np.asarray(times, dtype=float) - self.arrival_time
        if self.shape is PulseShape.GAUSSIAN:
            magnitude = np.exp(-2.0 * math.log(2.0) * (t / self.width) ** 2)
        else:
            magnitude = (np.abs(t) <= self.width / 2.0).astype(float)
        carrier = np.exp(1j * (2.0 * math.pi * self.carrier_detuning * t + self.phase))
        return self.amplitude * magnitude * carrier

    def to_dict(self) -> Dict[str, Any]:
        return {
            "shape": self.shape.value,
            "width_us": self.width,
            "arrival_time_us": self.arrival_time,
            "carrier_detuning_mhz": self.carrier_detuning,
            "phase_rad": self.phase,
            "amplitude": self.amplitude,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Pulse":
        allowed = {"shape", "width_us", "arrival_time_us", "carrier_detuning_mhz", "phase_rad", "amplitude"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValidationError(unknown[0], "unknown pulse key")
        return cls(
            shape=data.get("shape", PulseShape.GAUSSIAN.value),
            width=float(data["width_us"]),
            arrival_time=float(data["arrival_time_us"]),
            carrier_detuning=float(data.get("carrier_detuning_mhz", 0.0)),
            phase=float(data.get("phase_rad", 0.0)),
            amplitude=float(data.get("amplitude", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class FieldTrace:
    """Complex optical envelope sampled on a time grid."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=complex)
        if samples.shape != (self.grid.num_points,):
            raise ValidationError("samples", f"expected {self.grid.num_points} samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("samples", "field samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    @property
    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.grid.dt)

    def edge_energy_fraction(self, edge: float = 0.1) -> float:
        """Fraction of the energy that sits in the first and last ``edge`` share of the trace."""
        total = self.energy
        if total == 0:
            return 0.0
        n_edge = max(1, int(round(edge * self.grid.num_points)))
        intensity = self.intensity
        edge_energy = (np.sum(intensity[:n_edge]) + np.sum(intensity[-n_edge:])) * self.grid.dt
        return float(edge_energy / total)

    def scaled(self, factor: complex) -> "FieldTrace":
        return FieldTrace(self.grid, self.samples * factor)

    def __add__(self, other: "FieldTrace") -> "FieldTrace":
        if other.grid != self.grid:
            raise ValidationError("grid", "cannot add traces on different time grids")
        return FieldTrace(self.grid, self.samples + other.samples)


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Complex amplitude response H(nu), stored in ascending frequency order."""

    grid: SpectralGrid
    response: np.ndarray

    def __post_init__(self) -> None:
        response = np.asarray(self.response, dtype=complex)
        if response.shape != (self.grid.num_points,):
            raise ValidationError("response", f"expected {self.grid.num_points} samples, got shape {response.shape}")
        response.setflags(write=False)
        object.__setattr__(self, "response", response)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.response)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.response)


@dataclass(frozen=True)
class EchoWindow:
    center: float
    width: float
    area: float
    peak: float

    @property
    def start(self) -> float:
        return self.center - self.width / 2.0

    @property
    def end(self) -> float:
        return self.center + self.width / 2.0


@dataclass(frozen=True)
class EchoReport:
    windows: List[EchoWindow]
    reference_area: Optional[float] = None

    @property
    def areas(self) -> np.ndarray:
        return np.array([w.area for w in self.windows])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "windows": [
                {"center_us": w.center, "width_us": w.width, "area": w.area, "peak": w.peak}
                for w in self.windows
            ],
            "reference_area": self.reference_area,
        }


@dataclass(frozen=True, eq=False)
class PhotonHistogram:
    """Photon counts per time bin accumulated over ``num_trials`` pulse trains."""

    times: np.ndarray
    counts: np.ndarray
    num_trials: int
    mean_per_trial: float = field(default=0.0)

    @property
    def total_counts(self) -> int:
        return int(np.sum(self.counts))
