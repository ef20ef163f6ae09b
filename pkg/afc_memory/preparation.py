"""Spectral tailoring by optical pumping: pit burning, burn-back and clean sweeps.

Ions are grouped in classes labelled by the detuning x of their
1/2g -> 3/2e transition.  A class has the lines

    nu(g, e) = x + excited_offset[e] - ground_offset[g]

and three ground populations that sum to one.  Each burn step excites
every (class, level) with a line under the laser and lets the excited
population decay back through the branching matrix, which is a linear
map per class; one full sweep is therefore a product of 3x3 matrices that
can be raised to the number of repeats.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .errors import SequenceInvariantError, ValidationError, WindowOutOfRangeError
from .models import OpticalDepthProfile, SpectralGrid
from .spinwave import MaterialParams
from .utils import check_keys, next_power_of_two, require_non_negative, require_positive

logger = logging.getLogger(__name__)

GROUND_LABELS = ("1/2g", "3/2g", "5/2g")
EXCITED_LABELS = ("1/2e", "3/2e", "5/2e")
UNIFORM_STRENGTHS = ((1 / 3, 1 / 3, 1 / 3),) * 3


class Lineshape(str, Enum):
    FLAT = "flat"
    LORENTZIAN = "lorentzian"


@dataclass(frozen=True, eq=False)
class IonEnsemble:
    """Ground-state populations of every ion class.

    ``populations[i, g]`` is the fraction of class i in ground level g.
    """

    detunings: np.ndarray
    populations: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        detunings = np.asarray(self.detunings, dtype=float)
        populations = np.asarray(self.populations, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        n = detunings.shape[0]
        if detunings.ndim != 1 or n < 2 or np.any(np.diff(detunings) <= 0):
            raise ValidationError("detunings", "expected an ascending one-dimensional axis")
        if populations.shape != (n, 3):
            raise ValidationError("populations", f"expected shape ({n}, 3), got {populations.shape}")
        if weights.shape != (n,) or np.any(weights < 0):
            raise ValidationError("weights", "expected one non-negative weight per class")
        if np.any(np.abs(populations.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("populations", "per-class populations must sum to 1")
        for array in (detunings, populations, weights):
            array.setflags(write=False)
        object.__setattr__(self, "detunings", detunings)
        object.__setattr__(self, "populations", populations)
        object.__setattr__(self, "weights", weights)

    @property
    def spacing(self) -> float:
        return float(self.detunings[1] - self.detunings[0])

    def with_populations(self, populations: np.ndarray) -> "IonEnsemble":
        return IonEnsemble(self.detunings, populations, self.weights)


@dataclass(frozen=True)
class TransitionTable:
    """Relative oscillator strengths (ground x excited) and hyperfine level offsets in MHz."""

    strengths: Tuple[Tuple[float, ...], ...] = UNIFORM_STRENGTHS
    ground_offsets: Tuple[float, float, float] = (0.0, 10.2, 27.5)
    excited_offsets: Tuple[float, float, float] = (-4.8, 0.0, 4.6)

    def __post_init__(self) -> None:
        matrix = np.asarray(self.strengths, dtype=float)
        if matrix.shape != (3, 3) or np.any(matrix < 0) or np.any(matrix > 1):
            raise ValidationError("strengths", "expected a 3x3 matrix with entries in [0, 1]")
        if np.any(matrix.sum(axis=0) == 0) or np.any(matrix.sum(axis=1) == 0):
            raise ValidationError("strengths", "every row and column needs a non-zero entry")
        object.__setattr__(self, "strengths", tuple(tuple(float(v) for v in row) for row in matrix))
        object.__setattr__(self, "ground_offsets", tuple(float(v) for v in self.ground_offsets))
        object.__setattr__(self, "excited_offsets", tuple(float(v) for v in self.excited_offsets))

    @classmethod
    def from_material(cls, material: MaterialParams, strengths: Optional[Sequence[Sequence[float]]] = None) -> "TransitionTable":
        g1, g2 = material.ground_splittings
        e1, e2 = material.excited_splittings
        return cls(
            strengths=tuple(tuple(row) for row in (strengths or UNIFORM_STRENGTHS)),
            ground_offsets=(0.0, g1, g1 + g2),
            excited_offsets=(-e1, 0.0, e2),
        )

    @property
    def strength_matrix(self) -> np.ndarray:
        return np.array(self.strengths)

    @property
    def line_offsets(self) -> np.ndarray:
        """offsets[g, e] = nu(g, e) - x."""
        return np.asarray(self.excited_offsets)[None, :] - np.asarray(self.ground_offsets)[:, None]

    def transition_frequencies(self, detunings: np.ndarray) -> np.ndarray:
        return np.asarray(detunings)[:, None, None] + self.line_offsets[None, :, :]


@dataclass(frozen=True)
class SweepStage:
    """A frequency sweep discretized into flat-top burn steps, repeated ``repeats`` times."""

    center: float
    span: float
    repeats: int
    bandwidth: float
    step: float = 0.25
    step_duration: float = 1.0
    rate: float = 1.0

    def __post_init__(self) -> None:
        require_positive("span_mhz", self.span)
        require_positive("bandwidth_mhz", self.bandwidth)
        require_positive("step_mhz", self.step)
        require_positive("step_duration_us", self.step_duration)
        require_non_negative("rate_per_us", self.rate)
        if int(self.repeats) < 0:
            raise ValidationError("repeats", "must be >= 0")

    @property
    def frequencies(self) -> np.ndarray:
        count = int(round(self.span / self.step)) + 1
        return np.linspace(self.center - self.span / 2.0, self.center + self.span / 2.0, count)

    @property
    def total_time(self) -> float:
        return len(self.frequencies) * self.step_duration * self.repeats

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center_mhz": self.center,
            "span_mhz": self.span,
            "repeats": int(self.repeats),
            "bandwidth_mhz": self.bandwidth,
            "step_mhz": self.step,
            "step_duration_us": self.step_duration,
            "rate_per_us": self.rate,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str) -> "SweepStage":
        keys = {
            "center_mhz": "center",
            "span_mhz": "span",
            "repeats": "repeats",
            "bandwidth_mhz": "bandwidth",
            "step_mhz": "step",
            "step_duration_us": "step_duration",
            "rate_per_us": "rate",
        }
        check_keys(data, keys, ("center_mhz", "span_mhz", "repeats", "bandwidth_mhz"), prefix=prefix)
        return cls(**{keys[k]: (int(v) if k == "repeats" else float(v)) for k, v in data.items()})


@dataclass(frozen=True)
class BurnBackPulse:
    """Burn-back pulse creating a comb peak at ``frequency`` (read-transition detuning).

    The laser sits on the 5/2g -> 3/2e line of the class at ``frequency``.
    """

    frequency: float
    duration: float = 100.0
    repeats: int = 100

    def __post_init__(self) -> None:
        require_positive("duration_us", self.duration)
        if int(self.repeats) < 0:
            raise ValidationError("repeats", "must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return {"frequency_mhz": self.frequency, "duration_us": self.duration, "repeats": int(self.repeats)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BurnBackPulse":
        check_keys(data, {"frequency_mhz", "duration_us", "repeats"}, ("frequency_mhz",), prefix="preparation.burn_back.")
        return cls(float(data["frequency_mhz"]), float(data.get("duration_us", 100.0)), int(data.get("repeats", 100)))


def default_pit() -> SweepStage:
    return SweepStage(center=0.0, span=12.0, repeats=100, bandwidth=6.0)


def default_clean() -> SweepStage:
    return SweepStage(center=-10.2, span=2.0, repeats=1000, bandwidth=0.25)


@dataclass(frozen=True)
class PrepSequence:
    pit: SweepStage = field(default_factory=default_pit)
    burn_back: Tuple[BurnBackPulse, ...] = ()
    burn_back_bandwidth: float = 0.1
    burn_back_rate: float = 0.05
    clean: SweepStage = field(default_factory=default_clean)
    t_prep: float = 200_000.0
    t_w: float = 1000.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "burn_back", tuple(self.burn_back))
        require_positive("burn_back_bandwidth_mhz", self.burn_back_bandwidth)
        require_non_negative("burn_back_rate_per_us", self.burn_back_rate)
        require_non_negative("t_w_us", self.t_w)
        if self.t_prep < self.total_pulse_time:
            raise SequenceInvariantError(
                f"t_prep {self.t_prep} us is shorter than the pulses it contains ({self.total_pulse_time} us)"
            )

    @property
    def total_pulse_time(self) -> float:
        burn_back = sum(p.duration * p.repeats for p in self.burn_back)
        return self.pit.total_time + burn_back + self.clean.total_time

    @classmethod
    def comb(
        cls, num_teeth: int = 5, delta: float = 0.5, center: float = 0.0, **kwargs: Any
    ) -> "PrepSequence":
        """Default sequence with burn-back peaks for a comb of ``num_teeth`` at spacing ``delta``."""
        offsets = (np.arange(num_teeth) - (num_teeth - 1) / 2.0) * delta
        return cls(burn_back=tuple(BurnBackPulse(float(center + o)) for o in offsets), **kwargs)

    @classmethod
    def empty(cls) -> "PrepSequence":
        return cls(pit=replace(default_pit(), repeats=0), burn_back=(), clean=replace(default_clean(), repeats=0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pit": self.pit.to_dict(),
            "burn_back": [p.to_dict() for p in self.burn_back],
            "burn_back_bandwidth_mhz": self.burn_back_bandwidth,
            "burn_back_rate_per_us": self.burn_back_rate,
            "clean": self.clean.to_dict(),
            "t_prep_us": self.t_prep,
            "t_w_us": self.t_w,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PrepSequence":
        check_keys(
            data,
            {"pit", "burn_back", "burn_back_bandwidth_mhz", "burn_back_rate_per_us", "clean", "t_prep_us", "t_w_us"},
            prefix="preparation.",
        )
        defaults = cls()
        return cls(
            pit=SweepStage.from_dict(data["pit"], "preparation.pit.") if "pit" in data else defaults.pit,
            burn_back=tuple(BurnBackPulse.from_dict(p) for p in data.get("burn_back", [])),
            burn_back_bandwidth=float(data.get("burn_back_bandwidth_mhz", defaults.burn_back_bandwidth)),
            burn_back_rate=float(data.get("burn_back_rate_per_us", defaults.burn_back_rate)),
            clean=SweepStage.from_dict(data["clean"], "preparation.clean.") if "clean" in data else defaults.clean,
            t_prep=float(data.get("t_prep_us", defaults.t_prep)),
            t_w=float(data.get("t_w_us", defaults.t_w)),
        )


def unburned_ensemble(axis: Tuple[float, float] = (-20.0, 45.0), spacing: float = 0.02) -> IonEnsemble:
    """Flat inhomogeneous line with populations spread evenly over the ground levels."""
    require_positive("spacing_mhz", spacing)
    lo, hi = axis
    if hi <= lo:
        raise ValidationError("axis", f"empty detuning axis [{lo}, {hi}]")
    count = int(round((hi - lo) / spacing)) + 1
    detunings = lo + np.arange(count) * spacing
    populations = np.full((count, 3), 1.0 / 3.0)
    return IonEnsemble(detunings, populations, np.ones(count))


def _excitation(offsets: np.ndarray, bandwidth: float, lineshape: Lineshape) -> np.ndarray:
    if lineshape is Lineshape.LORENTZIAN:
        return 1.0 / (1.0 + (2.0 * offsets / bandwidth) ** 2)
    return (np.abs(offsets) <= bandwidth / 2.0 + 1e-12).astype(float)


def step_propagator(
    detunings: np.ndarray,
    laser_frequency: float,
    bandwidth: float,
    rate: float,
    duration: float,
    table: TransitionTable,
    branching: np.ndarray,
    lineshape: Lineshape = Lineshape.FLAT,
) -> np.ndarray:
    """Per-class 3x3 population propagator of one burn step, shape (n, 3, 3)."""
    lines = table.transition_frequencies(detunings)
    excitation = rate * table.strength_matrix[None, :, :] * _excitation(lines - laser_frequency, bandwidth, lineshape)
    # generator[i, g', g] = sum_e excitation[i, g, e] * branching[e, g'] - delta(g, g') * pump[i, g]
    pump = excitation.sum(axis=2)
    generator = np.einsum("nge,eh->nhg", excitation, branching)
    generator[:, [0, 1, 2], [0, 1, 2]] -= pump
    propagators = np.broadcast_to(np.eye(3), generator.shape).copy()
    active = np.any(pump > 0, axis=1)
    if np.any(active):
        propagators[active] = expm(generator[active] * duration)
    return propagators


def _apply(ensemble: IonEnsemble, propagators: np.ndarray) -> IonEnsemble:
    populations = np.einsum("nhg,ng->nh", propagators, ensemble.populations)
    # renormalize away rounding drift from the matrix exponential
    populations = np.clip(populations, 0.0, None)
    populations /= populations.sum(axis=1, keepdims=True)
    return ensemble.with_populations(populations)


def burn_step(
    ensemble: IonEnsemble,
    laser_frequency: float,
    bandwidth: float,
    rate: float,
    duration: float,
    table: TransitionTable,
    branching: np.ndarray,
    lineshape: Lineshape = Lineshape.FLAT,
) -> IonEnsemble:
    """Pump every (class, level) with a line within the excitation window of the laser."""
    require_non_negative("rate", rate)
    require_non_negative("duration", duration)
    require_positive("bandwidth", bandwidth)
    if rate == 0 or duration == 0:
        return ensemble
    propagators = step_propagator(
        ensemble.detunings, laser_frequency, bandwidth, rate, duration, table, np.asarray(branching), Lineshape(lineshape)
    )
    return _apply(ensemble, propagators)


def _sweep_propagator(
    detunings: np.ndarray,
    steps: Iterable[Tuple[float, float, float, float]],
    table: TransitionTable,
    branching: np.ndarray,
    lineshape: Lineshape,
) -> np.ndarray:
    total = np.broadcast_to(np.eye(3), (len(detunings), 3, 3)).copy()
    for frequency, bandwidth, rate, duration in steps:
        step = step_propagator(detunings, frequency, bandwidth, rate, duration, table, branching, lineshape)
        total = step @ total
    return total


def _run_sweep(ensemble: IonEnsemble, stage: SweepStage, table: TransitionTable, branching: np.ndarray, lineshape: Lineshape) -> IonEnsemble:
    if stage.repeats == 0 or stage.rate == 0:
        return ensemble
    steps = [(f, stage.bandwidth, stage.rate, stage.step_duration) for f in stage.frequencies]
    one_pass = _sweep_propagator(ensemble.detunings, steps, table, branching, lineshape)
    return _apply(ensemble, np.linalg.matrix_power(one_pass, int(stage.repeats)))


def burn_back_laser_frequency(peak: float, table: TransitionTable) -> float:
    """Laser frequency on the 5/2g -> 3/2e line of the class whose read line sits at ``peak``."""
    return float(peak + table.line_offsets[2, 1])


def run_preparation(
    ensemble: IonEnsemble,
    seq: PrepSequence,
    table: TransitionTable,
    branching: Optional[np.ndarray] = None,
    lineshape: Lineshape = Lineshape.FLAT,
    stages: Sequence[str] = ("pit", "burn_back", "clean"),
) -> IonEnsemble:
    """Apply the pit sweep, the burn-back pulses and the clean sweep, in that order."""
    unknown = set(stages) - {"pit", "burn_back", "clean"}
    if unknown:
        raise ValidationError("stages", f"unknown preparation stages {sorted(unknown)}")
    branching = MaterialParams().branching_matrix if branching is None else np.asarray(branching, dtype=float)
    lineshape = Lineshape(lineshape)

    if "pit" in stages:
        ensemble = _run_sweep(ensemble, seq.pit, table, branching, lineshape)
        logger.debug("pit stage done: %d repeats over %.3g MHz", seq.pit.repeats, seq.pit.span)

    if "burn_back" in stages and seq.burn_back and seq.burn_back_rate > 0:
        by_repeats: Dict[int, List[BurnBackPulse]] = {}
        for pulse in seq.burn_back:
            by_repeats.setdefault(int(pulse.repeats), []).append(pulse)
        for repeats, pulses in sorted(by_repeats.items(), reverse=True):
            steps = [
                (burn_back_laser_frequency(p.frequency, table), seq.burn_back_bandwidth, seq.burn_back_rate, p.duration)
                for p in pulses
            ]
            one_pass = _sweep_propagator(ensemble.detunings, steps, table, branching, lineshape)
            ensemble = _apply(ensemble, np.linalg.matrix_power(one_pass, repeats))
        logger.debug("burn-back stage done: %d peaks", len(seq.burn_back))

    if "clean" in stages:
        ensemble = _run_sweep(ensemble, seq.clean, table, branching, lineshape)
        logger.debug("clean stage done: %d repeats around %.3g MHz", seq.clean.repeats, seq.clean.center)
    return ensemble


def absorption_spectrum(
    ensemble: IonEnsemble,
    table: TransitionTable,
    d_full: float,
    read_transition_window: Tuple[float, float] = (-12.0, 12.0),
    linewidth: float = 0.0,
    levels: Sequence[int] = (0, 1, 2),
) -> OpticalDepthProfile:
    """Optical depth seen by a weak read pulse, normalized so the unburned line sits at ``d_full``.

    ``levels`` restricts the sum to absorption out of the listed ground
    levels; ``linewidth`` convolves the result with a Gaussian of that FWHM.
    """
    lo, hi = (float(v) for v in read_transition_window)
    if hi <= lo:
        raise WindowOutOfRangeError(f"empty read window [{lo}, {hi}]")
    offsets = table.line_offsets
    x_min, x_max = ensemble.detunings[0], ensemble.detunings[-1]
    if lo < x_min + offsets.max() or hi > x_max + offsets.min():
        raise WindowOutOfRangeError(
            f"read window [{lo}, {hi}] MHz needs classes beyond the simulated axis [{x_min}, {x_max}] MHz"
        )

    num_points = next_power_of_two(math.ceil((hi - lo) / ensemble.spacing))
    grid = SpectralGrid(center_frequency=(lo + hi) / 2.0, span=hi - lo, num_points=max(num_points, 2))
    nu = grid.frequencies
    strengths = table.strength_matrix

    density = np.zeros_like(nu)
    reference = np.zeros_like(nu)
    for g in range(3):
        weighted = ensemble.populations[:, g] * ensemble.weights
        for e in range(3):
            source = nu - offsets[g, e]
            reference += strengths[g, e] * np.interp(source, ensemble.detunings, ensemble.weights) / 3.0
            if g in levels:
                density += strengths[g, e] * np.interp(source, ensemble.detunings, weighted)

    depth = d_full * density / np.where(reference > 0, reference, 1.0)
    if linewidth > 0:
        sigma_points = linewidth / (2.0 * math.sqrt(2.0 * math.log(2.0))) / grid.resolution
        depth = gaussian_filter1d(depth, sigma_points, mode="nearest")
    return OpticalDepthProfile(grid, np.clip(depth, 0.0, None))


def locate_peaks(
    profile: OpticalDepthProfile,
    window: Optional[Tuple[float, float]] = None,
    min_prominence: Optional[float] = None,
) -> np.ndarray:
    """Frequencies of absorption peaks inside ``window`` (default: whole profile)."""
    nu = profile.frequencies
    depth = np.asarray(profile.depth)
    mask = np.ones_like(nu, dtype=bool) if window is None else (nu >= window[0]) & (nu <= window[1])
    if not np.any(mask):
        return np.zeros(0)
    segment = depth[mask]
    prominence = min_prominence if min_prominence is not None else 0.2 * float(np.max(segment))
    if prominence <= 0:
        return np.zeros(0)
    indices, _ = find_peaks(segment, prominence=prominence)
    return nu[mask][indices]


def pit_residual(
    profile: OpticalDepthProfile,
    window: Tuple[float, float],
    d_full: float,
    exclude: Sequence[float] = (),
    exclusion_halfwidth: float = 0.5,
) -> float:
    """Largest depth inside ``window`` relative to ``d_full``, ignoring regions around ``exclude``."""
    require_positive("d_full", d_full)
    nu = profile.frequencies
    mask = (nu >= window[0]) & (nu <= window[1])
    for frequency in exclude:
        mask &= np.abs(nu - frequency) > exclusion_halfwidth
    if not np.any(mask):
        raise WindowOutOfRangeError(f"window [{window[0]}, {window[1]}] MHz has no samples left")
    return float(np.max(np.asarray(profile.depth)[mask]) / d_full)


def clean_window_population(ensemble: IonEnsemble, table: TransitionTable, clean: SweepStage) -> float:
    """Mean 3/2g population of the classes whose 3/2g -> 3/2e line lies in the clean window."""
    lines = ensemble.detunings + table.line_offsets[1, 1]
    mask = np.abs(lines - clean.center) <= clean.span / 2.0
    if not np.any(mask):
        raise WindowOutOfRangeError("clean window contains no ion class")
    return float(np.mean(ensemble.populations[mask, 1]))


def population_rows(ensemble: IonEnsemble) -> List[Tuple[float, float, float, float]]:
    """Rows (detuning_mhz, p_12g, p_32g, p_52g) for the population map export."""
    return [
        (float(x), float(p[0]), float(p[1]), float(p[2]))
        for x, p in zip(ensemble.detunings, ensemble.populations)
    ]
