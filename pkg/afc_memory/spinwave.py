"""Spin-wave storage: control-pulse transfer, spin dephasing, partial readouts and laser phase noise.

The optical part of a sequence is linear, so every input bin is propagated
through the comb once and split into its prompt (transmitted) part and its
two-level echo.  The spin-wave layer then only multiplies and delays those
echo waveforms; ``SequenceKernel`` keeps them around so thousands of
phase-noise trials cost a handful of vector operations each.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FitError, SequenceInvariantError, UnsortedTimesError, ValidationError
from .fitting import FitReport, fit_fringe
from .models import CombSpec, FieldTrace, Pulse
from .propagation import conjugate_grids, propagate, render_pulses, transfer_function_from_depth
from .spectral import build_comb_profile
from .utils import (
    check_keys,
    make_rng,
    next_power_of_two,
    require_fraction,
    require_non_negative,
    require_positive,
    spans_full_turn,
)

logger = logging.getLogger(__name__)

UNIFORM_BRANCHING = ((1 / 3, 1 / 3, 1 / 3),) * 3


class ControlRole(str, Enum):
    TRANSFER_IN = "transfer_in"
    READOUT = "readout"


@dataclass(frozen=True)
class MaterialParams:
    """Material constants of the doped crystal (MHz, us, cm, mW)."""

    ground_splittings: Tuple[float, float] = (10.2, 17.3)
    excited_splittings: Tuple[float, float] = (4.8, 4.6)
    t1_excited: float = 164.0
    t2_excited: float = 111.0
    gamma_is: float = 0.0256
    alpha: float = 23.0
    length: float = 0.3
    rabi_ref: float = 0.34
    power_ref: float = 5.7
    branching: Tuple[Tuple[float, ...], ...] = UNIFORM_BRANCHING

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_splittings", tuple(float(v) for v in self.ground_splittings))
        object.__setattr__(self, "excited_splittings", tuple(float(v) for v in self.excited_splittings))
        for key, pair in (("ground_splittings_mhz", self.ground_splittings), ("excited_splittings_mhz", self.excited_splittings)):
            if len(pair) != 2:
                raise ValidationError(key, "expected two splittings")
            for value in pair:
                require_positive(key, value)
        require_positive("t1_excited_us", self.t1_excited)
        require_positive("t2_excited_us", self.t2_excited)
        require_non_negative("gamma_is_mhz", self.gamma_is)
        require_positive("alpha_per_cm", self.alpha)
        require_positive("length_cm", self.length)
        require_positive("rabi_ref_mhz", self.rabi_ref)
        require_positive("power_ref_mw", self.power_ref)

        matrix = np.asarray(self.branching, dtype=float)
        if matrix.shape != (3, 3) or np.any(matrix < 0):
            raise ValidationError("branching", "expected a 3x3 matrix of non-negative entries")
        if np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("branching", "rows must sum to 1")
        object.__setattr__(self, "branching", tuple(tuple(float(v) for v in row) for row in matrix))

    @property
    def d_full(self) -> float:
        """Unburned optical depth alpha * L."""
        return self.alpha * self.length

    @property
    def branching_matrix(self) -> np.ndarray:
        return np.array(self.branching, dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ground_splittings_mhz": list(self.ground_splittings),
            "excited_splittings_mhz": list(self.excited_splittings),
            "t1_excited_us": self.t1_excited,
            "t2_excited_us": self.t2_excited,
            "gamma_is_mhz": self.gamma_is,
            "alpha_per_cm": self.alpha,
            "length_cm": self.length,
            "rabi_ref_mhz": self.rabi_ref,
            "power_ref_mw": self.power_ref,
            "branching": [list(row) for row in self.branching],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], prefix: str = "material.") -> "MaterialParams":
        keys = {
            "ground_splittings_mhz": "ground_splittings",
            "excited_splittings_mhz": "excited_splittings",
            "t1_excited_us": "t1_excited",
            "t2_excited_us": "t2_excited",
            "gamma_is_mhz": "gamma_is",
            "alpha_per_cm": "alpha",
            "length_cm": "length",
            "rabi_ref_mhz": "rabi_ref",
            "power_ref_mw": "power_ref",
            "branching": "branching",
        }
        check_keys(data, keys, prefix=prefix)
        kwargs = {keys[k]: v for k, v in data.items()}
        for name in ("ground_splittings", "excited_splittings"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        if "branching" in kwargs:
            kwargs["branching"] = tuple(tuple(row) for row in kwargs["branching"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ControlPulse:
    start_time: float
    duration: float
    power: float
    phase: float = 0.0
    role: ControlRole = ControlRole.READOUT

    def __post_init__(self) -> None:
        require_positive("duration_us", self.duration)
        require_non_negative("power_mw", self.power)
        try:
            object.__setattr__(self, "role", ControlRole(self.role))
        except ValueError:
            raise ValidationError("role", f"unknown control role {self.role!r}") from None

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def area(self, material: MaterialParams) -> float:
        return pulse_area(self.power, self.duration, material)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "start_time_us": self.start_time,
            "duration_us": self.duration,
            "power_mw": self.power,
            "phase_rad": self.phase,
            "role": self.role.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ControlPulse":
        check_keys(data, {"start_time_us", "duration_us", "power_mw", "phase_rad", "role"}, ("start_time_us", "duration_us", "power_mw"))
        return cls(
            start_time=float(data["start_time_us"]),
            duration=float(data["duration_us"]),
            power=float(data["power_mw"]),
            phase=float(data.get("phase_rad", 0.0)),
            role=data.get("role", ControlRole.READOUT.value),
        )


@dataclass(frozen=True)
class PhaseNoiseModel:
    """Lorentzian laser line of FWHM ``linewidth`` (MHz) modelled as a Wiener phase."""

    linewidth: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        require_non_negative("linewidth_mhz", self.linewidth)

    def to_dict(self) -> Dict[str, Any]:
        return {"linewidth_mhz": self.linewidth, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PhaseNoiseModel":
        check_keys(data, {"linewidth_mhz", "seed"}, prefix="noise.")
        return cls(linewidth=float(data.get("linewidth_mhz", 0.0)), seed=int(data.get("seed", 0)))


@dataclass(frozen=True)
class StorageSequence:
    """Input time bins plus the control pulses acting on them.

    ``t_w`` is the wait between preparation and the first input; it does not
    enter the optical dynamics and is kept for provenance.
    """

    inputs: Tuple[Pulse, ...]
    controls: Tuple[ControlPulse, ...]
    comb: CombSpec
    material: MaterialParams = field(default_factory=MaterialParams)
    noise: PhaseNoiseModel = field(default_factory=PhaseNoiseModel)
    t_w: float = 0.0
    apply_optical_t2: bool = False
    mc_spins: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "controls", tuple(sorted(self.controls, key=lambda c: c.start_time)))
        if not self.inputs:
            raise SequenceInvariantError("a storage sequence needs at least one input bin")
        if int(self.mc_spins) < 0:
            raise ValidationError("mc_spins", "must be >= 0")

        controls = self.controls
        for previous, current in zip(controls, controls[1:]):
            if current.start_time < previous.end_time - 1e-12:
                raise SequenceInvariantError(
                    f"control at {current.start_time} us starts before the previous one ends ({previous.end_time} us)"
                )
        if not controls:
            return
        transfers = [c for c in controls if c.role is ControlRole.TRANSFER_IN]
        if len(transfers) != 1 or controls[0].role is not ControlRole.TRANSFER_IN:
            raise SequenceInvariantError("the first control must be the single transfer_in pulse")

        transfer = controls[0]
        last_arrival = max(p.arrival_time for p in self.inputs)
        if transfer.start_time < last_arrival:
            raise SequenceInvariantError("transfer_in must follow the last input bin")
        if transfer.start_time >= last_arrival + self.comb.storage_time:
            raise SequenceInvariantError(
                f"transfer_in at {transfer.start_time} us comes after the re-emission time "
                f"{last_arrival + self.comb.storage_time} us"
            )

    @property
    def transfer(self) -> Optional[ControlPulse]:
        return self.controls[0] if self.controls else None

    @property
    def readouts(self) -> Tuple[ControlPulse, ...]:
        return self.controls[1:]

    @property
    def storage_time(self) -> float:
        """T_S: delay between the transfer pulse and the first readout."""
        if len(self.controls) < 2:
            return 0.0
        return self.controls[1].start_time - self.controls[0].start_time

    def with_input_phase(self, index: int, phase: float) -> "StorageSequence":
        inputs = list(self.inputs)
        inputs[index] = dataclasses.replace(inputs[index], phase=phase)
        return dataclasses.replace(self, inputs=tuple(inputs))

    def with_control_phase(self, index: int, phase: float) -> "StorageSequence":
        controls = list(self.controls)
        controls[index] = dataclasses.replace(controls[index], phase=phase)
        return dataclasses.replace(self, controls=tuple(controls))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "inputs": [p.to_dict() for p in self.inputs],
            "controls": [c.to_dict() for c in self.controls],
            "comb": self.comb.to_dict(),
            "material": self.material.to_dict(),
            "noise": self.noise.to_dict(),
            "t_w_us": self.t_w,
            "apply_optical_t2": self.apply_optical_t2,
            "mc_spins": int(self.mc_spins),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StorageSequence":
        check_keys(
            data,
            {"inputs", "controls", "comb", "material", "noise", "t_w_us", "apply_optical_t2", "mc_spins"},
            ("inputs", "comb"),
        )
        return cls(
            inputs=tuple(Pulse.from_dict(p) for p in data["inputs"]),
            controls=tuple(ControlPulse.from_dict(c) for c in data.get("controls", [])),
            comb=CombSpec.from_dict(data["comb"]),
            material=MaterialParams.from_dict(data.get("material", {})),
            noise=PhaseNoiseModel.from_dict(data.get("noise", {})),
            t_w=float(data.get("t_w_us", 0.0)),
            apply_optical_t2=bool(data.get("apply_optical_t2", False)),
            mc_spins=int(data.get("mc_spins", 0)),
        )


@dataclass(frozen=True)
class Emission:
    readout_index: int
    time: float
    amplitude: complex
    energy: float


@dataclass(frozen=True)
class ModeRecord:
    """Energy bookkeeping of one input bin through absorb, transfer and readout."""

    index: int
    arrival_time: float
    input_energy: float
    absorbed_energy: float
    echo_energy: float
    written_fraction: float
    residual_echo_energy: float
    emissions: Tuple[Emission, ...]
    residual_spin_fraction: float

    @property
    def emitted_energy(self) -> float:
        return float(sum(e.energy for e in self.emissions))


@dataclass(frozen=True)
class ModeLedger:
    modes: Tuple[ModeRecord, ...]

    def check_no_gain(self, tolerance: float = 1e-9) -> None:
        for mode in self.modes:
            out = mode.emitted_energy + mode.residual_echo_energy
            if out > mode.absorbed_energy * (1 + tolerance) + tolerance:
                raise SequenceInvariantError(
                    f"mode {mode.index} emits {out:.6g} but absorbed only {mode.absorbed_energy:.6g}"
                )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "modes": [
                {
                    "index": m.index,
                    "arrival_time_us": m.arrival_time,
                    "input_energy": m.input_energy,
                    "absorbed_energy": m.absorbed_energy,
                    "echo_energy": m.echo_energy,
                    "written_fraction": m.written_fraction,
                    "residual_echo_energy": m.residual_echo_energy,
                    "residual_spin_fraction": m.residual_spin_fraction,
                    "emissions": [
                        {
                            "readout_index": e.readout_index,
                            "time_us": e.time,
                            "amplitude": [e.amplitude.real, e.amplitude.imag],
                            "energy": e.energy,
                        }
                        for e in m.emissions
                    ],
                }
                for m in self.modes
            ]
        }


def pulse_area(power: float, duration: float, material: MaterialParams) -> float:
    """Rabi pulse area 2*pi*Omega_ref*sqrt(P/P_ref)*t in radians."""
    require_non_negative("power_mw", power)
    require_non_negative("duration_us", duration)
    return 2.0 * math.pi * material.rabi_ref * math.sqrt(power / material.power_ref) * duration


def power_for_area(theta: float, duration: float, material: MaterialParams) -> float:
    """Control power giving pulse area ``theta`` over ``duration``."""
    require_non_negative("theta", theta)
    require_positive("duration_us", duration)
    return material.power_ref * (theta / (2.0 * math.pi * material.rabi_ref * duration)) ** 2


def transfer_efficiency(theta: float) -> float:
    return math.sin(theta / 2.0) ** 2


def afc_area_vs_power(theta: float, eta_afc: float, input_area: float = 1.0) -> float:
    """Two-level echo area left after a transfer pulse of area ``theta``."""
    return input_area * eta_afc / 2.0 * (1.0 + math.cos(theta))


def three_level_vs_power(theta: float, eta_afc: float) -> float:
    """Spin-wave echo efficiency for identical transfer and readout areas."""
    return eta_afc / 4.0 * (1.0 - math.cos(theta)) ** 2


def spin_decay_factor(gamma_is: float, t_s: float) -> float:
    """Gaussian spin-inhomogeneous decay exp(-(gamma*T)^2 * pi^2 / (2 ln 2))."""
    require_non_negative("gamma_is_mhz", gamma_is)
    require_non_negative("t_s_us", t_s)
    return math.exp(-((gamma_is * t_s) ** 2) * math.pi**2 / (2.0 * math.log(2.0)))


def half_decay_time(gamma_is: float) -> float:
    """Storage time at which spin_decay_factor drops to 1/2 (inf for gamma_is = 0)."""
    require_non_negative("gamma_is_mhz", gamma_is)
    if gamma_is == 0:
        return math.inf
    return math.sqrt(2.0) * math.log(2.0) / (math.pi * gamma_is)


def _spin_detunings(gamma_is: float, samples: int, seed: int) -> np.ndarray:
    sigma = gamma_is / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    return np.random.default_rng(seed).normal(0.0, sigma, size=int(samples))


def mc_spin_decay(gamma_is: float, t_s: float, samples: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo estimate |<exp(2*pi*i*delta*T)>|^2 over Gaussian spin detunings."""
    require_non_negative("gamma_is_mhz", gamma_is)
    if int(samples) < 1000:
        raise ValidationError("samples", f"need at least 1000 samples, got {samples}")
    if gamma_is == 0:
        return 1.0
    detunings = _spin_detunings(gamma_is, samples, seed)
    return float(np.abs(np.mean(np.exp(2j * math.pi * detunings * t_s))) ** 2)


def sample_laser_phase(
    noise: PhaseNoiseModel,
    times: Sequence[float],
    realizations: Optional[int] = None,
    label: str = "laser",
) -> np.ndarray:
    """Wiener laser phase at ``times``, zero at the first time.

    Increments over dt have variance 2*pi*linewidth*dt.  Returns shape
    (len(times),) or (realizations, len(times)).
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise UnsortedTimesError("laser phase times must be sorted ascending")
    shape = (len(times),) if realizations is None else (int(realizations), len(times))
    if noise.linewidth == 0 or len(times) == 0:
        return np.zeros(shape)

    rng = make_rng(noise.seed, label)
    scale = np.sqrt(2.0 * math.pi * noise.linewidth * np.diff(times))
    rows = 1 if realizations is None else int(realizations)
    increments = rng.normal(size=(rows, len(times) - 1)) * scale
    phases = np.concatenate([np.zeros((rows, 1)), np.cumsum(increments, axis=1)], axis=1)
    return phases[0] if realizations is None else phases


def _shift(samples: np.ndarray, steps: int) -> np.ndarray:
    shifted = np.zeros_like(samples)
    if steps <= 0:
        return samples.copy()
    if steps < len(samples):
        shifted[..., steps:] = samples[..., :-steps]
    return shifted


class SequenceKernel:
    """Deterministic part of a storage sequence, ready for many noise realizations."""

    def __init__(self, sequence: StorageSequence) -> None:
        self.sequence = sequence
        comb = sequence.comb
        material = sequence.material
        self.tau = comb.storage_time

        widths = [p.width for p in sequence.inputs]
        arrivals = [p.arrival_time for p in sequence.inputs]
        transfer = sequence.transfer
        readout_delays = [c.start_time - transfer.start_time for c in sequence.readouts] if transfer else []
        earliest = min(arrivals) - 4.0 * max(widths)
        latest = max(arrivals) + self.tau + max(readout_delays, default=0.0) + 4.0 * max(widths) + self.tau
        span = float(next_power_of_two(max(4.0 * comb.bandwidth, 4.0 / min(widths))))
        duration = float(next_power_of_two(max(8.0 / comb.tooth_fwhm, (latest - earliest) / 0.8)))
        num_points = int(round(span * duration))
        dt = duration / num_points
        start = math.floor((earliest - 0.1 * duration) / dt) * dt
        self.grid, spectral_grid = conjugate_grids(duration, num_points, start_time=start)
        logger.debug("sequence grid: %d points, dt=%g us, [%g, %g] us", num_points, dt, start, start + duration)

        tf = transfer_function_from_depth(build_comb_profile(comb, spectral_grid))
        optical_t2 = material.t2_excited if sequence.apply_optical_t2 else None
        times = self.grid.times

        prompts, echoes = [], []
        self.input_energies: List[float] = []
        self.absorbed_energies: List[float] = []
        for pulse in sequence.inputs:
            single = render_pulses([pulse], self.grid)
            output = propagate(single, tf, optical_t2=optical_t2).samples
            echo = np.where(times >= pulse.arrival_time + self.tau / 2.0, output, 0.0)
            prompt = output - echo
            prompts.append(prompt)
            echoes.append(echo)
            self.input_energies.append(single.energy)
            self.absorbed_energies.append(single.energy - float(np.sum(np.abs(prompt) ** 2) * dt))
        self.input_trace = render_pulses(sequence.inputs, self.grid)
        self.echoes = np.array(echoes)
        self.echo_energies = np.sum(np.abs(self.echoes) ** 2, axis=1) * dt

        self.control_times = np.array([c.start_time for c in sequence.controls])
        thetas = [c.area(material) for c in sequence.controls]
        self.write_amplitude = math.sin(thetas[0] / 2.0) if transfer else 0.0
        self.echo_suppression = math.cos(thetas[0] / 2.0) if transfer else 1.0
        self.readout_delays = np.array(readout_delays)
        self.readout_sin = np.array([math.sin(t / 2.0) for t in thetas[1:]])
        self.readout_cos = np.array([math.cos(t / 2.0) for t in thetas[1:]])
        self.decay_amplitudes = self._decay_amplitudes()

        echo_sum = self.echoes.sum(axis=0)
        shifts = [int(round(delay / dt)) for delay in self.readout_delays]
        static = np.sum(prompts, axis=0) + self.echo_suppression * echo_sum
        self.components = np.array([static] + [_shift(echo_sum, s) for s in shifts])

    def _decay_amplitudes(self) -> np.ndarray:
        gamma = self.sequence.material.gamma_is
        if len(self.readout_delays) == 0:
            return np.zeros(0)
        if self.sequence.mc_spins > 0 and gamma > 0:
            detunings = _spin_detunings(gamma, self.sequence.mc_spins, self.sequence.noise.seed)
            phases = np.exp(2j * math.pi * np.outer(self.readout_delays, detunings))
            return np.abs(phases.mean(axis=1))
        return np.sqrt([spin_decay_factor(gamma, float(t)) for t in self.readout_delays])

    def readout_coefficients(self, laser_phases: np.ndarray) -> np.ndarray:
        """Complex amplitude of each readout echo relative to the two-level echo.

        ``laser_phases`` has one entry per control (or rows of them); the
        result has one column per readout.
        """
        phases = np.atleast_2d(laser_phases)
        n_readouts = len(self.readout_delays)
        if n_readouts == 0:
            return np.zeros((phases.shape[0], 0), dtype=complex)
        controls = self.sequence.controls
        control_phases = np.array([c.phase for c in controls]) + phases
        write = self.write_amplitude * np.exp(-1j * control_phases[:, :1])
        remaining = np.concatenate([[1.0], np.cumprod(self.readout_cos)[:-1]])
        static = self.decay_amplitudes * remaining * self.readout_sin
        coefficients = write * static * np.exp(1j * control_phases[:, 1:])
        return coefficients

    def _weights(self, laser_phases: np.ndarray) -> np.ndarray:
        coefficients = self.readout_coefficients(laser_phases)
        ones = np.ones((coefficients.shape[0], 1), dtype=complex)
        return np.concatenate([ones, coefficients], axis=1)

    def render(self, laser_phases: np.ndarray) -> FieldTrace:
        weights = self._weights(laser_phases)[0]
        return FieldTrace(self.grid, weights @ self.components)

    def component_trace(self, index: int, laser_phases: np.ndarray) -> FieldTrace:
        """One weighted component: 0 is the prompt plus two-level echo, k >= 1 the k-th readout echo."""
        weights = self._weights(laser_phases)[0]
        return FieldTrace(self.grid, weights[index] * self.components[index])

    def window_areas(self, center: float, width: float, laser_phases: np.ndarray) -> np.ndarray:
        """Windowed output energy for each row of ``laser_phases``."""
        times = self.grid.times
        start, end = center - width / 2.0, center + width / 2.0
        if start < self.grid.start_time or end > self.grid.end_time:
            raise ValidationError("window", f"[{start}, {end}] us is outside the simulated trace")
        mask = (times >= start - 1e-9) & (times < end - 1e-9)
        fields = self._weights(laser_phases) @ self.components[:, mask]
        return np.sum(np.abs(fields) ** 2, axis=1) * self.grid.dt

    def ledger(self, laser_phases: np.ndarray) -> ModeLedger:
        coefficients = self.readout_coefficients(laser_phases)[0]
        residual_spin = float(np.prod(self.readout_cos**2)) if len(coefficients) else 1.0
        written = self.write_amplitude**2
        modes = []
        for index, pulse in enumerate(self.sequence.inputs):
            echo_energy = float(self.echo_energies[index])
            emissions = tuple(
                Emission(
                    readout_index=k + 1,
                    time=pulse.arrival_time + self.tau + float(self.readout_delays[k]),
                    amplitude=complex(c),
                    energy=echo_energy * abs(c) ** 2,
                )
                for k, c in enumerate(coefficients)
            )
            modes.append(
                ModeRecord(
                    index=index,
                    arrival_time=pulse.arrival_time,
                    input_energy=self.input_energies[index],
                    absorbed_energy=self.absorbed_energies[index],
                    echo_energy=echo_energy,
                    written_fraction=written,
                    residual_echo_energy=echo_energy * self.echo_suppression**2,
                    emissions=emissions,
                    residual_spin_fraction=written * residual_spin if self.sequence.transfer else 0.0,
                )
            )
        return ModeLedger(tuple(modes))


def run_storage_sequence(sequence: StorageSequence, label: str = "sequence") -> Tuple[FieldTrace, ModeLedger]:
    """Simulate one realization of ``sequence``; returns the output trace and its ledger."""
    kernel = SequenceKernel(sequence)
    phases = sample_laser_phase(sequence.noise, kernel.control_times, label=label)
    ledger = kernel.ledger(phases)
    ledger.check_no_gain()
    return kernel.render(phases), ledger


@dataclass(frozen=True, eq=False)
class InterferenceFringe:
    phases: np.ndarray
    areas: np.ndarray
    sigmas: np.ndarray
    fit: FitReport

    @property
    def visibility(self) -> float:
        return self.fit.value("visibility")


def central_window_time(sequence: StorageSequence) -> float:
    """Where the late bin's first readout overlaps the early bin's second readout."""
    return sequence.inputs[1].arrival_time + sequence.comb.storage_time + sequence.storage_time


def interference_visibility(
    seq_template: StorageSequence,
    phases: Sequence[float],
    trials_per_phase: int,
    window: float = 0.5,
    sweep: str = "bin",
    workers: int = 1,
) -> Tuple[InterferenceFringe, float]:
    """Fringe of the central output window versus bin (or readout) phase, and its visibility.

    ``sweep="bin"`` sets the phase of the second input bin; ``"readout"``
    sets the phase of the last readout pulse.
    """
    phases = [float(p) for p in phases]
    if len(phases) < 8 or not spans_full_turn(phases):
        raise ValidationError("phases", "need at least 8 phases covering a full turn")
    if len(seq_template.inputs) < 2 or len(seq_template.readouts) < 2:
        raise SequenceInvariantError("interference needs two input bins and two readouts")
    if sweep not in ("bin", "readout"):
        raise ValidationError("sweep", f"expected 'bin' or 'readout', got {sweep!r}")
    if int(trials_per_phase) < 1:
        raise ValidationError("trials_per_phase", "must be >= 1")
    center = central_window_time(seq_template)

    def one_point(item: Tuple[int, float]) -> Tuple[float, float]:
        index, phase = item
        if sweep == "bin":
            sequence = seq_template.with_input_phase(1, phase)
        else:
            sequence = seq_template.with_control_phase(len(seq_template.controls) - 1, phase)
        kernel = SequenceKernel(sequence)
        laser = sample_laser_phase(
            sequence.noise, kernel.control_times, realizations=trials_per_phase, label=f"fringe-{index}"
        )
        areas = kernel.window_areas(center, window, laser)
        sem = float(np.std(areas, ddof=1) / math.sqrt(len(areas))) if len(areas) > 1 else 0.0
        return float(np.mean(areas)), sem

    items = list(enumerate(phases))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_point, items))
    else:
        results = [one_point(item) for item in items]

    areas = np.array([r[0] for r in results])
    if np.max(areas) <= 0:
        raise FitError("central window carries no signal")
    sigmas = np.maximum(np.array([r[1] for r in results]), 1e-6 * float(np.max(areas)))
    report = fit_fringe(phases, areas, sigmas)
    fringe = InterferenceFringe(np.array(phases), areas, sigmas, report)
    logger.info("fringe over %d phases: V=%.4f", len(phases), fringe.visibility)
    return fringe, fringe.visibility


def conditional_fidelity(visibility: float) -> float:
    """Time-bin qubit fidelity (1 + V) / 2."""
    require_fraction("visibility", visibility)
    return (1.0 + visibility) / 2.0
