"""Scripted storage experiments with machine-readable reports.

Each preset names one measurement: the two-level echo (fig2a), spin-wave
decay versus storage time (fig2b), the control-power sweep (fig3), time-bin
interference (fig4) and multimode storage (fig5).  Runners are pure
functions of an :class:`ExperimentConfig`; :func:`run_experiment` adds the
files (``report.json``, CSV tables, ``summary.txt``) and the registry entry.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .config import RunConfig
from .errors import ValidationError
from .fitting import FitReport, fit_gaussian_decay, fit_linear_trend, fit_rabi
from .models import CombSpec, FieldTrace, OpticalDepthProfile, Pulse, PulseShape
from .persistence import PathLike, RunRegistry, write_csv, write_json, write_trace_csv
from .preparation import (
    IonEnsemble,
    PrepSequence,
    TransitionTable,
    absorption_spectrum,
    clean_window_population,
    locate_peaks,
    pit_residual,
    population_rows,
    run_preparation,
    unburned_ensemble,
)
from .propagation import (
    conjugate_grids,
    detect_echoes,
    echo_efficiency,
    grids_for_comb,
    measurement_layout,
    poisson_sample,
    propagate,
    render_pulses,
    resample_profile,
    transfer_function_from_depth,
)
from .report import SummaryRenderer
from .spectral import afc_echo_efficiency, build_comb_profile, plan_multimode
from .spinwave import (
    ControlPulse,
    ControlRole,
    MaterialParams,
    PhaseNoiseModel,
    SequenceKernel,
    StorageSequence,
    central_window_time,
    conditional_fidelity,
    interference_visibility,
    power_for_area,
    pulse_area,
    sample_laser_phase,
    spin_decay_factor,
    transfer_efficiency,
)
from .utils import derive_seed, next_power_of_two

logger = logging.getLogger(__name__)

T = TypeVar("T")

# shared comb of the single-bin presets
_TWO_LEVEL_COMB: Dict[str, Any] = {
    "delta_mhz": 0.5,
    "finesse": 4.0,
    "num_teeth": 5,
    "peak_depth": 4.12,
    "background_depth": 0.45,
    "pulse_width_us": 0.84,
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "fig2a": {**_TWO_LEVEL_COMB, "apply_optical_t2": False},
    "fig2b": {
        **_TWO_LEVEL_COMB,
        "storage_times_us": [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
        "control_power_mw": 5.7,
        "control_duration_us": 0.8,
        "transfer_delay_us": 1.0,
        "relative_sigma": 0.01,
    },
    "fig3": {
        **_TWO_LEVEL_COMB,
        "powers_mw": [round(5.7 * k / 12, 10) for k in range(13)],
        "control_duration_us": 0.8,
        "storage_time_us": 4.0,
        "transfer_delay_us": 1.0,
    },
    "fig4": {
        "delta_mhz": 0.2,
        "finesse": 4.0,
        "num_teeth": 15,
        "peak_depth": 4.12,
        "background_depth": 0.45,
        # field (amplitude) FWHM; Pulse.width is the intensity FWHM, smaller by sqrt(2)
        "pulse_field_fwhm_us": 0.7,
        "bin_separation_us": 1.0,
        "transfer_delay_us": 1.0,
        "control_duration_us": 0.8,
        "transfer_area_rad": math.pi,
        "readout_areas_rad": [math.pi / 2.0, math.pi],
        "storage_time_us": 12.0,
        "storage_times_us": [8.0, 10.0, 12.0, 14.0, 16.0],
        "window_us": 0.5,
        "num_phases": 12,
        # the visibility is a Monte Carlo estimate; 1e4 trials keep its spread near 0.002
        "trials_per_phase": 10_000,
        "linewidth_mhz": 0.0555,
        "sweep": "bin",
    },
    "fig5": {
        "delta_mhz": 1.0 / 7.0,
        "tooth_fwhm_mhz": 0.1,
        "num_teeth": 15,
        "peak_depth": 4.12,
        "background_depth": 0.45,
        "num_modes": 5,
        "mode_spacing_us": 1.0,
        "pulse_width_us": 0.4,
        "transfer_delay_us": 1.0,
        "control_duration_us": 0.8,
        "storage_time_us": 7.0,
        "window_us": 1.0,
        "bandwidth_mhz": 2.0,
        "control_time_us": 2.0,
        "mode_counts": [1, 2, 3, 4, 5],
        "poisson": True,
        "photons_per_pulse": 2.0e4,
        "attenuation_od": 6.5,
        "num_trials": 500,
    },
}

Table = Tuple[List[str], List[Sequence[Any]]]


@dataclass(frozen=True)
class ExperimentConfig:
    """A preset name, its overrides and the run context (material, seed, workers)."""

    preset: str
    overrides: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    material: MaterialParams = field(default_factory=MaterialParams)
    output_dir: str = "output"

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ValidationError("preset", f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        unknown = sorted(set(self.overrides) - set(PRESETS[self.preset]))
        if unknown:
            raise ValidationError(f"overrides.{unknown[0]}", f"not a parameter of preset {self.preset}")
        if int(self.workers) < 1:
            raise ValidationError("workers", "must be >= 1")

    @classmethod
    def from_run_config(cls, preset: str, run_config: RunConfig, overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        return cls(
            preset=preset,
            overrides=dict(overrides or {}),
            seed=int(run_config.seed),
            workers=int(run_config.workers),
            material=run_config.material,
            output_dir=run_config.output_dir,
        )

    @property
    def params(self) -> Dict[str, Any]:
        return {**PRESETS[self.preset], **self.overrides}

    @property
    def label(self) -> str:
        return f"{self.preset}-seed{self.seed}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "preset": self.preset,
            "overrides": dict(self.overrides),
            "parameters": self.params,
            "seed": int(self.seed),
            "material": self.material.to_dict(),
        }


@dataclass(eq=False)
class ExperimentResult:
    """Values, fits, traces and tables produced by one runner."""

    name: str
    values: Dict[str, Any] = field(default_factory=dict)
    fits: Dict[str, FitReport] = field(default_factory=dict)
    traces: Dict[str, FieldTrace] = field(default_factory=dict)
    tables: Dict[str, Table] = field(default_factory=dict)


def _ordered_map(func: Callable[[Any], T], items: Sequence[Any], workers: int) -> List[T]:
    """``map`` over a thread pool; results keep the order of ``items``."""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _comb_from_params(params: Dict[str, Any]) -> CombSpec:
    delta = float(params["delta_mhz"])
    if "tooth_fwhm_mhz" in params:
        tooth = float(params["tooth_fwhm_mhz"])
    else:
        tooth = delta / float(params["finesse"])
    return CombSpec(
        delta=delta,
        tooth_fwhm=tooth,
        num_teeth=int(params["num_teeth"]),
        peak_depth=float(params["peak_depth"]),
        background_depth=float(params["background_depth"]),
    )


def _window_area(trace: FieldTrace, center: float, width: float) -> float:
    return detect_echoes(trace, [center], window=width).windows[0].area


def _window_peak(trace: FieldTrace, center: float, width: float) -> float:
    return detect_echoes(trace, [center], window=width).windows[0].peak


def _single_bin_sequence(
    comb: CombSpec,
    material: MaterialParams,
    pulse_width: float,
    transfer_delay: float,
    storage_time: float,
    duration: float,
    transfer_power: float,
    readout_power: float,
) -> StorageSequence:
    transfer_at = transfer_delay
    return StorageSequence(
        inputs=(Pulse(PulseShape.GAUSSIAN, pulse_width, 0.0),),
        controls=(
            ControlPulse(transfer_at, duration, transfer_power, role=ControlRole.TRANSFER_IN),
            ControlPulse(transfer_at + storage_time, duration, readout_power, role=ControlRole.READOUT),
        ),
        comb=comb,
        material=material,
    )


@dataclass(frozen=True)
class _SingleBinMeasurement:
    """Window measurements of one single-bin storage run, relative to the input area."""

    input_area: float
    input_peak: float
    afc_area: float
    three_level_area: float
    three_level_peak: float


def _measure_single_bin(sequence: StorageSequence) -> _SingleBinMeasurement:
    kernel = SequenceKernel(sequence)
    phases = sample_laser_phase(sequence.noise, kernel.control_times, label="single-bin")
    kernel.ledger(phases).check_no_gain()
    tau = kernel.tau
    arrival = sequence.inputs[0].arrival_time
    emission = arrival + tau + sequence.storage_time

    input_area = _window_area(kernel.input_trace, arrival, tau)
    static = kernel.component_trace(0, phases)
    readout = kernel.component_trace(1, phases)
    return _SingleBinMeasurement(
        input_area=input_area,
        input_peak=_window_peak(kernel.input_trace, arrival, tau),
        afc_area=_window_area(static, arrival + tau, tau) / input_area,
        three_level_area=_window_area(readout, emission, tau) / input_area,
        three_level_peak=_window_peak(readout, emission, tau),
    )


def exp_two_level_afc(cfg: ExperimentConfig) -> ExperimentResult:
    """Two-level AFC echo of a gaussian input pulse; efficiency compared with the analytic formula.

    The echo sits at 1/delta only while the pulse is short against the
    storage time and its spectrum lies well inside the comb bandwidth
    (num_teeth * delta); a pulse of 0.25/delta on 15 teeth satisfies both.
    The preset's five teeth at 0.5 MHz with a 0.84 us pulse do too.  The
    same pulse on a five-tooth comb at 0.125 MHz (spectrum wider than the
    comb) or 1 MHz (pulse nearly as long as tau) gives a pulled echo, so
    rescale pulse_width_us or add teeth when overriding delta_mhz.
    """
    params = cfg.params
    comb = _comb_from_params(params)
    width = float(params["pulse_width_us"])
    optical_t2 = cfg.material.t2_excited if params.get("apply_optical_t2") else None
    tau = comb.storage_time

    time_grid, spectral_grid = grids_for_comb(comb, width)
    arrival = measurement_layout(time_grid, width)
    input_pulse = render_pulses([Pulse(PulseShape.GAUSSIAN, width, arrival)], time_grid)
    tf = transfer_function_from_depth(build_comb_profile(comb, spectral_grid))
    output = propagate(input_pulse, tf, optical_t2=optical_t2)

    reference = detect_echoes(input_pulse, [arrival], window=tau)
    windows = detect_echoes(output, [arrival, arrival + tau], window=tau)
    efficiency = echo_efficiency(windows, reference, echo_index=1)
    transmitted_fraction = echo_efficiency(windows, reference, echo_index=0)

    times = output.times
    transmitted = FieldTrace(time_grid, np.where(times < arrival + tau / 2.0, output.samples, 0.0))
    echo_mask = (times >= arrival + tau / 2.0) & (times < arrival + 1.5 * tau)
    echo_time = float(times[echo_mask][np.argmax(output.intensity[echo_mask])])
    predicted = afc_echo_efficiency(comb.peak_depth, comb.finesse, comb.background_depth)

    logger.info("two-level echo: efficiency %.4f (formula %.4f), delay %.4f us", efficiency, predicted, echo_time - arrival)
    return ExperimentResult(
        name="two_level_afc",
        values={
            "comb": comb.to_dict(),
            "arrival_time_us": arrival,
            "eta_afc": efficiency,
            "eta_afc_formula": predicted,
            "relative_deviation": (efficiency - predicted) / predicted if predicted > 0 else None,
            "transmitted_fraction": transmitted_fraction,
            "echo_delay_us": echo_time - arrival,
            "time_step_us": time_grid.dt,
            "windows": windows.to_dict(),
        },
        traces={"reference": input_pulse, "transmitted": transmitted, "output": output},
    )


def exp_spinwave_decay(cfg: ExperimentConfig) -> ExperimentResult:
    """Spin-wave echo efficiency versus storage time with a gaussian decay fit."""
    params = cfg.params
    comb = _comb_from_params(params)
    material = cfg.material
    storage_times = [float(t) for t in params["storage_times_us"]]
    power = float(params["control_power_mw"])
    duration = float(params["control_duration_us"])

    def one_point(t_s: float) -> _SingleBinMeasurement:
        sequence = _single_bin_sequence(
            comb, material, float(params["pulse_width_us"]), float(params["transfer_delay_us"]), t_s, duration, power, power
        )
        return _measure_single_bin(sequence)

    points = _ordered_map(one_point, storage_times, cfg.workers)
    etas = np.array([p.three_level_area for p in points])
    amplitude_etas = np.array([p.three_level_peak / p.input_peak for p in points])
    sigmas = np.maximum(float(params["relative_sigma"]) * etas, 1e-12)
    fit = fit_gaussian_decay(storage_times, etas, sigmas)

    eta_t = transfer_efficiency(pulse_area(power, duration, material))
    two_level = _measure_single_bin(
        _single_bin_sequence(comb, material, float(params["pulse_width_us"]), float(params["transfer_delay_us"]), storage_times[0], duration, 0.0, 0.0)
    ).afc_area
    eta_zero_model = two_level * eta_t**2
    logger.info("spin-wave decay: gamma_is %.5f MHz, eta(0) %.4f", fit.value("gamma_is_mhz"), fit.value("eta0"))
    rows = [
        (t, eta, amp, spin_decay_factor(material.gamma_is, t))
        for t, eta, amp in zip(storage_times, etas.tolist(), amplitude_etas.tolist())
    ]
    return ExperimentResult(
        name="spinwave_decay",
        values={
            "comb": comb.to_dict(),
            "transfer_efficiency": eta_t,
            "eta_afc": two_level,
            "eta_zero_model": eta_zero_model,
            "eta_zero_fit": fit.value("eta0"),
            "gamma_is_configured_mhz": material.gamma_is,
            "storage_times_us": storage_times,
            "eta_3le": etas.tolist(),
            "eta_3le_amplitude": amplitude_etas.tolist(),
        },
        fits={"gaussian_decay": fit},
        tables={"decay.csv": (["t_s_us", "eta_3le", "eta_3le_amplitude", "decay_model"], rows)},
    )


def exp_rabi_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Two-level echo area and decay-corrected spin-wave efficiency versus control power.

    Both curves are normalized to the input area (A_IN = 1).  The spin-wave
    efficiency is divided by the spin decay at the configured storage time
    so that it shares eta_afc with the two-level curve in the joint fit.
    """
    params = cfg.params
    comb = _comb_from_params(params)
    material = cfg.material
    powers = [float(p) for p in params["powers_mw"]]
    duration = float(params["control_duration_us"])
    storage_time = float(params["storage_time_us"])
    decay = spin_decay_factor(material.gamma_is, storage_time)

    def one_point(power: float) -> _SingleBinMeasurement:
        sequence = _single_bin_sequence(
            comb, material, float(params["pulse_width_us"]), float(params["transfer_delay_us"]), storage_time, duration, power, power
        )
        return _measure_single_bin(sequence)

    points = _ordered_map(one_point, powers, cfg.workers)
    afc_areas = np.array([p.afc_area for p in points])
    raw_tle = np.array([p.three_level_area for p in points])
    tle = raw_tle / decay if decay > 0 else raw_tle
    fit = fit_rabi(
        powers, afc_areas, tle, duration=duration, power_ref=material.power_ref, initial_rabi=material.rabi_ref
    )

    eta_afc = float(afc_areas[0]) if powers[0] == 0 else fit.value("eta_afc")
    identity = eta_afc * (1.0 - afc_areas / eta_afc) ** 2 if eta_afc > 0 else np.zeros_like(afc_areas)
    identity_gap = float(np.max(np.abs(identity - tle))) if len(tle) else 0.0
    rabi = fit.value("rabi_mhz")
    logger.info("rabi sweep: fitted %.4f MHz (configured %.4f MHz)", rabi, material.rabi_ref)
    rows = [
        (p, math.sqrt(p), a, r, c)
        for p, a, r, c in zip(powers, afc_areas.tolist(), raw_tle.tolist(), tle.tolist())
    ]
    return ExperimentResult(
        name="rabi_sweep",
        values={
            "comb": comb.to_dict(),
            "storage_time_us": storage_time,
            "decay_factor": decay,
            "rabi_fit_mhz": rabi,
            "rabi_configured_mhz": material.rabi_ref,
            "rabi_relative_error": abs(rabi - material.rabi_ref) / material.rabi_ref,
            "eta_afc": eta_afc,
            "identity_max_gap": identity_gap,
            "powers_mw": powers,
            "afc_area": afc_areas.tolist(),
            "eta_3le": raw_tle.tolist(),
            "eta_3le_decay_corrected": tle.tolist(),
        },
        fits={"rabi": fit},
        tables={"rabi.csv": (["power_mw", "sqrt_power", "afc_area", "eta_3le", "eta_3le_corrected"], rows)},
    )


def _timebin_sequence(params: Dict[str, Any], material: MaterialParams, storage_time: float, seed: int) -> StorageSequence:
    """Two bins t_s apart, a transfer pulse and two partial readouts t_s apart."""
    width = float(params["pulse_field_fwhm_us"]) / math.sqrt(2.0)
    separation = float(params["bin_separation_us"])
    duration = float(params["control_duration_us"])
    transfer_at = separation + float(params["transfer_delay_us"])
    readout_areas = [float(a) for a in params["readout_areas_rad"]]
    if len(readout_areas) != 2:
        raise ValidationError("readout_areas_rad", "time-bin interference needs exactly two readout areas")

    controls = [ControlPulse(transfer_at, duration, power_for_area(float(params["transfer_area_rad"]), duration, material), role=ControlRole.TRANSFER_IN)]
    for k, theta in enumerate(readout_areas):
        start = transfer_at + storage_time + k * separation
        controls.append(ControlPulse(start, duration, power_for_area(theta, duration, material)))
    return StorageSequence(
        inputs=(Pulse(PulseShape.GAUSSIAN, width, 0.0), Pulse(PulseShape.GAUSSIAN, width, separation)),
        controls=tuple(controls),
        comb=_comb_from_params(params),
        material=material,
        noise=PhaseNoiseModel(float(params["linewidth_mhz"]), seed=derive_seed(seed, f"timebin-{storage_time:g}")),
    )


def exp_timebin(cfg: ExperimentConfig) -> ExperimentResult:
    """Interference fringe of the central output window and its visibility versus storage time."""
    params = cfg.params
    material = cfg.material
    num_phases = int(params["num_phases"])
    phases = [2.0 * math.pi * k / num_phases for k in range(num_phases)]
    trials = int(params["trials_per_phase"])
    window = float(params["window_us"])
    main_storage = float(params["storage_time_us"])
    storage_times = [float(t) for t in params["storage_times_us"]]
    if main_storage not in storage_times:
        storage_times = sorted(storage_times + [main_storage])

    fringes = {}
    for t_s in storage_times:
        sequence = _timebin_sequence(params, material, t_s, cfg.seed)
        fringe, visibility = interference_visibility(
            sequence, phases, trials, window=window, sweep=str(params["sweep"]), workers=cfg.workers
        )
        fringes[t_s] = fringe
        logger.info("time-bin T_S=%g us: V=%.4f +/- %.4f", t_s, visibility, fringe.fit.error("visibility"))

    visibilities = [fringes[t].visibility for t in storage_times]
    v_sigmas = [max(fringes[t].fit.error("visibility"), 1e-9) for t in storage_times]
    trend = fit_linear_trend(storage_times, visibilities, v_sigmas)
    weights = 1.0 / np.square(v_sigmas)
    mean_v = float(np.sum(weights * visibilities) / np.sum(weights))
    mean_v_sigma = float(1.0 / math.sqrt(np.sum(weights)))

    main = fringes[main_storage]
    sequence = _timebin_sequence(params, material, main_storage, cfg.seed)
    kernel = SequenceKernel(sequence)
    output = kernel.render(sample_laser_phase(sequence.noise, kernel.control_times, label="timebin-trace"))

    fringe_rows = list(zip(main.phases.tolist(), main.areas.tolist(), main.sigmas.tolist()))
    visibility_rows = [
        (t, fringes[t].visibility, fringes[t].fit.error("visibility"), fringes[t].fit.value("amplitude"))
        for t in storage_times
    ]
    return ExperimentResult(
        name="timebin",
        values={
            "comb": sequence.comb.to_dict(),
            "central_window_us": central_window_time(sequence),
            "input_intensity_fwhm_us": sequence.inputs[0].width,
            "visibility": main.visibility,
            "visibility_sigma": main.fit.error("visibility"),
            "visibility_at_bound": main.fit.at_bound,
            "conditional_fidelity": conditional_fidelity(main.visibility),
            "mean_visibility": mean_v,
            "mean_visibility_sigma": mean_v_sigma,
            "slope_consistent_with_zero": trend.extra["slope_consistent_with_zero"],
            "storage_times_us": storage_times,
            "visibilities": visibilities,
            "central_areas": [fringes[t].fit.value("amplitude") for t in storage_times],
        },
        fits={"fringe": main.fit, "visibility_trend": trend},
        traces={"output": output},
        tables={
            "fringe.csv": (["phase_rad", "area", "sigma"], fringe_rows),
            "visibility.csv": (["t_s_us", "visibility", "sigma", "central_area"], visibility_rows),
        },
    )


def _multimode_sequence(
    comb: CombSpec,
    material: MaterialParams,
    params: Dict[str, Any],
    num_modes: int,
    only: Optional[int] = None,
) -> StorageSequence:
    """``num_modes`` bins one mode spacing apart, a pi transfer pulse and one pi readout.

    ``only`` keeps a single bin while the control timing stays that of the full train.
    """
    spacing = float(params["mode_spacing_us"])
    width = float(params["pulse_width_us"])
    duration = float(params["control_duration_us"])
    arrivals = [k * spacing for k in range(num_modes)]
    transfer_at = arrivals[-1] + float(params["transfer_delay_us"])
    power = power_for_area(math.pi, duration, material)
    kept = arrivals if only is None else [arrivals[only]]
    return StorageSequence(
        inputs=tuple(Pulse(PulseShape.GAUSSIAN, width, t) for t in kept),
        controls=(
            ControlPulse(transfer_at, duration, power, role=ControlRole.TRANSFER_IN),
            ControlPulse(transfer_at + float(params["storage_time_us"]), duration, power),
        ),
        comb=comb,
        material=material,
    )


def _mode_centers(sequence: StorageSequence, num_modes: int, spacing: float) -> List[float]:
    offset = sequence.comb.storage_time + sequence.storage_time
    return [k * spacing + offset for k in range(num_modes)]


def _readout_efficiencies(sequence: StorageSequence, centers: Sequence[float], window: float) -> Tuple[np.ndarray, SequenceKernel, np.ndarray]:
    kernel = SequenceKernel(sequence)
    phases = sample_laser_phase(sequence.noise, kernel.control_times, label="multimode")
    kernel.ledger(phases).check_no_gain()
    reference = _window_area(render_pulses([sequence.inputs[0]], kernel.grid), sequence.inputs[0].arrival_time, window)
    readout = kernel.component_trace(1, phases)
    areas = detect_echoes(readout, centers, window=window).areas
    return areas / reference, kernel, phases


def exp_multimode(cfg: ExperimentConfig) -> ExperimentResult:
    """Spin-wave storage of a pulse train: mode resolution, crosstalk and efficiency versus mode count."""
    params = cfg.params
    material = cfg.material
    comb = _comb_from_params(params)
    num_modes = int(params["num_modes"])
    spacing = float(params["mode_spacing_us"])
    window = float(params["window_us"])

    sequence = _multimode_sequence(comb, material, params, num_modes)
    centers = _mode_centers(sequence, num_modes, spacing)
    efficiencies, kernel, phases = _readout_efficiencies(sequence, centers, window)
    output = kernel.render(phases)
    ledger = kernel.ledger(phases)
    emission_order = [m.emissions[0].time for m in ledger.modes]

    half = window / 2.0
    echo_areas = detect_echoes(output, centers, window=half).areas
    gaps = [(a + b) / 2.0 for a, b in zip(centers, centers[1:])]
    gap_areas = detect_echoes(output, gaps, window=half).areas if gaps else np.zeros(0)
    background = float(np.max(gap_areas)) if gap_areas.size else 0.0
    resolved = bool(np.all(echo_areas > 3.0 * background))

    def crosstalk(index: int) -> float:
        single = _multimode_sequence(comb, material, params, num_modes, only=index)
        areas, _, _ = _readout_efficiencies(single, centers, window)
        neighbours = [areas[j] for j in (index - 1, index + 1) if 0 <= j < num_modes]
        return float(max(neighbours) / areas[index]) if neighbours and areas[index] > 0 else 0.0

    leakage = _ordered_map(crosstalk, list(range(num_modes)), cfg.workers)

    def efficiency_for(count: int) -> Tuple[float, float, float]:
        design = plan_multimode(
            float(params["bandwidth_mhz"]),
            float(params["tooth_fwhm_mhz"]),
            spacing,
            float(params["control_time_us"]),
            count,
            float(params["peak_depth"]),
            float(params["background_depth"]),
        )
        train = _multimode_sequence(design.comb, material, params, count)
        values, _, _ = _readout_efficiencies(train, _mode_centers(train, count, spacing), spacing)
        predicted = design.predicted_3le_efficiency * spin_decay_factor(material.gamma_is, train.storage_time)
        return design.comb.storage_time, float(np.mean(values)), predicted

    counts = [int(n) for n in params["mode_counts"]]
    series = _ordered_map(efficiency_for, counts, cfg.workers)
    simulated = [s[1] for s in series]
    non_increasing = all(b <= a * (1 + 1e-9) for a, b in zip(simulated, simulated[1:]))

    result = ExperimentResult(
        name="multimode",
        values={
            "comb": comb.to_dict(),
            "mode_centers_us": centers,
            "mode_efficiencies": efficiencies.tolist(),
            "total_efficiency": float(np.sum(efficiencies)) / num_modes,
            "crosstalk": leakage,
            "max_crosstalk": max(leakage) if leakage else 0.0,
            "resolved": resolved,
            "background_area": background,
            "emission_times_us": emission_order,
            "order_preserved": emission_order == sorted(emission_order),
            "mode_counts": counts,
            "efficiency_vs_modes": simulated,
            "efficiency_non_increasing": non_increasing,
        },
        traces={"output": output},
        tables={
            "modes.csv": (["mode", "center_us", "efficiency", "crosstalk"], [
                (k, centers[k], float(efficiencies[k]), leakage[k]) for k in range(num_modes)
            ]),
            "efficiency_vs_modes.csv": (["num_modes", "tau_us", "efficiency", "predicted"], [
                (n, s[0], s[1], s[2]) for n, s in zip(counts, series)
            ]),
        },
    )

    if params.get("poisson"):
        reference_energy = kernel.input_energies[0]
        photons = float(params["photons_per_pulse"]) * output.energy / reference_energy
        histogram = poisson_sample(
            output, photons, float(params["attenuation_od"]), int(params["num_trials"]), derive_seed(cfg.seed, "multimode-poisson")
        )
        result.values["poisson_total_counts"] = histogram.total_counts
        result.values["poisson_mean_per_trial"] = histogram.mean_per_trial
        result.tables["histogram.csv"] = (["t_us", "counts"], [
            (float(t), int(c)) for t, c in zip(histogram.times, histogram.counts)
        ])
    logger.info("multimode: %d modes, max crosstalk %.4f, resolved=%s", num_modes, result.values["max_crosstalk"], resolved)
    return result


@dataclass(eq=False)
class PreparedMemory:
    ensemble: IonEnsemble
    profile: OpticalDepthProfile
    peaks: np.ndarray
    metrics: Dict[str, Any]


def prepare_memory(run_config: RunConfig, sequence: Optional[PrepSequence] = None) -> PreparedMemory:
    """Run the preparation stages from an unburned line and measure the resulting comb."""
    sequence = sequence or run_config.preparation or PrepSequence.comb()
    grid = run_config.grid
    material = run_config.material
    table = TransitionTable.from_material(material)
    branching = material.branching_matrix
    start = unburned_ensemble(grid.class_axis, grid.class_spacing)

    def spectrum(ensemble: IonEnsemble) -> OpticalDepthProfile:
        return absorption_spectrum(
            ensemble, table, material.d_full, grid.read_window, linewidth=grid.absorption_linewidth
        )

    pit_only = run_preparation(start, sequence, table, branching, grid.lineshape, stages=("pit",))
    window = (sequence.pit.center - sequence.pit.span / 2.0, sequence.pit.center + sequence.pit.span / 2.0)
    residual = pit_residual(spectrum(pit_only), window, material.d_full)

    prepared = run_preparation(start, sequence, table, branching, grid.lineshape)
    profile = spectrum(prepared)
    programmed = np.sort([p.frequency for p in sequence.burn_back])
    # side lines of the burned-back classes sit one excited splitting away from the comb
    margin = 0.5 * float(np.median(np.diff(programmed))) if len(programmed) > 1 else 0.5
    comb_window = (float(programmed[0]) - margin, float(programmed[-1]) + margin) if len(programmed) else window
    peaks = locate_peaks(profile, comb_window)
    spacing_error = None
    if len(peaks) == len(programmed) and len(peaks) > 0:
        spacing_error = float(np.max(np.abs(np.sort(peaks) - programmed)))
    metrics = {
        "d_full": material.d_full,
        "pit_residual": residual,
        "num_peaks": int(len(peaks)),
        "peak_frequencies_mhz": peaks.tolist(),
        "programmed_frequencies_mhz": programmed.tolist(),
        "peak_position_error_mhz": spacing_error,
        "spectral_resolution_mhz": profile.grid.resolution,
        "peak_depth_max": float(np.max(profile.depth)) if profile.depth.size else 0.0,
        "clean_window_population": clean_window_population(prepared, table, sequence.clean),
        "total_pulse_time_us": sequence.total_pulse_time,
    }
    logger.info("preparation: %d peaks, pit residual %.4f, clean population %.4f", len(peaks), residual, metrics["clean_window_population"])
    return PreparedMemory(prepared, profile, peaks, metrics)


def exp_prepared_echo(run_config: RunConfig, sequence: Optional[PrepSequence] = None) -> ExperimentResult:
    """Prepare a comb, then send a pulse through the prepared absorption profile."""
    sequence = sequence or run_config.preparation or PrepSequence.comb()
    memory = prepare_memory(run_config, sequence)
    programmed = np.sort([p.frequency for p in sequence.burn_back])
    if len(programmed) < 2:
        raise ValidationError("preparation.burn_back", "an echo needs at least two comb peaks")
    delta = float(np.median(np.diff(programmed)))
    tau = 1.0 / delta
    width = run_config.grid.pulse_width
    bandwidth = float(programmed[-1] - programmed[0]) + delta

    span = float(next_power_of_two(max(4.0 / width, 4.0 * bandwidth)))
    duration = float(next_power_of_two(max(32.0 * tau, 8.0 / sequence.burn_back_bandwidth)))
    time_grid, spectral_grid = conjugate_grids(duration, int(round(span * duration)))
    center = float(np.mean(programmed))
    arrival = measurement_layout(time_grid, width)

    input_pulse = render_pulses([Pulse(PulseShape.GAUSSIAN, width, arrival, carrier_detuning=center)], time_grid)
    tf = transfer_function_from_depth(resample_profile(memory.profile, spectral_grid))
    output = propagate(input_pulse, tf)
    reference = detect_echoes(input_pulse, [arrival], window=tau)
    windows = detect_echoes(output, [arrival, arrival + tau], window=tau)
    times = output.times
    mask = (times >= arrival + tau / 2.0) & (times < arrival + 1.5 * tau)
    echo_time = float(times[mask][np.argmax(output.intensity[mask])])

    values = dict(memory.metrics)
    values.update(
        {
            "delta_mhz": delta,
            "storage_time_us": tau,
            "echo_delay_us": echo_time - arrival,
            "time_step_us": time_grid.dt,
            "eta_afc": echo_efficiency(windows, reference, echo_index=1),
            "transmitted_fraction": echo_efficiency(windows, reference, echo_index=0),
        }
    )
    return ExperimentResult(
        name="prepared_echo",
        values=values,
        traces={"reference": input_pulse, "output": output},
        tables={
            "profile.csv": (["nu_mhz", "depth"], list(zip(memory.profile.frequencies.tolist(), memory.profile.depth.tolist()))),
            "populations.csv": (["detuning_mhz", "p_12g", "p_32g", "p_52g"], population_rows(memory.ensemble)),
        },
    )


RUNNERS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "fig2a": exp_two_level_afc,
    "fig2b": exp_spinwave_decay,
    "fig3": exp_rabi_sweep,
    "fig4": exp_timebin,
    "fig5": exp_multimode,
}


def write_report(
    result: ExperimentResult,
    output_dir: PathLike,
    label: str,
    seed: int,
    inputs: Dict[str, Any],
    overrides: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write report.json, the CSV tables, traces.csv and summary.txt into ``output_dir/label``."""
    root = Path(output_dir)
    target = root / label
    files: List[str] = []
    for name, (header, rows) in result.tables.items():
        write_csv(target / name, header, rows)
        files.append(name)
    if result.traces:
        write_trace_csv(target / "traces.csv", result.traces)
        files.append("traces.csv")

    report = {
        "experiment": result.name,
        "label": label,
        "seed": int(seed),
        "inputs": inputs,
        "overrides": dict(overrides or {}),
        "results": result.values,
        "fits": {name: fit.to_dict() for name, fit in result.fits.items()},
        "files": sorted(files),
    }
    report_path = write_json(target / "report.json", report)
    SummaryRenderer().write(target, report)
    RunRegistry(root).record(label, report_path, seed)
    return report_path


def run_experiment(cfg: ExperimentConfig) -> Tuple[ExperimentResult, Path]:
    logger.info("running %s (seed %d, %d workers)", cfg.preset, cfg.seed, cfg.workers)
    result = RUNNERS[cfg.preset](cfg)
    path = write_report(result, cfg.output_dir, cfg.label, cfg.seed, cfg.to_dict(), cfg.overrides)
    return result, path
