"""Linear propagation of weak pulse envelopes through an optical-depth spectrum.

The medium acts as a causal filter H(nu) = exp(-d(nu)/2 + i*phi(nu)) whose
phase is the Kramers-Kronig partner of the absorption.  Traces live on a
periodic time grid; the matching spectral grid is its FFT conjugate
(span = 1/dt, same number of points, centred on the input carrier).
"""

from __future__ import annotations

import logging
import math
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import hilbert

from .errors import (
    GridMismatchError,
    GridTooCoarseError,
    OverlappingWindowsError,
    ValidationError,
    WindowOutOfRangeError,
    ZeroReferenceError,
)
from .models import (
    CombSpec,
    EchoReport,
    EchoWindow,
    FieldTrace,
    OpticalDepthProfile,
    PhotonHistogram,
    Pulse,
    PulseShape,
    SpectralGrid,
    TimeGrid,
    TransferFunction,
)
from .utils import derive_seed, next_power_of_two, require_positive

logger = logging.getLogger(__name__)

DEFAULT_ECHO_WINDOW = 0.5
CAUSALITY_TOLERANCE = 1e-3
EDGE_ENERGY_TOLERANCE = 1e-6
POISSON_CHUNK = 1000


class CombObservables(NamedTuple):
    transmitted_fraction: float
    echo_efficiency: float


def conjugate_grids(
    duration: float, num_points: int, start_time: float = 0.0
) -> Tuple[TimeGrid, SpectralGrid]:
    """Time grid and its FFT-conjugate spectral grid."""
    time_grid = TimeGrid(duration=duration, num_points=num_points, start_time=start_time)
    spectral_grid = SpectralGrid(center_frequency=0.0, span=num_points / duration, num_points=num_points)
    return time_grid, spectral_grid


def grids_for_comb(comb: CombSpec, pulse_width: float, min_duration: float = 0.0) -> Tuple[TimeGrid, SpectralGrid]:
    """Pick power-of-two grids fine enough for ``comb`` and a pulse of ``pulse_width``.

    The span is at least four comb bandwidths (and four inverse pulse widths),
    the duration at least 8 / tooth_fwhm so each tooth gets 8 spectral points.
    Both are powers of two, which keeps dt a binary fraction and puts
    integer or half-integer microsecond times exactly on the grid.
    """
    require_positive("pulse_width", pulse_width)
    span = float(next_power_of_two(max(4.0 * comb.bandwidth, 4.0 / pulse_width)))
    duration = float(next_power_of_two(max(8.0 / comb.tooth_fwhm, min_duration)))
    num_points = int(round(span * duration))
    logger.debug("grids for comb: span=%s MHz duration=%s us points=%d", span, duration, num_points)
    return conjugate_grids(duration, num_points)


def render_pulses(pulses: Iterable[Pulse], grid: TimeGrid) -> FieldTrace:
    """Sum the envelopes of ``pulses`` on ``grid``."""
    times = grid.times
    samples = np.zeros(grid.num_points, dtype=complex)
    for pulse in pulses:
        samples += pulse.envelope(times)
    return FieldTrace(grid, samples)


def resample_profile(profile: OpticalDepthProfile, grid: SpectralGrid) -> OpticalDepthProfile:
    """Interpolate ``profile`` onto ``grid``; values beyond its edges are held constant."""
    depth = np.interp(grid.frequencies, profile.frequencies, profile.depth)
    return OpticalDepthProfile(grid, np.clip(depth, 0.0, None))


def _to_fft_order(values: np.ndarray) -> np.ndarray:
    return np.fft.ifftshift(values)


def transfer_function_from_depth(profile: OpticalDepthProfile) -> TransferFunction:
    """Build the causal transfer function of a medium with optical depth ``profile``.

    The phase comes from the discrete Hilbert transform of -d/2 on the
    periodic grid (analytic-signal construction), which makes ln H the
    spectrum of a causal sequence.
    """
    depth = np.asarray(profile.depth, dtype=float)
    log_magnitude = _to_fft_order(-0.5 * depth)
    # conj of the analytic signal maps the fold onto the FFT sign convention used by propagate()
    log_response = np.conj(hilbert(log_magnitude))
    response_fft = np.exp(log_response)

    impulse = np.fft.ifft(response_fft)
    energy = np.sum(np.abs(impulse) ** 2)
    half = len(impulse) // 2
    acausal = float(np.sum(np.abs(impulse[half:]) ** 2) / energy) if energy > 0 else 0.0
    if acausal > CAUSALITY_TOLERANCE:
        raise GridTooCoarseError(
            f"impulse response has {acausal:.2e} of its energy at negative times; "
            "extend the grid duration or refine the spectral resolution"
        )
    return TransferFunction(profile.grid, np.fft.fftshift(response_fft))


def impulse_response(tf: TransferFunction) -> np.ndarray:
    """Discrete impulse response h[n] (index n is time n*dt, wrapped periodically)."""
    return np.fft.ifft(_to_fft_order(tf.response))


def _check_grids(time_grid: TimeGrid, spectral_grid: SpectralGrid) -> None:
    if spectral_grid.num_points != time_grid.num_points:
        raise GridMismatchError(
            f"spectral grid has {spectral_grid.num_points} points, time grid {time_grid.num_points}"
        )
    if not math.isclose(spectral_grid.span * time_grid.dt, 1.0, rel_tol=1e-9):
        raise GridMismatchError(
            f"spectral span {spectral_grid.span} MHz is not the conjugate of dt={time_grid.dt} us"
        )
    if abs(spectral_grid.center_frequency) > 1e-12 * spectral_grid.span:
        raise GridMismatchError("spectral grid must be centred on the input carrier (0 MHz)")


def propagate(
    input_trace: FieldTrace,
    tf: TransferFunction,
    optical_t2: Optional[float] = None,
) -> FieldTrace:
    """Filter ``input_trace`` through ``tf``.

    With ``optical_t2`` set, the impulse response is damped by exp(-t/T2),
    so the echo at tau carries the intensity factor exp(-2*tau/T2).
    """
    _check_grids(input_trace.grid, tf.grid)
    if input_trace.energy <= 0:
        raise ValidationError("input", "input trace carries no energy")
    edge_fraction = input_trace.edge_energy_fraction()
    if edge_fraction > EDGE_ENERGY_TOLERANCE:
        raise ValidationError(
            "input",
            f"{edge_fraction:.2e} of the input energy lies in the outer 10% of the trace; pad the time grid",
        )

    response_fft = _to_fft_order(tf.response)
    if optical_t2 is not None:
        require_positive("optical_t2", optical_t2)
        impulse = np.fft.ifft(response_fft)
        n = input_trace.grid.num_points
        lags = np.arange(n) * input_trace.grid.dt
        damping = np.ones(n)
        damping[: n // 2] = np.exp(-lags[: n // 2] / optical_t2)
        response_fft = np.fft.fft(impulse * damping)

    output = np.fft.ifft(np.fft.fft(input_trace.samples) * response_fft)
    return FieldTrace(input_trace.grid, output)


def detect_echoes(
    trace: FieldTrace,
    expected_times: Sequence[float],
    window: float = DEFAULT_ECHO_WINDOW,
    reference_area: Optional[float] = None,
) -> EchoReport:
    """Integrate |E|^2 over a window of width ``window`` around each expected time."""
    require_positive("window", window)
    centers = sorted(float(t) for t in expected_times)
    grid_start, grid_end = trace.grid.start_time, trace.grid.end_time
    for previous, current in zip(centers, centers[1:]):
        if current - previous < window - 1e-9:
            raise OverlappingWindowsError(
                f"windows at {previous} us and {current} us overlap for width {window} us"
            )

    times = trace.times
    intensity = trace.intensity
    windows: List[EchoWindow] = []
    for center in centers:
        start, end = center - window / 2.0, center + window / 2.0
        if start < grid_start - 1e-9 or end > grid_end + 1e-9:
            raise WindowOutOfRangeError(
                f"window [{start}, {end}] us lies outside the trace [{grid_start}, {grid_end}] us"
            )
        mask = (times >= start - 1e-9) & (times < end - 1e-9)
        area = float(np.sum(intensity[mask]) * trace.grid.dt)
        peak = float(np.max(intensity[mask])) if np.any(mask) else 0.0
        windows.append(EchoWindow(center=center, width=window, area=area, peak=peak))
    return EchoReport(windows=windows, reference_area=reference_area)


def echo_efficiency(
    output: EchoReport,
    reference: EchoReport,
    echo_index: Optional[int] = None,
    reference_index: int = 0,
) -> float:
    """Echo area (last window by default) over the reference input area."""
    reference_area = reference.windows[reference_index].area if reference.windows else 0.0
    if reference_area <= 0:
        raise ZeroReferenceError("reference area must be positive")
    index = len(output.windows) - 1 if echo_index is None else echo_index
    return output.windows[index].area / reference_area


def poisson_sample(
    trace: FieldTrace,
    photons_per_pulse: float,
    attenuation_od: float,
    num_trials: int,
    seed: int,
) -> PhotonHistogram:
    """Accumulate Poisson photon counts per time bin over ``num_trials`` pulse trains.

    The trace energy maps to photons_per_pulse * 10**(-OD) expected detections.
    Trials are drawn in fixed chunks with their own derived streams, so the
    histogram only depends on the seed.
    """
    require_positive("photons_per_pulse", photons_per_pulse)
    if int(num_trials) < 1:
        raise ValidationError("num_trials", "must be at least 1")
    expected_total = photons_per_pulse * 10.0 ** (-attenuation_od)
    energy = trace.energy
    if energy > 0:
        mean_per_bin = trace.intensity * trace.grid.dt / energy * expected_total
    else:
        mean_per_bin = np.zeros(trace.grid.num_points)

    counts = np.zeros(trace.grid.num_points, dtype=np.int64)
    remaining = int(num_trials)
    chunk_index = 0
    while remaining > 0:
        chunk = min(POISSON_CHUNK, remaining)
        rng = np.random.default_rng(derive_seed(seed, f"poisson-chunk-{chunk_index}"))
        counts += rng.poisson(mean_per_bin * chunk)
        remaining -= chunk
        chunk_index += 1

    logger.debug("poisson sampling: %d trials, %.3e expected counts per trial", num_trials, expected_total)
    return PhotonHistogram(
        times=trace.times,
        counts=counts,
        num_trials=int(num_trials),
        mean_per_trial=float(counts.sum()) / int(num_trials),
    )


def measurement_layout(time_grid: TimeGrid, pulse_width: float) -> float:
    """Arrival time for an input pulse leaving >= 10% of the trace empty before it."""
    dt = time_grid.dt
    arrival = max(0.15 * time_grid.duration, 0.1 * time_grid.duration + 4.0 * pulse_width)
    return round(arrival / dt) * dt


def measure_comb_observables(
    comb: CombSpec,
    pulse_width: float = 0.84,
    optical_t2: Optional[float] = None,
) -> CombObservables:
    """Simulate a gaussian pulse through ``comb`` and return (transmitted, echo) area fractions.

    Windows are one storage time wide, centred on the input and on the
    first echo; the reference is the same pulse sent through an empty pit.
    """
    from .spectral import build_comb_profile

    time_grid, spectral_grid = grids_for_comb(comb, pulse_width)
    arrival = measurement_layout(time_grid, pulse_width)
    tau = comb.storage_time
    input_pulse = render_pulses([Pulse(PulseShape.GAUSSIAN, pulse_width, arrival)], time_grid)

    reference = detect_echoes(input_pulse, [arrival], window=tau)
    tf = transfer_function_from_depth(build_comb_profile(comb, spectral_grid))
    output = detect_echoes(propagate(input_pulse, tf, optical_t2=optical_t2), [arrival, arrival + tau], window=tau)
    return CombObservables(
        transmitted_fraction=echo_efficiency(output, reference, echo_index=0),
        echo_efficiency=echo_efficiency(output, reference, echo_index=1),
    )
