"""Tests for pulse propagation, echo detection and photon sampling."""

import math

import numpy as np
import pytest
from scipy.linalg import circulant

from afc_memory.errors import (
    GridMismatchError,
    OverlappingWindowsError,
    ValidationError,
    WindowOutOfRangeError,
    ZeroReferenceError,
)
from afc_memory.models import CombSpec, EchoReport, EchoWindow, FieldTrace, OpticalDepthProfile, Pulse, PulseShape, SpectralGrid, TimeGrid
from afc_memory.propagation import (
    conjugate_grids,
    detect_echoes,
    echo_efficiency,
    grids_for_comb,
    impulse_response,
    measure_comb_observables,
    measurement_layout,
    poisson_sample,
    propagate,
    render_pulses,
    resample_profile,
    transfer_function_from_depth,
)
from afc_memory.spectral import afc_echo_efficiency, build_comb_profile

# energy of a unit gaussian field with intensity FWHM w is w * sqrt(pi / ln16)
GAUSSIAN_ENERGY_FACTOR = math.sqrt(math.pi / math.log(16.0))


@pytest.fixture
def grids():
    return conjugate_grids(64.0, 1024)


@pytest.fixture
def input_pulse(grids):
    time_grid, _ = grids
    return render_pulses([Pulse(PulseShape.GAUSSIAN, 0.84, 16.0)], time_grid)


class TestGrids:
    """Tests for grid construction."""

    def test_conjugate_grids(self, grids):
        """Test the spectral span is the inverse time step."""
        time_grid, spectral_grid = grids
        assert time_grid.dt == pytest.approx(1.0 / 16.0)
        assert spectral_grid.span == pytest.approx(16.0)
        assert spectral_grid.center_frequency == 0.0
        assert spectral_grid.num_points == time_grid.num_points

    def test_grids_for_comb(self, two_level_comb):
        time_grid, spectral_grid = grids_for_comb(two_level_comb, 0.84)
        assert spectral_grid.span == 16.0
        assert time_grid.duration == 64.0
        assert time_grid.num_points == 1024
        assert spectral_grid.resolution <= two_level_comb.tooth_fwhm / 8

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValidationError):
            TimeGrid(duration=10.0, num_points=1000)

    def test_pulse_energy(self, input_pulse):
        """Test a gaussian pulse carries w * sqrt(pi / ln16) of energy."""
        assert input_pulse.energy == pytest.approx(0.84 * GAUSSIAN_ENERGY_FACTOR, rel=1e-6)


class TestPropagate:
    """Tests for filtering pulses through a medium."""

    def test_empty_medium_is_identity(self, grids, input_pulse):
        _, spectral_grid = grids
        tf = transfer_function_from_depth(OpticalDepthProfile(spectral_grid, np.zeros(spectral_grid.num_points)))
        output = propagate(input_pulse, tf)
        assert np.allclose(output.samples, input_pulse.samples, atol=1e-12)

    def test_flat_medium_attenuates(self, grids, input_pulse):
        """Test a flat optical depth d transmits exp(-d) of the energy."""
        _, spectral_grid = grids
        tf = transfer_function_from_depth(OpticalDepthProfile(spectral_grid, np.full(spectral_grid.num_points, 1.5)))
        output = propagate(input_pulse, tf)
        assert output.energy / input_pulse.energy == pytest.approx(math.exp(-1.5), rel=1e-9)

    def test_comb_impulse_response_is_causal(self, grids, two_level_comb):
        """Test the comb response vanishes at negative (wrapped) times."""
        _, spectral_grid = grids
        tf = transfer_function_from_depth(build_comb_profile(two_level_comb, spectral_grid))
        h = impulse_response(tf)
        half = len(h) // 2
        assert np.sum(np.abs(h[half:]) ** 2) / np.sum(np.abs(h) ** 2) < 1e-3

    def test_comb_produces_echo_after_storage_time(self, grids, input_pulse, two_level_comb):
        """Test the output peaks again one storage time after the input."""
        _, spectral_grid = grids
        tf = transfer_function_from_depth(build_comb_profile(two_level_comb, spectral_grid))
        output = propagate(input_pulse, tf)
        times = output.times
        mask = (times > 17.0) & (times < 19.0)
        echo_time = times[mask][np.argmax(output.intensity[mask])]
        assert echo_time == pytest.approx(18.0, abs=0.2)

    def test_no_gain(self, grids, input_pulse, two_level_comb):
        _, spectral_grid = grids
        tf = transfer_function_from_depth(build_comb_profile(two_level_comb, spectral_grid))
        assert propagate(input_pulse, tf).energy < input_pulse.energy

    def test_mismatched_grids(self, input_pulse):
        other = SpectralGrid(0.0, 8.0, 1024)
        tf = transfer_function_from_depth(OpticalDepthProfile(other, np.zeros(1024)))
        with pytest.raises(GridMismatchError):
            propagate(input_pulse, tf)

    def test_offset_spectral_grid_rejected(self, input_pulse):
        shifted = SpectralGrid(1.0, 16.0, 1024)
        tf = transfer_function_from_depth(OpticalDepthProfile(shifted, np.zeros(1024)))
        with pytest.raises(GridMismatchError):
            propagate(input_pulse, tf)

    def test_pulse_at_edge_rejected(self, grids):
        """Test an input that touches the trace edges is refused."""
        time_grid, spectral_grid = grids
        edge = render_pulses([Pulse(PulseShape.GAUSSIAN, 0.84, 1.0)], time_grid)
        tf = transfer_function_from_depth(OpticalDepthProfile(spectral_grid, np.zeros(1024)))
        with pytest.raises(ValidationError):
            propagate(edge, tf)

    def test_empty_input_rejected(self, grids):
        time_grid, spectral_grid = grids
        silent = FieldTrace(time_grid, np.zeros(time_grid.num_points))
        tf = transfer_function_from_depth(OpticalDepthProfile(spectral_grid, np.zeros(1024)))
        with pytest.raises(ValidationError):
            propagate(silent, tf)

    def test_optical_t2_damps_echo(self, grids, input_pulse, two_level_comb):
        """Test T2 damping scales the echo energy by about exp(-2 tau / T2)."""
        _, spectral_grid = grids
        tf = transfer_function_from_depth(build_comb_profile(two_level_comb, spectral_grid))
        plain = detect_echoes(propagate(input_pulse, tf), [18.0], window=2.0).windows[0].area
        damped = detect_echoes(propagate(input_pulse, tf, optical_t2=20.0), [18.0], window=2.0).windows[0].area
        assert damped / plain == pytest.approx(math.exp(-2.0 * 2.0 / 20.0), rel=0.05)


def _broadband_echo(delta):
    """15-tooth comb at spacing ``delta`` and a pulse whose spectrum sits well inside it."""
    comb = CombSpec(delta=delta, tooth_fwhm=delta / 4.0, num_teeth=15, peak_depth=2.0)
    width = 0.25 / delta
    time_grid, spectral_grid = grids_for_comb(comb, width)
    arrival = measurement_layout(time_grid, width)
    input_pulse = render_pulses([Pulse(PulseShape.GAUSSIAN, width, arrival)], time_grid)
    output = propagate(input_pulse, transfer_function_from_depth(build_comb_profile(comb, spectral_grid)))
    return output, arrival, comb.storage_time


def _peak_time(trace, start, end):
    times = trace.times
    mask = (times > start) & (times < end)
    return times[mask][np.argmax(trace.intensity[mask])]


class TestEchoTiming:
    """Echo positions for pulses narrower in spectrum than the comb."""

    @pytest.mark.parametrize("delta", [0.125, 0.2, 0.5, 1.0])
    def test_echo_delay_is_inverse_spacing(self, delta):
        """Test the first echo lands 1/delta after the input within one time step."""
        output, arrival, tau = _broadband_echo(delta)
        echo_time = _peak_time(output, arrival + 0.5 * tau, arrival + 1.5 * tau)
        assert abs(echo_time - (arrival + tau)) <= output.grid.dt + 1e-12

    @pytest.mark.parametrize("delta", [0.2, 0.5])
    def test_second_order_echo(self, delta):
        """Test a weaker second echo follows at 2/delta."""
        output, arrival, tau = _broadband_echo(delta)
        first = _peak_time(output, arrival + 0.5 * tau, arrival + 1.5 * tau)
        second = _peak_time(output, arrival + 1.5 * tau, arrival + 2.5 * tau)
        assert abs(second - (arrival + 2.0 * tau)) <= 2.0 * output.grid.dt + 1e-12
        first_peak = output.intensity[np.argmin(np.abs(output.times - first))]
        second_peak = output.intensity[np.argmin(np.abs(output.times - second))]
        assert 0.0 < second_peak < first_peak


class TestFilterProperties:
    """The medium acts as a causal linear filter."""

    @pytest.fixture
    def comb_tf(self, grids, two_level_comb):
        _, spectral_grid = grids
        return transfer_function_from_depth(build_comb_profile(two_level_comb, spectral_grid))

    def test_linearity(self, grids, input_pulse, comb_tf):
        time_grid, _ = grids
        other = render_pulses([Pulse(PulseShape.GAUSSIAN, 0.84, 30.0, phase=0.7)], time_grid)
        alpha, beta = 2.0, 0.5 - 1.0j
        mixed = FieldTrace(time_grid, alpha * input_pulse.samples + beta * other.samples)
        expected = alpha * propagate(input_pulse, comb_tf).samples + beta * propagate(other, comb_tf).samples
        assert np.allclose(propagate(mixed, comb_tf).samples, expected, atol=1e-12)

    def test_matches_time_domain_convolution(self, input_pulse, comb_tf):
        """Test the FFT filter equals circular convolution with the impulse response."""
        h = impulse_response(comb_tf)
        direct = circulant(h) @ input_pulse.samples
        assert np.allclose(propagate(input_pulse, comb_tf).samples, direct, atol=1e-10)

    def test_symmetric_comb_gives_odd_phase(self, comb_tf):
        """Test a comb symmetric about the carrier has H(-f) = conj(H(f))."""
        response = comb_tf.response
        center = len(response) // 2
        positive = response[center + 1 :]
        negative = response[center - 1 : 0 : -1]
        assert np.allclose(positive, np.conj(negative), atol=1e-12)
        assert abs(np.angle(response[center])) < 1e-12

    def test_symmetric_comb_gives_real_impulse_response(self, comb_tf):
        h = impulse_response(comb_tf)
        assert np.max(np.abs(h.imag)) < 1e-12 * np.max(np.abs(h))


class TestResampleProfile:
    def test_edges_held_constant(self):
        source = OpticalDepthProfile(SpectralGrid(0.0, 2.0, 16), np.linspace(1.0, 2.0, 16))
        target = resample_profile(source, SpectralGrid(0.0, 8.0, 64))
        assert target.depth[0] == pytest.approx(1.0)
        assert target.depth[-1] == pytest.approx(2.0)


class TestDetectEchoes:
    """Tests for windowed echo areas."""

    def test_window_captures_pulse(self, input_pulse):
        report = detect_echoes(input_pulse, [16.0], window=4.0)
        assert report.windows[0].area == pytest.approx(input_pulse.energy, rel=1e-6)
        assert report.windows[0].peak == pytest.approx(1.0)

    def test_windows_sorted(self, input_pulse):
        report = detect_echoes(input_pulse, [20.0, 16.0], window=1.0)
        assert [w.center for w in report.windows] == [16.0, 20.0]

    def test_overlapping_windows(self, input_pulse):
        with pytest.raises(OverlappingWindowsError):
            detect_echoes(input_pulse, [16.0, 16.5], window=1.0)

    def test_window_outside_trace(self, input_pulse):
        with pytest.raises(WindowOutOfRangeError):
            detect_echoes(input_pulse, [63.8], window=1.0)

    def test_echo_efficiency_uses_last_window(self, input_pulse):
        reference = detect_echoes(input_pulse, [16.0], window=2.0)
        output = EchoReport([EchoWindow(16.0, 2.0, 0.5, 0.1), EchoWindow(18.0, 2.0, 0.1, 0.05)])
        assert echo_efficiency(output, reference) == pytest.approx(0.1 / reference.windows[0].area)
        assert echo_efficiency(output, reference, echo_index=0) == pytest.approx(0.5 / reference.windows[0].area)

    def test_zero_reference(self):
        reference = EchoReport([EchoWindow(0.0, 1.0, 0.0, 0.0)])
        with pytest.raises(ZeroReferenceError):
            echo_efficiency(reference, reference)


@pytest.mark.integration
class TestCombObservables:
    """End-to-end two-level echo through a simulated comb."""

    def test_echo_close_to_formula(self, two_level_comb):
        observables = measure_comb_observables(two_level_comb)
        predicted = afc_echo_efficiency(4.12, 4.0, 0.45)
        assert 0.0 < observables.transmitted_fraction < 1.0
        assert observables.echo_efficiency == pytest.approx(predicted, rel=0.35)


class TestPoissonSample:
    """Tests for Poisson photon counting."""

    def test_deterministic_for_seed(self, input_pulse):
        first = poisson_sample(input_pulse, 2.0e4, 4.0, 200, seed=7)
        second = poisson_sample(input_pulse, 2.0e4, 4.0, 200, seed=7)
        assert np.array_equal(first.counts, second.counts)

    def test_seed_changes_counts(self, input_pulse):
        first = poisson_sample(input_pulse, 2.0e4, 3.0, 200, seed=1)
        second = poisson_sample(input_pulse, 2.0e4, 3.0, 200, seed=2)
        assert not np.array_equal(first.counts, second.counts)

    def test_mean_counts(self, input_pulse):
        """Test 2e4 photons behind OD 4 give about 2 counts per trial."""
        histogram = poisson_sample(input_pulse, 2.0e4, 4.0, 2000, seed=3)
        assert histogram.num_trials == 2000
        assert histogram.mean_per_trial == pytest.approx(2.0, rel=0.1)
        assert histogram.total_counts == int(histogram.counts.sum())

    def test_counts_follow_intensity(self, input_pulse):
        histogram = poisson_sample(input_pulse, 2.0e4, 2.0, 500, seed=5)
        times = histogram.times
        far = np.abs(times - 16.0) > 3.0
        assert histogram.counts[far].sum() == 0

    def test_invalid_trials(self, input_pulse):
        with pytest.raises(ValidationError):
            poisson_sample(input_pulse, 2.0e4, 4.0, 0, seed=0)
