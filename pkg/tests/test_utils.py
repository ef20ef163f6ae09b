"""Tests for utility functions."""

import math

import numpy as np
import pytest

from afc_memory.errors import ValidationError
from afc_memory.utils import (
    check_keys,
    derive_seed,
    is_power_of_two,
    make_rng,
    measure_fwhm,
    next_power_of_two,
    require_fraction,
    require_non_negative,
    require_positive,
    spans_full_turn,
)


class TestPowersOfTwo:
    @pytest.mark.parametrize("value", [1, 2, 1024, np.int64(4096)])
    def test_is_power_of_two(self, value):
        assert is_power_of_two(value)

    @pytest.mark.parametrize("value", [0, -4, 3, 1000, 4.0])
    def test_not_power_of_two(self, value):
        assert not is_power_of_two(value)

    @pytest.mark.parametrize("value, expected", [(0.5, 1), (1, 1), (3, 4), (1000, 1024), (1024, 1024), (64.0, 64)])
    def test_next_power_of_two(self, value, expected):
        assert next_power_of_two(value) == expected


class TestValidators:
    """Tests for the require_* shortcuts."""

    def test_positive_accepts(self):
        require_positive("delta_mhz", 0.5)

    @pytest.mark.parametrize("value", [0.0, -1.0, math.inf, math.nan])
    def test_positive_rejects(self, value):
        with pytest.raises(ValidationError) as excinfo:
            require_positive("delta_mhz", value)
        assert excinfo.value.key == "delta_mhz"

    def test_non_negative_accepts_zero(self):
        require_non_negative("d0", 0.0)

    def test_non_negative_rejects(self):
        with pytest.raises(ValidationError, match="d0"):
            require_non_negative("d0", -0.1)

    @pytest.mark.parametrize("value", [0.0, 0.5, 1.0])
    def test_fraction_accepts(self, value):
        require_fraction("eta", value)

    @pytest.mark.parametrize("value", [-0.01, 1.01])
    def test_fraction_rejects(self, value):
        with pytest.raises(ValidationError):
            require_fraction("eta", value)


class TestSeeding:
    """Tests for labelled seed streams."""

    def test_same_label_same_seed(self):
        assert derive_seed(7, "trial-3") == derive_seed(7, "trial-3")

    def test_labels_give_independent_seeds(self):
        seeds = {derive_seed(7, f"trial-{k}") for k in range(50)}
        assert len(seeds) == 50

    def test_master_seed_changes_stream(self):
        assert derive_seed(7, "laser") != derive_seed(8, "laser")

    def test_seed_fits_in_64_bits(self):
        assert 0 <= derive_seed(2**70, "laser") < 2**64

    def test_make_rng_is_reproducible(self):
        first = make_rng(3, "photons").normal(size=5)
        second = make_rng(3, "photons").normal(size=5)
        np.testing.assert_array_equal(first, second)

    def test_make_rng_without_label_uses_master_seed(self):
        np.testing.assert_array_equal(make_rng(3).random(4), np.random.default_rng(3).random(4))


class TestMeasureFwhm:
    def test_gaussian(self):
        """Test the width of a unit gaussian is 2*sqrt(2 ln 2)."""
        x = np.linspace(-10, 10, 20001)
        y = np.exp(-(x**2) / 2)
        assert measure_fwhm(x, y) == pytest.approx(2 * math.sqrt(2 * math.log(2)), rel=1e-4)

    def test_interpolates_between_samples(self):
        x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        y = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        assert measure_fwhm(x, y) == pytest.approx(1.0)

    def test_zero_curve(self):
        assert measure_fwhm(np.arange(5.0), np.zeros(5)) == 0.0


class TestSpansFullTurn:
    def test_periodic_sampling_counts(self):
        assert spans_full_turn(np.arange(12) * math.pi / 6)

    def test_closed_sampling_counts(self):
        assert spans_full_turn(np.linspace(0, 2 * math.pi, 9))

    def test_half_turn(self):
        assert not spans_full_turn(np.linspace(0, math.pi, 5))

    def test_single_phase(self):
        assert not spans_full_turn([1.0])


class TestCheckKeys:
    """Tests for config key checks."""

    def test_accepts_known_keys(self):
        check_keys({"seed": 1}, {"seed", "workers"}, required=("seed",))

    def test_unknown_key_uses_dotted_path(self):
        with pytest.raises(ValidationError) as excinfo:
            check_keys({"linewidth": 1}, {"linewidth_mhz"}, prefix="noise.")
        assert excinfo.value.key == "noise.linewidth"

    def test_missing_required_key(self):
        with pytest.raises(ValidationError) as excinfo:
            check_keys({}, {"delta_mhz"}, required=("delta_mhz",), prefix="comb.")
        assert excinfo.value.key == "comb.delta_mhz"

    def test_non_mapping(self):
        with pytest.raises(ValidationError) as excinfo:
            check_keys([1, 2], {"seed"}, prefix="grid.")
        assert excinfo.value.key == "grid"
