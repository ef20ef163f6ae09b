"""Tests for run configuration loading, validation and saving."""

import json
from pathlib import Path

import pytest

from afc_memory.config import (
    OUTPUT_DIR_ENV,
    GridSettings,
    RunConfig,
    SequenceSettings,
    default_config,
    load_config,
    save_config,
)
from afc_memory.errors import ConfigParseError, ValidationError
from afc_memory.preparation import Lineshape, PrepSequence

CONFIG_DIR = Path(__file__).parent.parent / "config"


class TestDefaults:
    """Tests for the shipped default configuration."""

    def test_defaults_file_matches_code(self):
        """Test config/defaults.json is the serialized default config."""
        stored = json.loads((CONFIG_DIR / "defaults.json").read_text(encoding="utf-8"))
        assert stored == default_config().to_dict()

    def test_defaults_file_loads(self):
        assert load_config(CONFIG_DIR / "defaults.json") == default_config()

    def test_default_comb_source(self):
        config = default_config()
        assert config.comb_source == "comb"
        assert config.comb.delta == 0.5
        assert config.material.d_full == pytest.approx(6.9)

    def test_output_dir_from_environment(self, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/afc-runs")
        assert RunConfig().output_dir == "/tmp/afc-runs"

    def test_prepared_comb_example(self):
        config = load_config(CONFIG_DIR / "prepared_comb.yaml")
        assert config.comb_source == "preparation"
        assert [p.frequency for p in config.preparation.burn_back] == [-1.0, -0.5, 0.0, 0.5, 1.0]


class TestValidation:
    """Tests for rejected configurations."""

    def test_comb_and_preparation_exclusive(self):
        data = default_config().to_dict()
        data["preparation"] = PrepSequence.comb().to_dict()
        with pytest.raises(ValidationError):
            RunConfig.from_dict(data)

    def test_neither_source_rejected_in_code(self):
        with pytest.raises(ValidationError):
            RunConfig(comb=None)

    def test_missing_comb_falls_back_to_default(self):
        assert RunConfig.from_dict({}).comb == default_config().comb

    def test_unknown_top_level_key(self):
        with pytest.raises(ValidationError) as excinfo:
            RunConfig.from_dict({"combs": {}})
        assert excinfo.value.key == "combs"

    def test_unknown_nested_key(self):
        with pytest.raises(ValidationError) as excinfo:
            RunConfig.from_dict({"noise": {"linewidth": 0.1}})
        assert excinfo.value.key == "noise.linewidth"

    @pytest.mark.parametrize("seed", [-1, 1.5, True, "7"])
    def test_bad_seed(self, seed):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"seed": seed})

    def test_bad_workers(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"workers": 0})

    def test_negative_linewidth(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"noise": {"linewidth_mhz": -0.1}})

    def test_empty_inputs(self):
        with pytest.raises(ValidationError):
            SequenceSettings.from_dict({"inputs": []})

    def test_grid_window_must_ascend(self):
        with pytest.raises(ValidationError):
            GridSettings(read_window=(5.0, -5.0))

    def test_unknown_lineshape(self):
        with pytest.raises(ValidationError):
            GridSettings.from_dict({"lineshape": "voigt"})

    def test_lineshape_parsed(self):
        assert GridSettings.from_dict({"lineshape": "lorentzian"}).lineshape is Lineshape.LORENTZIAN

    def test_prepared_config_has_no_spinwave_sequence(self):
        config = RunConfig(comb=None, preparation=PrepSequence.comb())
        with pytest.raises(ValidationError):
            config.storage_sequence()


class TestLoadSave:
    """Tests for reading and writing config files."""

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(tmp_path / "absent.json")

    def test_yaml_parse_error_has_location(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: 1\ncomb: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigParseError) as excinfo:
            load_config(path)
        assert excinfo.value.line is not None
        assert excinfo.value.line >= 2

    def test_json_parse_error_has_location(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "seed": 1,\n}\n', encoding="utf-8")
        with pytest.raises(ConfigParseError) as excinfo:
            load_config(path)
        assert excinfo.value.line == 3

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_config(path)

    def test_empty_yaml_is_default(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_config(path) == default_config()

    @pytest.mark.parametrize("suffix", [".json", ".yaml"])
    def test_save_then_load(self, tmp_path, suffix):
        config = default_config().with_overrides(seed=42, workers=3, linewidth=0.05)
        path = save_config(config, tmp_path / f"run{suffix}")
        assert load_config(path) == config

    def test_save_prepared_config(self, tmp_path):
        config = RunConfig(comb=None, preparation=PrepSequence.comb(delta=0.25), seed=9)
        path = save_config(config, tmp_path / "prepared.json")
        loaded = load_config(path)
        assert loaded.preparation == config.preparation
        assert loaded.comb is None
