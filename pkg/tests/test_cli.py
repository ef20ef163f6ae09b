"""Tests for the afc-memory command line."""

import json
import logging

import pytest

from afc_memory import __version__
from afc_memory.cli import _run_config, build_parser, cli_main
from afc_memory.config import RunConfig, default_config, load_config
from afc_memory.errors import ValidationError
from afc_memory.models import Pulse, PulseShape
from afc_memory.persistence import read_columns, write_field_csv
from afc_memory.propagation import conjugate_grids, render_pulses


class TestParser:
    """Tests for argument handling and exit codes."""

    def test_no_command_is_usage_error(self, capsys):
        assert cli_main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_option_is_usage_error(self):
        assert cli_main(["comb", "efficiency", "--d", "4", "--finesse", "4", "--bogus"]) == 2

    def test_version(self, capsys):
        assert cli_main(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_help_lists_commands(self):
        text = build_parser().format_help()
        for command in ("comb", "prepare", "simulate", "experiment", "fit", "sample-photons", "config"):
            assert command in text


class TestCombCommands:
    def test_efficiency(self, capsys):
        assert cli_main(["comb", "efficiency", "--d", "4.12", "--finesse", "4", "--d0", "0.45"]) == 0
        assert capsys.readouterr().out.strip() == "0.1559"

    def test_domain_error_exit_code(self, capsys):
        """Test package errors exit with 1 and print their code."""
        assert cli_main(["comb", "efficiency", "--d", "-1", "--finesse", "4"]) == 1
        assert "error[domain-error]" in capsys.readouterr().err

    def test_optimize(self, capsys):
        assert cli_main(["comb", "optimize", "--d", "4.12", "--d0", "0.45"]) == 0
        lines = dict(line.split(" = ") for line in capsys.readouterr().out.strip().splitlines())
        assert float(lines["finesse"]) == pytest.approx(3.9, abs=0.2)

    def test_build_writes_profile(self, tmp_path, capsys):
        target = tmp_path / "profile.csv"
        args = ["comb", "build", "--delta", "0.5", "--finesse", "4", "--teeth", "5", "--d", "4.12", "--output", str(target)]
        assert cli_main(args) == 0
        nu, depth = read_columns(target, "nu_mhz", "depth")
        assert len(nu) == len(depth)
        assert max(depth) == pytest.approx(4.12, rel=0.01)

    def test_plan_prints_design(self, capsys):
        args = [
            "comb", "plan", "--bandwidth", "2", "--min-tooth-fwhm", "0.1", "--mode-duration", "1",
            "--control-duration", "2", "--modes", "5", "--d", "4.12", "--d0", "0.45",
        ]
        assert cli_main(args) == 0
        design = json.loads(capsys.readouterr().out)
        assert "comb" in design


class TestConfigCommand:
    def test_print_defaults(self, capsys):
        assert cli_main(["config"]) == 0
        assert json.loads(capsys.readouterr().out) == default_config().to_dict()

    def test_write_defaults(self, tmp_path, capsys):
        target = tmp_path / "run.yaml"
        assert cli_main(["config", "--output", str(target)]) == 0
        assert load_config(target) == default_config()

    def test_check(self, tmp_path, capsys):
        source = tmp_path / "run.json"
        source.write_text(json.dumps({"seed": 4}), encoding="utf-8")
        assert cli_main(["config", "--check", "--config", str(source)]) == 0
        assert json.loads(capsys.readouterr().out)["seed"] == 4

    def test_check_needs_config(self, capsys):
        assert cli_main(["config", "--check"]) == 1
        assert "error[validation-error]" in capsys.readouterr().err

    def test_check_reports_unknown_key(self, tmp_path, capsys):
        source = tmp_path / "run.json"
        source.write_text(json.dumps({"sed": 4}), encoding="utf-8")
        assert cli_main(["config", "--check", "--config", str(source)]) == 1
        assert "sed" in capsys.readouterr().err


class TestFitCommand:
    def test_fringe_fixture(self, fixtures_dir, capsys):
        assert cli_main(["fit", "fringe", "--input", str(fixtures_dir / "fringe.csv")]) == 0
        out = capsys.readouterr().out
        assert "visibility = 0.84 +/-" in out

    def test_missing_column(self, tmp_path, capsys):
        source = tmp_path / "decay.csv"
        source.write_text("time,eta\n1,0.1\n2,0.09\n3,0.08\n4,0.07\n", encoding="utf-8")
        assert cli_main(["fit", "decay", "--input", str(source)]) == 1
        assert "t_s_us" in capsys.readouterr().err


class TestSamplePhotons:
    def test_histogram_written(self, tmp_path, capsys):
        time_grid, _ = conjugate_grids(64.0, 1024)
        field = write_field_csv(tmp_path / "field.csv", render_pulses([Pulse(PulseShape.GAUSSIAN, 0.84, 16.0)], time_grid))
        target = tmp_path / "histogram.csv"
        args = ["sample-photons", "--input", str(field), "--od", "4", "--trials", "50", "--seed", "2", "--output", str(target)]
        assert cli_main(args) == 0
        times, counts = read_columns(target, "t_us", "counts")
        assert len(times) == 1024
        assert counts.sum() > 0


class TestRunConfigFlags:
    def test_flags_override_config(self, tmp_path, mocker):
        spy = mocker.spy(RunConfig, "with_overrides")
        args = build_parser().parse_args(
            ["simulate", "afc", "--seed", "5", "--workers", "2", "--output-dir", str(tmp_path)]
        )
        config = _run_config(args)
        assert spy.call_count == 1
        assert (config.seed, config.workers, config.output_dir) == (5, 2, str(tmp_path))

    def test_no_flags_keep_defaults(self, mocker):
        spy = mocker.spy(RunConfig, "with_overrides")
        config = _run_config(build_parser().parse_args(["simulate", "afc"]))
        assert spy.call_count == 0
        assert config.to_dict() == default_config().to_dict()

    def test_invalid_worker_count_rejected(self):
        with pytest.raises(ValidationError):
            _run_config(build_parser().parse_args(["simulate", "afc", "--workers", "0"]))


@pytest.mark.integration
class TestRunCommands:
    """Commands that run a simulation and write a report."""

    def test_experiment_preset(self, tmp_path, capsys):
        assert cli_main(["experiment", "fig2a", "--seed", "2", "--output-dir", str(tmp_path)]) == 0
        assert (tmp_path / "fig2a-seed2" / "report.json").exists()

    def test_experiment_bad_override(self, tmp_path, capsys):
        assert cli_main(["experiment", "fig2a", "--set", "nokey", "--output-dir", str(tmp_path)]) == 1

    def test_experiment_override_value(self, tmp_path):
        assert cli_main(["experiment", "fig2a", "--set", "peak_depth=2.06", "--output-dir", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "fig2a-seed0" / "report.json").read_text(encoding="utf-8"))
        assert report["overrides"] == {"peak_depth": 2.06}

    def test_simulate_afc(self, tmp_path, capsys):
        assert cli_main(["simulate", "afc", "--output-dir", str(tmp_path)]) == 0
        assert "eta_afc = " in capsys.readouterr().out
        assert (tmp_path / "simulate-afc-seed0" / "report.json").exists()

    def test_simulate_spinwave(self, tmp_path):
        assert cli_main(["simulate", "spinwave", "--output-dir", str(tmp_path)]) == 0
        run_dir = tmp_path / "simulate-spinwave-seed0"
        assert (run_dir / "ledger.json").exists()
        assert (run_dir / "output_field.csv").exists()

    def test_spinwave_needs_comb(self, tmp_path, fixtures_dir, capsys):
        config = fixtures_dir.parent.parent / "config" / "prepared_comb.yaml"
        assert cli_main(["simulate", "spinwave", "--config", str(config), "--output-dir", str(tmp_path)]) == 1


class TestEntryPoints:
    """Smoke tests for the package surface and the script entry point."""

    @pytest.mark.smoke
    def test_main_module_exposes_cli(self):
        import main

        assert main.cli_main is cli_main

    @pytest.mark.smoke
    def test_package_exports(self):
        import afc_memory

        for name in afc_memory.__all__:
            assert hasattr(afc_memory, name)

    @pytest.mark.smoke
    def test_quiet_flag_sets_warning_level(self, mocker, capsys):
        basic_config = mocker.patch("afc_memory.cli.logging.basicConfig")
        assert cli_main(["comb", "efficiency", "--d", "4.12", "--finesse", "4", "-q"]) == 0
        assert basic_config.call_args.kwargs["level"] == logging.WARNING

    @pytest.mark.smoke
    def test_verbose_flag_sets_debug_level(self, mocker, capsys):
        basic_config = mocker.patch("afc_memory.cli.logging.basicConfig")
        assert cli_main(["comb", "efficiency", "--d", "4.12", "--finesse", "4", "-v"]) == 0
        assert basic_config.call_args.kwargs["level"] == logging.DEBUG
