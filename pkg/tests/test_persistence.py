"""Tests for file output, CSV readers and the run registry."""

import json
import os

import numpy as np
import pytest

from afc_memory.errors import ConfigParseError, ValidationError
from afc_memory.models import FieldTrace, OpticalDepthProfile, SpectralGrid, TimeGrid
from afc_memory.persistence import (
    RunRegistry,
    atomic_write_text,
    dumps_json,
    read_columns,
    read_csv,
    read_profile_csv,
    write_csv,
    write_json,
    write_profile_csv,
    write_trace_csv,
)
from afc_memory.utils import UNITS_NOTE


class TestAtomicWrite:
    """Tests for atomic text output."""

    def test_creates_parent_directories(self, tmp_path):
        target = atomic_write_text(tmp_path / "a" / "b" / "out.txt", "hello")
        assert target.read_text(encoding="utf-8") == "hello"

    def test_no_temp_files_left(self, tmp_path):
        atomic_write_text(tmp_path / "out.txt", "one")
        atomic_write_text(tmp_path / "out.txt", "two")
        assert os.listdir(tmp_path) == ["out.txt"]
        assert (tmp_path / "out.txt").read_text(encoding="utf-8") == "two"

    def test_failed_write_keeps_old_file(self, tmp_path, mocker):
        """Test a failing rename leaves the previous content and no temp file."""
        target = tmp_path / "out.txt"
        atomic_write_text(target, "old")
        mocker.patch("afc_memory.persistence.os.replace", side_effect=OSError("disk full"))
        with pytest.raises(OSError):
            atomic_write_text(target, "new")
        assert target.read_text(encoding="utf-8") == "old"
        assert os.listdir(tmp_path) == ["out.txt"]


class TestJson:
    def test_numpy_values_serialized(self):
        text = dumps_json({"b": np.float64(0.5), "a": np.arange(3), "c": 1 + 2j})
        assert json.loads(text) == {"a": [0, 1, 2], "b": 0.5, "c": [1.0, 2.0]}
        assert text.index('"a"') < text.index('"b"')

    def test_unserializable_value(self):
        with pytest.raises(TypeError):
            dumps_json({"x": object()})

    def test_write_json(self, tmp_path):
        path = write_json(tmp_path / "r.json", {"eta": 0.1559})
        assert json.loads(path.read_text(encoding="utf-8")) == {"eta": 0.1559}


class TestCsv:
    """Tests for CSV tables with a units line."""

    def test_units_line_first(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["x", "y"], [(1.0, 2.0)])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == f"# {UNITS_NOTE}"
        assert lines[1] == "x,y"

    def test_floats_written_exactly(self, tmp_path):
        value = 0.1 + 0.2
        path = write_csv(tmp_path / "t.csv", ["x"], [(value,)])
        _, data = read_csv(path)
        assert data[0, 0] == value

    def test_read_columns(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a", "b"], [(1.0, 2.0), (3.0, 4.0)])
        b, a = read_columns(path, "b", "a")
        assert list(a) == [1.0, 3.0]
        assert list(b) == [2.0, 4.0]

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a"], [(1.0,)])
        with pytest.raises(ValidationError):
            read_columns(path, "b")

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3,x\n", encoding="utf-8")
        with pytest.raises(ConfigParseError) as excinfo:
            read_csv(path)
        assert excinfo.value.line == 3

    def test_header_only(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a", "b"], [])
        header, data = read_csv(path)
        assert header == ["a", "b"]
        assert data.shape == (0, 2)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# only a comment\n", encoding="utf-8")
        with pytest.raises(ConfigParseError):
            read_csv(path)

    def test_profile_round_trip(self, tmp_path):
        grid = SpectralGrid(0.0, 4.0, 16)
        profile = OpticalDepthProfile(grid, np.linspace(0.0, 1.0, 16))
        nu, depth = read_profile_csv(write_profile_csv(tmp_path / "p.csv", profile))
        assert np.array_equal(nu, grid.frequencies)
        assert np.array_equal(depth, profile.depth)

    def test_trace_csv_needs_shared_grid(self, tmp_path):
        first = FieldTrace(TimeGrid(8.0, 16), np.ones(16))
        second = FieldTrace(TimeGrid(16.0, 16), np.ones(16))
        with pytest.raises(ValidationError):
            write_trace_csv(tmp_path / "traces.csv", {"a": first, "b": second})

    def test_trace_csv_columns(self, tmp_path):
        grid = TimeGrid(8.0, 16)
        path = write_trace_csv(tmp_path / "traces.csv", {"input": FieldTrace(grid, np.full(16, 2.0))})
        header, data = read_csv(path)
        assert header == ["t_us", "input_intensity"]
        assert np.allclose(data[:, 1], 4.0)


class TestRunRegistry:
    """Tests for the runs.json index."""

    @pytest.fixture
    def registry(self, tmp_path):
        return RunRegistry(tmp_path)

    def test_empty_registry(self, registry):
        assert registry.labels() == []
        assert registry.get("fig2a-seed0") is None

    def test_record_and_get(self, registry, tmp_path):
        registry.record("fig2a-seed0", tmp_path / "fig2a-seed0" / "report.json", 0)
        entry = registry.get("fig2a-seed0")
        assert entry["seed"] == 0
        assert entry["report"].endswith("report.json")
        assert "timestamp" in entry

    def test_labels_sorted(self, registry, tmp_path):
        registry.record("fig4-seed1", tmp_path / "x", 1)
        registry.record("fig2b-seed1", tmp_path / "y", 1)
        assert registry.labels() == ["fig2b-seed1", "fig4-seed1"]

    def test_remove(self, registry, tmp_path):
        registry.record("fig3-seed0", tmp_path / "x", 0)
        assert registry.remove("fig3-seed0")
        assert not registry.remove("fig3-seed0")
        assert registry.labels() == []

    def test_corrupt_registry_starts_over(self, registry, tmp_path):
        (tmp_path / "runs.json").write_text("{not json", encoding="utf-8")
        assert registry.labels() == []
        registry.record("fig5-seed0", tmp_path / "x", 0)
        assert registry.labels() == ["fig5-seed0"]
