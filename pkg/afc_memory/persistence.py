"""Atomic file output, CSV readers and the run registry."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigParseError, ValidationError
from .models import FieldTrace, OpticalDepthProfile, PhotonHistogram
from .utils import UNITS_NOTE

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename it into place."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=str(target.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=_to_jsonable) + "\n"


def write_json(path: PathLike, data: Any) -> Path:
    target = atomic_write_text(path, dumps_json(data))
    logger.info("wrote %s", target)
    return target


def read_json(path: PathLike) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(str(path), exc.msg, exc.lineno, exc.colno) from exc


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV with a leading units comment line; floats use repr so payloads are reproducible."""
    buffer = io.StringIO()
    buffer.write(f"# {UNITS_NOTE}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    target = atomic_write_text(path, buffer.getvalue())
    logger.info("wrote %s", target)
    return target


def read_csv(path: PathLike) -> Tuple[List[str], np.ndarray]:
    """Header and float matrix of a CSV written by :func:`write_csv` (comment lines skipped)."""
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line and not line.startswith("#")]
    if not lines:
        raise ConfigParseError(str(path), "no header row")
    reader = csv.reader(lines)
    header = next(reader)
    rows = []
    for line_number, row in enumerate(reader, start=2):
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise ConfigParseError(str(path), f"non-numeric value: {exc}", line_number, None) from exc
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def read_columns(path: PathLike, *names: str) -> List[np.ndarray]:
    header, data = read_csv(path)
    columns = []
    for name in names:
        if name not in header:
            raise ValidationError(name, f"column missing from {path}")
        columns.append(data[:, header.index(name)])
    return columns


def write_trace_csv(path: PathLike, traces: Dict[str, FieldTrace]) -> Path:
    """Intensities of several traces sharing one time grid: t_us, then one column per name."""
    names = list(traces)
    grid = traces[names[0]].grid
    for name in names:
        if traces[name].grid != grid:
            raise ValidationError(name, "all traces in one file must share a time grid")
    columns = [grid.times] + [traces[name].intensity for name in names]
    header = ["t_us"] + [f"{name}_intensity" for name in names]
    return write_csv(path, header, zip(*columns))


def write_field_csv(path: PathLike, trace: FieldTrace) -> Path:
    rows = zip(trace.times, trace.samples.real, trace.samples.imag, trace.intensity)
    return write_csv(path, ["t_us", "re", "im", "intensity"], rows)


def write_profile_csv(path: PathLike, profile: OpticalDepthProfile) -> Path:
    return write_csv(path, ["nu_mhz", "depth"], zip(profile.frequencies, profile.depth))


def read_profile_csv(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    nu, depth = read_columns(path, "nu_mhz", "depth")
    return nu, depth


def write_histogram_csv(path: PathLike, histogram: PhotonHistogram) -> Path:
    rows = zip(histogram.times, (int(c) for c in histogram.counts))
    return write_csv(path, ["t_us", "counts"], rows)


class RunRegistry:
    """Index of experiment runs (``runs.json``) in an output root.

    Timestamps live only here so report payloads stay reproducible.
    """

    def __init__(self, root: PathLike) -> None:
        self.path = Path(root) / "runs.json"

    def _load(self) -> Dict[str, dict]:
        try:
            data = json.loads(self.path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return {}
        except json.JSONDecodeError:
            logger.warning("run registry %s is corrupt; starting a new one", self.path)
            return {}
        return data.get("runs", {})

    def record(self, label: str, report_path: PathLike, seed: int) -> None:
        runs = self._load()
        runs[label] = {"report": str(report_path), "seed": int(seed), "timestamp": time.time()}
        atomic_write_text(self.path, dumps_json({"runs": runs, "last_updated": time.time()}))

    def get(self, label: str) -> Optional[dict]:
        return self._load().get(label)

    def labels(self) -> List[str]:
        return sorted(self._load())

    def remove(self, label: str) -> bool:
        runs = self._load()
        if label not in runs:
            return False
        del runs[label]
        atomic_write_text(self.path, dumps_json({"runs": runs, "last_updated": time.time()}))
        return True
