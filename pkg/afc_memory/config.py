"""Run configuration: loading, validation, defaults and saving."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .errors import ConfigParseError, ValidationError
from .models import CombSpec, Pulse, PulseShape
from .persistence import PathLike, atomic_write_text, read_json, write_json
from .preparation import Lineshape, PrepSequence
from .spinwave import ControlPulse, ControlRole, MaterialParams, PhaseNoiseModel, StorageSequence
from .utils import check_keys, require_positive

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "AFC_MEMORY_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "output"

TOP_LEVEL_KEYS = {"material", "comb", "preparation", "sequence", "grid", "noise", "seed", "workers", "output_dir"}


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR


def default_comb() -> CombSpec:
    """Two-level comb used for the single-bin storage examples."""
    return CombSpec(delta=0.5, tooth_fwhm=0.125, num_teeth=5, peak_depth=4.12, background_depth=0.45)


@dataclass(frozen=True)
class SequenceSettings:
    """Storage sequence without its comb, material and noise (those live in their own sections)."""

    inputs: Tuple[Pulse, ...] = (Pulse(PulseShape.GAUSSIAN, 0.84, 0.0),)
    controls: Tuple[ControlPulse, ...] = (
        ControlPulse(1.0, 0.8, 5.7, role=ControlRole.TRANSFER_IN),
        ControlPulse(5.0, 0.8, 5.7, role=ControlRole.READOUT),
    )
    t_w: float = 0.0
    apply_optical_t2: bool = False
    mc_spins: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "inputs": [p.to_dict() for p in self.inputs],
            "controls": [c.to_dict() for c in self.controls],
            "t_w_us": self.t_w,
            "apply_optical_t2": self.apply_optical_t2,
            "mc_spins": int(self.mc_spins),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SequenceSettings":
        check_keys(data, {"inputs", "controls", "t_w_us", "apply_optical_t2", "mc_spins"}, prefix="sequence.")
        defaults = cls()
        inputs = tuple(Pulse.from_dict(p) for p in data["inputs"]) if "inputs" in data else defaults.inputs
        if not inputs:
            raise ValidationError("sequence.inputs", "at least one input bin is required")
        return cls(
            inputs=inputs,
            controls=tuple(ControlPulse.from_dict(c) for c in data["controls"]) if "controls" in data else defaults.controls,
            t_w=float(data.get("t_w_us", defaults.t_w)),
            apply_optical_t2=bool(data.get("apply_optical_t2", defaults.apply_optical_t2)),
            mc_spins=int(data.get("mc_spins", defaults.mc_spins)),
        )


@dataclass(frozen=True)
class GridSettings:
    """Numerical grid choices for propagation and preparation."""

    pulse_width: float = 0.84
    class_axis: Tuple[float, float] = (-20.0, 45.0)
    class_spacing: float = 0.02
    read_window: Tuple[float, float] = (-12.0, 12.0)
    absorption_linewidth: float = 0.0
    lineshape: Lineshape = Lineshape.FLAT

    def __post_init__(self) -> None:
        require_positive("grid.pulse_width_us", self.pulse_width)
        require_positive("grid.class_spacing_mhz", self.class_spacing)
        for key, pair in (("grid.class_axis_mhz", self.class_axis), ("grid.read_window_mhz", self.read_window)):
            if len(pair) != 2 or pair[1] <= pair[0]:
                raise ValidationError(key, f"expected an ascending [lo, hi] pair, got {list(pair)}")
        if self.absorption_linewidth < 0:
            raise ValidationError("grid.absorption_linewidth_mhz", "must be >= 0")
        try:
            object.__setattr__(self, "lineshape", Lineshape(self.lineshape))
        except ValueError:
            raise ValidationError("grid.lineshape", f"unknown lineshape {self.lineshape!r}") from None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pulse_width_us": self.pulse_width,
            "class_axis_mhz": list(self.class_axis),
            "class_spacing_mhz": self.class_spacing,
            "read_window_mhz": list(self.read_window),
            "absorption_linewidth_mhz": self.absorption_linewidth,
            "lineshape": self.lineshape.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridSettings":
        keys = {
            "pulse_width_us": "pulse_width",
            "class_axis_mhz": "class_axis",
            "class_spacing_mhz": "class_spacing",
            "read_window_mhz": "read_window",
            "absorption_linewidth_mhz": "absorption_linewidth",
            "lineshape": "lineshape",
        }
        check_keys(data, keys, prefix="grid.")
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key in ("class_axis_mhz", "read_window_mhz"):
                kwargs[keys[key]] = tuple(float(v) for v in value)
            elif key == "lineshape":
                kwargs[keys[key]] = value
            else:
                kwargs[keys[key]] = float(value)
        return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; exactly one of ``comb`` and ``preparation`` is set."""

    material: MaterialParams = field(default_factory=MaterialParams)
    comb: Optional[CombSpec] = field(default_factory=default_comb)
    preparation: Optional[PrepSequence] = None
    sequence: SequenceSettings = field(default_factory=SequenceSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    linewidth: float = 0.0
    seed: int = 0
    workers: int = 1
    output_dir: str = field(default_factory=default_output_dir)

    def __post_init__(self) -> None:
        if (self.comb is None) == (self.preparation is None):
            raise ValidationError("comb", "exactly one of 'comb' and 'preparation' must be given")
        if self.linewidth < 0:
            raise ValidationError("noise.linewidth_mhz", "must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed", f"must be an unsigned 64-bit integer, got {self.seed}")
        if int(self.workers) < 1:
            raise ValidationError("workers", "must be >= 1")

    @property
    def comb_source(self) -> str:
        return "comb" if self.comb is not None else "preparation"

    @property
    def noise(self) -> PhaseNoiseModel:
        return PhaseNoiseModel(linewidth=self.linewidth, seed=int(self.seed))

    def with_overrides(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def storage_sequence(self, comb: Optional[CombSpec] = None) -> StorageSequence:
        """Assemble the configured sequence on ``comb`` (default: the configured comb)."""
        comb = comb or self.comb
        if comb is None:
            raise ValidationError("comb", "a spin-wave sequence needs an explicit comb section")
        return StorageSequence(
            inputs=self.sequence.inputs,
            controls=self.sequence.controls,
            comb=comb,
            material=self.material,
            noise=self.noise,
            t_w=self.sequence.t_w,
            apply_optical_t2=self.sequence.apply_optical_t2,
            mc_spins=self.sequence.mc_spins,
        )

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "material": self.material.to_dict(),
            "sequence": self.sequence.to_dict(),
            "grid": self.grid.to_dict(),
            "noise": {"linewidth_mhz": self.linewidth},
            "seed": int(self.seed),
            "workers": int(self.workers),
            "output_dir": self.output_dir,
        }
        if self.comb is not None:
            data["comb"] = self.comb.to_dict()
        else:
            data["preparation"] = self.preparation.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        check_keys(data, TOP_LEVEL_KEYS)
        if "comb" in data and "preparation" in data:
            raise ValidationError("preparation", "give either 'comb' or 'preparation', not both")
        noise = data.get("noise", {})
        check_keys(noise, {"linewidth_mhz"}, prefix="noise.")

        comb = CombSpec.from_dict(data["comb"]) if "comb" in data else None
        preparation = PrepSequence.from_dict(data["preparation"]) if "preparation" in data else None
        if comb is None and preparation is None:
            comb = default_comb()

        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ValidationError("seed", f"must be an integer, got {seed!r}")
        return cls(
            material=MaterialParams.from_dict(data.get("material", {})),
            comb=comb,
            preparation=preparation,
            sequence=SequenceSettings.from_dict(data.get("sequence", {})),
            grid=GridSettings.from_dict(data.get("grid", {})),
            linewidth=float(noise.get("linewidth_mhz", 0.0)),
            seed=seed,
            workers=int(data.get("workers", 1)),
            output_dir=str(data.get("output_dir", default_output_dir())),
        )


def default_config() -> RunConfig:
    return RunConfig()


def _read_yaml(path: Path) -> Any:
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        raise ConfigParseError(str(path), str(exc.problem or exc), line, column) from exc
    except yaml.YAMLError as exc:
        raise ConfigParseError(str(path), str(exc)) from exc


def load_config(path: PathLike) -> RunConfig:
    """Read and validate a JSON (or YAML) run configuration."""
    source = Path(path)
    if not source.exists():
        raise ValidationError("config", f"no such file: {source}")
    if source.suffix.lower() in (".yaml", ".yml"):
        data = _read_yaml(source)
    else:
        data = read_json(source)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError("config", "top level must be an object")
    config = RunConfig.from_dict(data)
    logger.debug("loaded config %s (comb source: %s, seed %d)", source, config.comb_source, config.seed)
    return config


def save_config(config: RunConfig, path: PathLike) -> Path:
    target = Path(path)
    if target.suffix.lower() in (".yaml", ".yml"):
        return atomic_write_text(target, yaml.safe_dump(config.to_dict(), sort_keys=True))
    return write_json(target, config.to_dict())
