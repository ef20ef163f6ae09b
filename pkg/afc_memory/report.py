"""Plain-text run summaries rendered from a report payload with Jinja2."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

try:
    import importlib_resources
except ImportError:
    import importlib.resources as importlib_resources

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from .persistence import PathLike, atomic_write_text
from .utils import UNITS_NOTE

logger = logging.getLogger(__name__)

SUMMARY_TEMPLATE = "summary.txt.j2"


def _format_number(value: Any) -> str:
    if isinstance(value, bool) or value is None:
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _flatten(data: Any, prefix: str = "") -> List[Tuple[str, str]]:
    """Dotted key/value rows for nested dicts; lists of scalars are joined."""
    rows: List[Tuple[str, str]] = []
    if isinstance(data, dict):
        for key in sorted(data):
            rows.extend(_flatten(data[key], f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(data, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in data):
            shown = ", ".join(_format_number(v) for v in data[:8])
            if len(data) > 8:
                shown += f", ... ({len(data)} values)"
            rows.append((prefix, f"[{shown}]"))
        else:
            for index, item in enumerate(data):
                rows.extend(_flatten(item, f"{prefix}[{index}]"))
    else:
        rows.append((prefix, _format_number(data)))
    return rows


class SummaryRenderer:
    """Renders ``summary.txt`` next to an experiment's ``report.json``."""

    def __init__(self, template_dir: Optional[PathLike] = None) -> None:
        self._template_env: Optional[Environment] = None
        self._template_dir = Path(template_dir) if template_dir is not None else None

    def _setup_template_environment(self) -> Environment:
        if self._template_env is not None:
            return self._template_env
        if self._template_dir is None:
            try:
                assets_path = importlib_resources.files("afc_memory") / "assets"
            except Exception:
                # running from a source checkout
                assets_path = Path(__file__).parent / "assets"
            self._template_dir = Path(str(assets_path)) / "templates"
        self._template_env = Environment(
            loader=FileSystemLoader(str(self._template_dir)),
            autoescape=False,
            undefined=StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        return self._template_env

    def render(self, report: Dict[str, Any]) -> str:
        env = self._setup_template_environment()
        template = env.get_template(SUMMARY_TEMPLATE)
        fits = {
            name: [
                (key, _format_number(entry["value"]), _format_number(entry["sigma"]))
                for key, entry in fit.get("estimates", {}).items()
            ]
            for name, fit in report.get("fits", {}).items()
        }
        return template.render(
            experiment=report.get("experiment", "run"),
            seed=report.get("seed", 0),
            units=UNITS_NOTE,
            overrides=_flatten(report.get("overrides", {})),
            results=_flatten(report.get("results", {})),
            fits=fits,
            files=sorted(report.get("files", [])),
        )

    def write(self, output_dir: PathLike, report: Dict[str, Any]) -> Path:
        target = atomic_write_text(Path(output_dir) / "summary.txt", self.render(report))
        logger.info("wrote %s", target)
        return target
