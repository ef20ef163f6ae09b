"""Command-line entry point (``afc-memory``).

Exit codes: 0 on success, 1 when a simulation or fit raises one of the
package errors (printed as ``error[<code>]: message``), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, default_config, load_config, save_config
from .errors import AfcMemoryError, ValidationError
from .experiments import (
    PRESETS,
    ExperimentConfig,
    ExperimentResult,
    exp_prepared_echo,
    exp_two_level_afc,
    prepare_memory,
    run_experiment,
    write_report,
)
from .fitting import FitReport, fit_fringe, fit_gaussian_decay, fit_rabi
from .models import CombSpec, FieldTrace, SpectralGrid, TimeGrid
from .persistence import (
    dumps_json,
    read_csv,
    write_field_csv,
    write_histogram_csv,
    write_json,
    write_profile_csv,
)
from .propagation import poisson_sample
from .spectral import (
    afc_echo_efficiency,
    build_comb_profile,
    infer_comb_params,
    optimize_finesse,
    plan_multimode,
)
from .spinwave import SequenceKernel, sample_laser_phase
from .utils import UNITS_NOTE, next_power_of_two

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON, or YAML by extension)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--output-dir", help="output root (overrides the config)")
    common.add_argument("--workers", type=int, help="worker threads for sweeps")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="afc-memory",
        description=f"Spin-wave atomic frequency comb memory simulator ({UNITS_NOTE}).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    comb = commands.add_parser("comb", help="comb geometry, efficiency, inference and planning")
    comb_commands = comb.add_subparsers(dest="action", required=True, metavar="ACTION")

    build = comb_commands.add_parser("build", parents=[common], help="sample a comb profile to CSV")
    build.add_argument("--delta", type=float, required=True, help="tooth spacing (MHz)")
    build.add_argument("--finesse", type=float, required=True)
    build.add_argument("--teeth", type=int, required=True)
    build.add_argument("--d", type=float, required=True, help="peak optical depth")
    build.add_argument("--d0", type=float, default=0.0, help="background optical depth")
    build.add_argument("--span", type=float, help="grid span (MHz); default four comb bandwidths")
    build.add_argument("--points", type=int, help="grid points (power of two); default 8 per tooth width")
    build.add_argument("--output", help="profile CSV path (default <output-dir>/comb_profile.csv)")

    efficiency = comb_commands.add_parser("efficiency", parents=[common], help="analytic echo efficiency")
    efficiency.add_argument("--d", type=float, required=True)
    efficiency.add_argument("--finesse", type=float, required=True)
    efficiency.add_argument("--d0", type=float, default=0.0)

    infer = comb_commands.add_parser("infer", parents=[common], help="optical depths from measured fractions")
    infer.add_argument("--transmitted", type=float, required=True, help="transmitted area fraction")
    infer.add_argument("--echo", type=float, required=True, help="echo efficiency")
    infer.add_argument("--finesse", type=float, required=True)
    infer.add_argument("--delta", type=float, default=0.5)
    infer.add_argument("--teeth", type=int, default=5)
    infer.add_argument("--pulse-width", type=float, default=0.84)

    optimize = comb_commands.add_parser("optimize", parents=[common], help="finesse maximizing the echo")
    optimize.add_argument("--d", type=float, required=True)
    optimize.add_argument("--d0", type=float, default=0.0)
    optimize.add_argument("--f-min", type=float, default=1.0)
    optimize.add_argument("--f-max", type=float, default=20.0)

    plan = comb_commands.add_parser("plan", parents=[common], help="multimode comb design")
    plan.add_argument("--bandwidth", type=float, required=True)
    plan.add_argument("--min-tooth-fwhm", type=float, required=True)
    plan.add_argument("--mode-duration", type=float, required=True)
    plan.add_argument("--control-duration", type=float, required=True)
    plan.add_argument("--modes", type=int, required=True)
    plan.add_argument("--d", type=float, required=True)
    plan.add_argument("--d0", type=float, default=0.0)
    plan.add_argument("--transfer-efficiency", type=float, default=1.0)

    commands.add_parser("prepare", parents=[common], help="simulate hole-burning preparation")

    simulate = commands.add_parser("simulate", help="propagate the configured sequence")
    simulate_commands = simulate.add_subparsers(dest="action", required=True, metavar="MODE")
    simulate_commands.add_parser("afc", parents=[common], help="two-level echo (comb or prepared profile)")
    simulate_commands.add_parser("spinwave", parents=[common], help="full spin-wave storage sequence")

    experiment = commands.add_parser("experiment", parents=[common], help="run a named preset")
    experiment.add_argument("preset", choices=sorted(PRESETS))
    experiment.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a preset parameter (value parsed as JSON when possible)",
    )

    fit = commands.add_parser("fit", help="fit measured data from CSV")
    fit_commands = fit.add_subparsers(dest="action", required=True, metavar="MODEL")
    for name, columns in (
        ("decay", "t_s_us, eta_3le [, sigma]"),
        ("rabi", "power_mw, afc_area, eta_3le_corrected|eta_3le"),
        ("fringe", "phase_rad, area, sigma"),
    ):
        sub = fit_commands.add_parser(name, parents=[common], help=f"columns: {columns}")
        sub.add_argument("--input", required=True)
        if name == "rabi":
            sub.add_argument("--duration", type=float, default=0.8, help="control duration (us)")
            sub.add_argument("--power-ref", type=float, default=5.7, help="reference power (mW)")

    sample = commands.add_parser("sample-photons", parents=[common], help="Poisson counts from a field CSV")
    sample.add_argument("--input", required=True, help="CSV with t_us, re, im columns")
    sample.add_argument("--photons", type=float, default=2.0e4, help="photons per pulse")
    sample.add_argument("--od", type=float, default=6.5, help="attenuation (optical density)")
    sample.add_argument("--trials", type=int, default=500)
    sample.add_argument("--output", help="histogram CSV path (default <output-dir>/histogram.csv)")

    config = commands.add_parser("config", parents=[common], help="write or check a configuration")
    config.add_argument("--output", help="write the documented defaults here")
    config.add_argument("--check", action="store_true", help="validate --config and print it normalized")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else default_config()
    changes: Dict[str, Any] = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    if args.workers is not None:
        changes["workers"] = args.workers
    return config.with_overrides(**changes) if changes else config


def _parse_overrides(items: Sequence[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValidationError("--set", f"expected KEY=VALUE, got {item!r}")
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def _print_fit(report: FitReport) -> None:
    for name, (value, sigma) in report.estimates.items():
        print(f"{name} = {value:.6g} +/- {sigma:.2g}")
    if report.at_bound:
        print("note: estimate clamped at a bound")


def _column(header: List[str], data: np.ndarray, *names: str) -> Optional[np.ndarray]:
    for name in names:
        if name in header:
            return data[:, header.index(name)]
    return None


def _required(header: List[str], data: np.ndarray, path: str, *names: str) -> np.ndarray:
    column = _column(header, data, *names)
    if column is None:
        raise ValidationError(names[0], f"column missing from {path}")
    return column


def _cmd_comb(args: argparse.Namespace) -> int:
    if args.action == "efficiency":
        print(f"{afc_echo_efficiency(args.d, args.finesse, args.d0):.4f}")
        return 0
    if args.action == "optimize":
        f_star, eta_star = optimize_finesse(args.d, args.d0, (args.f_min, args.f_max))
        print(f"finesse = {f_star:.4f}")
        print(f"efficiency = {eta_star:.4f}")
        return 0
    if args.action == "infer":
        d, d0 = infer_comb_params(
            args.transmitted, args.echo, args.finesse, delta=args.delta, num_teeth=args.teeth, pulse_width=args.pulse_width
        )
        print(f"d = {d:.4f}")
        print(f"d0 = {d0:.4f}")
        return 0
    if args.action == "plan":
        design = plan_multimode(
            args.bandwidth, args.min_tooth_fwhm, args.mode_duration, args.control_duration,
            args.modes, args.d, args.d0, transfer_efficiency=args.transfer_efficiency,
        )
        sys.stdout.write(dumps_json(design.to_dict()))
        return 0

    config = _run_config(args)
    comb = CombSpec(delta=args.delta, tooth_fwhm=args.delta / args.finesse, num_teeth=args.teeth, peak_depth=args.d, background_depth=args.d0)
    span = args.span or float(next_power_of_two(4.0 * comb.bandwidth))
    points = args.points or next_power_of_two(math.ceil(8.0 * span / comb.tooth_fwhm))
    profile = build_comb_profile(comb, SpectralGrid(0.0, span, points))
    target = write_profile_csv(args.output or Path(config.output_dir) / "comb_profile.csv", profile)
    print(target)
    return 0


def _write(result: ExperimentResult, config: RunConfig, label: str, inputs: Dict[str, Any]) -> Path:
    path = write_report(result, config.output_dir, label, config.seed, inputs)
    print(path)
    return path


def _cmd_prepare(args: argparse.Namespace) -> int:
    config = _run_config(args)
    memory = prepare_memory(config)
    result = ExperimentResult(
        name="prepare",
        values=memory.metrics,
        tables={
            "profile.csv": (["nu_mhz", "depth"], list(zip(memory.profile.frequencies.tolist(), memory.profile.depth.tolist()))),
        },
    )
    _write(result, config, "prepare", config.to_dict())
    for key in ("num_peaks", "pit_residual", "clean_window_population"):
        print(f"{key} = {memory.metrics[key]}")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _run_config(args)
    if args.action == "afc":
        if config.preparation is not None:
            result = exp_prepared_echo(config)
        else:
            comb = config.comb
            overrides = {
                "delta_mhz": comb.delta,
                "finesse": comb.finesse,
                "num_teeth": comb.num_teeth,
                "peak_depth": comb.peak_depth,
                "background_depth": comb.background_depth,
                "pulse_width_us": config.grid.pulse_width,
                "apply_optical_t2": config.sequence.apply_optical_t2,
            }
            result = exp_two_level_afc(ExperimentConfig.from_run_config("fig2a", config, overrides))
        _write(result, config, f"simulate-afc-seed{config.seed}", config.to_dict())
        print(f"eta_afc = {result.values['eta_afc']:.4f}")
        return 0

    sequence = config.storage_sequence()
    kernel = SequenceKernel(sequence)
    phases = sample_laser_phase(sequence.noise, kernel.control_times, label="sequence")
    ledger = kernel.ledger(phases)
    ledger.check_no_gain()
    output = kernel.render(phases)
    result = ExperimentResult(
        name="spinwave",
        values={"ledger": ledger.to_dict(), "storage_time_us": sequence.storage_time},
        traces={"input": kernel.input_trace, "output": output},
    )
    path = _write(result, config, f"simulate-spinwave-seed{config.seed}", sequence.to_dict())
    write_json(path.parent / "ledger.json", ledger.to_dict())
    write_field_csv(path.parent / "output_field.csv", output)
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = _run_config(args)
    cfg = ExperimentConfig.from_run_config(args.preset, config, _parse_overrides(args.overrides))
    result, path = run_experiment(cfg)
    print(path)
    for name, fit in result.fits.items():
        print(f"[{name}]")
        _print_fit(fit)
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    header, data = read_csv(args.input)
    if args.action == "decay":
        ts = _required(header, data, args.input, "t_s_us")
        etas = _required(header, data, args.input, "eta_3le", "eta")
        sigmas = _column(header, data, "sigma")
        report = fit_gaussian_decay(ts, etas, sigmas if sigmas is not None else np.maximum(0.01 * etas, 1e-12))
    elif args.action == "rabi":
        powers = _required(header, data, args.input, "power_mw")
        areas = _required(header, data, args.input, "afc_area")
        effs = _required(header, data, args.input, "eta_3le_corrected", "eta_3le")
        report = fit_rabi(
            powers, areas, effs,
            afc_sigmas=_column(header, data, "afc_sigma"),
            tle_sigmas=_column(header, data, "eta_sigma"),
            duration=args.duration,
            power_ref=args.power_ref,
        )
    else:
        report = fit_fringe(
            _required(header, data, args.input, "phase_rad"),
            _required(header, data, args.input, "area"),
            _required(header, data, args.input, "sigma"),
        )
    _print_fit(report)
    return 0


def _read_field(path: str) -> FieldTrace:
    header, data = read_csv(path)
    times = _required(header, data, path, "t_us")
    real = _required(header, data, path, "re")
    imag = _required(header, data, path, "im")
    if len(times) < 2:
        raise ValidationError("t_us", "need at least two samples")
    dt = float(times[1] - times[0])
    if dt <= 0 or not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12):
        raise ValidationError("t_us", "times must be uniformly spaced and increasing")
    grid = TimeGrid(duration=dt * len(times), num_points=len(times), start_time=float(times[0]))
    return FieldTrace(grid, real + 1j * imag)


def _cmd_sample(args: argparse.Namespace) -> int:
    config = _run_config(args)
    trace = _read_field(args.input)
    histogram = poisson_sample(trace, args.photons, args.od, args.trials, config.seed)
    target = write_histogram_csv(args.output or Path(config.output_dir) / "histogram.csv", histogram)
    print(target)
    print(f"mean counts per trial = {histogram.mean_per_trial:.4g}")
    return 0


def _cmd_config(args: argparse.Namespace) -> int:
    if args.check:
        if not args.config:
            raise ValidationError("--config", "--check needs --config")
        sys.stdout.write(dumps_json(load_config(args.config).to_dict()))
        return 0
    config = default_config()
    if args.output:
        print(save_config(config, args.output))
    else:
        sys.stdout.write(dumps_json(config.to_dict()))
    return 0


HANDLERS = {
    "comb": _cmd_comb,
    "prepare": _cmd_prepare,
    "simulate": _cmd_simulate,
    "experiment": _cmd_experiment,
    "fit": _cmd_fit,
    "sample-photons": _cmd_sample,
    "config": _cmd_config,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    _configure_logging(args)
    try:
        return HANDLERS[args.command](args)
    except AfcMemoryError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    raise SystemExit(cli_main())
