"""Comb geometry, analytic AFC efficiencies, parameter inference and design planning."""

from __future__ import annotations

import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    BandwidthTooSmallError,
    CapacityInfeasibleError,
    CombExceedsSpanError,
    ConvergenceError,
    DomainError,
    EmptyBoundsError,
    GridTooCoarseError,
    NoSolutionError,
)
from .models import GAUSSIAN_AREA_FACTOR, CombDesign, CombSpec, OpticalDepthProfile, SpectralGrid
from .utils import require_positive

logger = logging.getLogger(__name__)

POINTS_PER_TOOTH = 8
DEPTH_BOUNDS = (0.0, 20.0)
BACKGROUND_BOUNDS = (0.0, 5.0)
OBSERVABLE_TOLERANCE = 1e-4
FINESSE_LIMITS = (1.0, 100.0)

# Forward model used by infer_comb_params: (d, d0) -> (transmitted, echo)
ForwardModel = Callable[[float, float], Tuple[float, float]]


def build_comb_profile(spec: CombSpec, grid: SpectralGrid) -> OpticalDepthProfile:
    """Sample ``spec`` on ``grid``: Gaussian teeth centred on the grid centre over a flat background."""
    if grid.resolution > spec.tooth_fwhm / POINTS_PER_TOOTH * (1 + 1e-9):
        raise GridTooCoarseError(
            f"resolution {grid.resolution:.4g} MHz exceeds tooth_fwhm/{POINTS_PER_TOOTH} = "
            f"{spec.tooth_fwhm / POINTS_PER_TOOTH:.4g} MHz"
        )
    if spec.bandwidth > grid.span * (1 + 1e-9):
        raise CombExceedsSpanError(f"comb bandwidth {spec.bandwidth:.4g} MHz exceeds grid span {grid.span:.4g} MHz")

    offsets = grid.frequencies - grid.center_frequency
    depth = np.full(grid.num_points, spec.background_depth, dtype=float)
    if spec.peak_depth > 0:
        width_factor = 4.0 * math.log(2.0) / spec.tooth_fwhm**2
        for position in spec.tooth_positions:
            depth += spec.peak_depth * np.exp(-width_factor * (offsets - position) ** 2)
    return OpticalDepthProfile(grid, depth)


def comb_average_depth(spec: CombSpec) -> float:
    """Spectral average of d(nu) over one comb period: d0 + d * sqrt(pi/ln16) / F."""
    return spec.background_depth + spec.peak_depth * GAUSSIAN_AREA_FACTOR / spec.finesse


def afc_echo_efficiency(d: float, finesse: float, d0: float) -> float:
    """Forward AFC echo efficiency for Gaussian teeth.

    eta = (d/F)^2 exp(-7/F^2) exp(-d/F) exp(-d0)
    """
    if d < 0 or d0 < 0:
        raise DomainError(f"optical depths must be non-negative, got d={d}, d0={d0}")
    if finesse < 1:
        raise DomainError(f"finesse must be >= 1, got {finesse}")
    effective = d / finesse
    return effective**2 * math.exp(-7.0 / finesse**2) * math.exp(-effective) * math.exp(-d0)


def efficiency_bound(d0: float = 0.0) -> float:
    """Upper bound 4 e^-2 e^-d0 of the forward echo efficiency."""
    if d0 < 0:
        raise DomainError(f"background depth must be non-negative, got {d0}")
    return 4.0 * math.exp(-2.0) * math.exp(-d0)


def three_level_efficiency(eta_afc: float, eta_t: float) -> float:
    """Spin-wave storage efficiency: the AFC echo times two control transfers."""
    for name, value in (("eta_afc", eta_afc), ("eta_t", eta_t)):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return eta_afc * eta_t**2


def simulated_observables(
    finesse: float,
    delta: float = 0.5,
    num_teeth: int = 5,
    pulse_width: float = 0.84,
) -> ForwardModel:
    """Forward model backed by the propagation engine for a fixed comb geometry."""
    from .propagation import measure_comb_observables

    def forward(d: float, d0: float) -> Tuple[float, float]:
        comb = CombSpec(
            delta=delta,
            tooth_fwhm=delta / finesse,
            num_teeth=num_teeth,
            peak_depth=d,
            background_depth=d0,
        )
        observables = measure_comb_observables(comb, pulse_width=pulse_width)
        return observables.transmitted_fraction, observables.echo_efficiency

    return forward


def _solve(func: Callable[[float], float], lo: float, hi: float, what: str) -> float:
    try:
        root, result = brentq(func, lo, hi, xtol=1e-9, maxiter=200, full_output=True)
    except RuntimeError as exc:
        raise ConvergenceError(f"{what}: {exc}") from exc
    if not result.converged:
        raise ConvergenceError(f"{what}: solver stopped after {result.iterations} iterations")
    return float(root)


def infer_comb_params(
    transmitted_fraction: float,
    echo_efficiency: float,
    finesse: float,
    delta: float = 0.5,
    num_teeth: int = 5,
    pulse_width: float = 0.84,
    forward: Optional[ForwardModel] = None,
) -> Tuple[float, float]:
    """Recover (d, d0) from a measured transmitted fraction and echo efficiency.

    Nested root finding: the inner solve picks d0 so the transmitted area
    matches for a given d; the outer solve walks d along that curve until
    the echo matches.  Along a constant-transmission curve the echo grows
    monotonically with d, which makes the outer bracket unique.
    """
    require_positive("finesse", finesse)
    for name, value in (("transmitted_fraction", transmitted_fraction), ("echo_efficiency", echo_efficiency)):
        if not 0.0 <= value < 1.0:
            raise DomainError(f"{name} must lie in [0, 1), got {value}")
    if transmitted_fraction <= 0:
        raise NoSolutionError("zero transmission cannot be matched by a finite optical depth")

    model = forward or simulated_observables(finesse, delta=delta, num_teeth=num_teeth, pulse_width=pulse_width)
    d_lo, d_hi = DEPTH_BOUNDS
    b_lo, b_hi = BACKGROUND_BOUNDS

    def transmission_gap(d: float, d0: float) -> float:
        return model(d, d0)[0] - transmitted_fraction

    if transmission_gap(d_hi, b_hi) > 0:
        raise NoSolutionError(f"transmission {transmitted_fraction} is too high for any comb in bounds")

    # largest d that still allows d0 >= 0
    if transmission_gap(d_hi, b_lo) < 0:
        d_max = _solve(lambda d: transmission_gap(d, b_lo), d_lo, d_hi, "depth limit")
    else:
        d_max = d_hi

    def background_for(d: float) -> float:
        gap_lo = transmission_gap(d, b_lo)
        if abs(gap_lo) <= OBSERVABLE_TOLERANCE / 10 or gap_lo < 0:
            return b_lo
        if transmission_gap(d, b_hi) > 0:
            raise NoSolutionError(f"no background depth matches transmission at d={d:.4g}")
        return _solve(lambda d0: transmission_gap(d, d0), b_lo, b_hi, "background depth")

    def echo_gap(d: float) -> float:
        d0 = background_for(d)
        gap = model(d, d0)[1] - echo_efficiency
        logger.debug("inference step: d=%.6f d0=%.6f echo gap=%.3e", d, d0, gap)
        return gap

    if echo_efficiency <= OBSERVABLE_TOLERANCE / 10:
        d = d_lo
    else:
        gap_at_limit = echo_gap(d_max)
        if gap_at_limit < -OBSERVABLE_TOLERANCE:
            raise NoSolutionError(
                f"echo efficiency {echo_efficiency} is unreachable at transmission {transmitted_fraction}"
            )
        if gap_at_limit <= 0:
            # zero background: the solution sits on the depth limit itself
            d = d_max
        else:
            d = _solve(echo_gap, d_lo, d_max, "peak depth")
    d0 = background_for(d)

    transmitted, echo = model(d, d0)
    if abs(transmitted - transmitted_fraction) > OBSERVABLE_TOLERANCE or abs(echo - echo_efficiency) > OBSERVABLE_TOLERANCE:
        raise ConvergenceError(
            f"inferred (d={d:.4g}, d0={d0:.4g}) reproduces ({transmitted:.5f}, {echo:.5f}), "
            f"target ({transmitted_fraction:.5f}, {echo_efficiency:.5f})"
        )
    logger.info("inferred comb parameters d=%.4f d0=%.4f at F=%.3g", d, d0, finesse)
    return d, d0


def optimize_finesse(d: float, d0: float, f_bounds: Tuple[float, float] = (1.0, 20.0)) -> Tuple[float, float]:
    """Finesse maximizing the AFC echo efficiency for fixed optical depths.

    A coarse scan brackets the best point, then a bounded Brent search
    refines it.  The result is never worse than either bound.
    """
    lo, hi = float(f_bounds[0]), float(f_bounds[1])
    if not (FINESSE_LIMITS[0] <= lo < hi <= FINESSE_LIMITS[1]):
        raise EmptyBoundsError(f"finesse bounds must satisfy 1 <= lo < hi <= 100, got [{lo}, {hi}]")

    def objective(f: float) -> float:
        return -afc_echo_efficiency(d, f, d0)

    scan = np.linspace(lo, hi, 201)
    values = np.array([-objective(f) for f in scan])
    if np.max(values) <= 0.0:
        logger.warning("finesse objective is flat (d=%g); returning the lower bound", d)
        return lo, 0.0

    best = int(np.argmax(values))
    bracket = (scan[max(best - 1, 0)], scan[min(best + 1, len(scan) - 1)])
    result = minimize_scalar(objective, bounds=bracket, method="bounded", options={"xatol": 1e-6})

    candidates = [(float(result.x), -float(result.fun)), (lo, float(values[0])), (hi, float(values[-1]))]
    f_star, eta_star = max(candidates, key=lambda item: item[1])
    return f_star, eta_star


def plan_multimode(
    bandwidth: float,
    min_tooth_fwhm: float,
    mode_duration: float,
    control_duration: float,
    n_modes: int,
    d: float,
    d0: float,
    transfer_efficiency: float = 1.0,
) -> CombDesign:
    """Design a comb whose storage time holds ``n_modes`` time bins plus the control pulses."""
    for key, value in (
        ("bandwidth", bandwidth),
        ("min_tooth_fwhm", min_tooth_fwhm),
        ("mode_duration", mode_duration),
        ("control_duration", control_duration),
    ):
        require_positive(key, value)
    if int(n_modes) < 1:
        raise DomainError(f"n_modes must be >= 1, got {n_modes}")

    storage_time = n_modes * mode_duration + control_duration
    delta = 1.0 / storage_time
    num_teeth = int(math.floor(bandwidth / delta + 1e-9))
    if num_teeth < 1:
        raise BandwidthTooSmallError(f"bandwidth {bandwidth} MHz holds no tooth at spacing {delta:.4g} MHz")
    if num_teeth < n_modes:
        raise CapacityInfeasibleError(f"{num_teeth} teeth cannot hold {n_modes} modes")

    finesse = max(1.0, delta / min_tooth_fwhm)
    comb = CombSpec(delta=delta, tooth_fwhm=delta / finesse, num_teeth=num_teeth, peak_depth=d, background_depth=d0)
    eta_afc = afc_echo_efficiency(d, finesse, d0)
    capacity = min(num_teeth, int(math.floor((storage_time - control_duration) / mode_duration + 1e-9)))
    design = CombDesign(
        comb=comb,
        predicted_afc_efficiency=eta_afc,
        predicted_3le_efficiency=three_level_efficiency(eta_afc, transfer_efficiency),
        mode_capacity=capacity,
    )
    logger.info(
        "planned comb: delta=%.4f MHz, %d teeth, F=%.2f, eta_afc=%.4f", delta, num_teeth, finesse, eta_afc
    )
    return design
