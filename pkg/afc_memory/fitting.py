"""Weighted fits for spin decay, Rabi sweeps, interference fringes and linear trends.

Uncertainties are one standard deviation from the linearized covariance,
with ``sigmas`` taken as absolute per-point standard errors.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats
from scipy.optimize import curve_fit, least_squares

from .errors import ConvergenceError, DegenerateDataError, ValidationError
from .utils import spans_full_turn

logger = logging.getLogger(__name__)

DECAY_CONSTANT = math.pi**2 / (2.0 * math.log(2.0))


@dataclass(frozen=True, eq=False)
class FitReport:
    """Fit estimates as name -> (value, one-sigma uncertainty)."""

    estimates: Dict[str, Tuple[float, float]]
    residual_norm: float
    converged: bool
    covariance: np.ndarray
    at_bound: bool = False
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, (_, error) in self.estimates.items():
            if not error >= 0:
                raise ValidationError(name, f"uncertainty must be non-negative, got {error}")
        if self.converged and not math.isfinite(self.residual_norm):
            raise ValidationError("residual_norm", "a converged fit needs a finite residual")

    def value(self, name: str) -> float:
        return self.estimates[name][0]

    def error(self, name: str) -> float:
        return self.estimates[name][1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimates": {k: {"value": v, "sigma": s} for k, (v, s) in self.estimates.items()},
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "at_bound": self.at_bound,
            "covariance": np.asarray(self.covariance).tolist(),
            **self.extra,
        }


def _as_arrays(*columns: Sequence[float]) -> Tuple[np.ndarray, ...]:
    arrays = tuple(np.asarray(c, dtype=float) for c in columns)
    length = len(arrays[0])
    for array in arrays:
        if array.shape != (length,):
            raise DegenerateDataError("data columns must be one-dimensional and of equal length")
        if not np.all(np.isfinite(array)):
            raise DegenerateDataError("data contain non-finite values")
    return arrays


def _check_sigmas(sigmas: np.ndarray) -> None:
    if np.any(sigmas <= 0):
        raise DegenerateDataError("sigmas must be strictly positive")


def _safe_sigma(variance: float) -> float:
    return math.sqrt(variance) if variance > 0 and math.isfinite(variance) else 0.0


def decay_model(ts: np.ndarray, eta0: float, gamma_squared: float) -> np.ndarray:
    return eta0 * np.exp(-gamma_squared * DECAY_CONSTANT * np.asarray(ts) ** 2)


def fit_gaussian_decay(ts: Sequence[float], etas: Sequence[float], sigmas: Sequence[float]) -> FitReport:
    """Fit eta(T) = eta0 * exp(-(gamma*T)^2 * pi^2 / (2 ln 2)) and report eta0 and gamma_is.

    The fit runs in gamma^2 so that a flat curve sits at an interior point;
    gamma_is is reported as sqrt(max(gamma^2, 0)).
    """
    ts, etas, sigmas = _as_arrays(ts, etas, sigmas)
    if len(ts) < 4:
        raise DegenerateDataError(f"need at least 4 points, got {len(ts)}")
    _check_sigmas(sigmas)
    if np.ptp(ts) == 0:
        raise DegenerateDataError("all storage times are identical")

    positive = etas > 0
    if np.count_nonzero(positive) >= 2 and np.ptp(ts[positive]) > 0:
        weights = etas[positive] / sigmas[positive]
        slope, intercept = np.polyfit(ts[positive] ** 2, np.log(etas[positive]), 1, w=weights)
        p0 = [math.exp(intercept), max(-slope / DECAY_CONSTANT, 0.0)]
    else:
        p0 = [float(np.max(etas)) or 1e-3, 0.0]

    try:
        popt, pcov = curve_fit(
            decay_model, ts, etas, p0=p0, sigma=sigmas, absolute_sigma=True, xtol=1e-14, ftol=1e-14, maxfev=20000
        )
    except RuntimeError as exc:
        raise ConvergenceError(f"decay fit did not converge: {exc}") from exc

    eta0, gamma_squared = (float(v) for v in popt)
    eta0_sigma = _safe_sigma(pcov[0, 0])
    g2_sigma = _safe_sigma(pcov[1, 1])
    gamma = math.sqrt(max(gamma_squared, 0.0))
    if gamma > 0 and gamma > math.sqrt(g2_sigma):
        gamma_sigma = g2_sigma / (2.0 * gamma)
    else:
        gamma_sigma = math.sqrt(g2_sigma)
    residuals = (etas - decay_model(ts, *popt)) / sigmas
    return FitReport(
        estimates={"eta0": (eta0, eta0_sigma), "gamma_is_mhz": (gamma, gamma_sigma)},
        residual_norm=float(np.linalg.norm(residuals)),
        converged=True,
        covariance=pcov,
    )


def rabi_models(
    powers: np.ndarray, rabi: float, eta_afc: float, input_area: float, duration: float, power_ref: float
) -> Tuple[np.ndarray, np.ndarray]:
    theta = 2.0 * math.pi * rabi * np.sqrt(np.asarray(powers) / power_ref) * duration
    afc_area = input_area * eta_afc / 2.0 * (1.0 + np.cos(theta))
    three_level = eta_afc / 4.0 * (1.0 - np.cos(theta)) ** 2
    return afc_area, three_level


def fit_rabi(
    powers: Sequence[float],
    afc_areas: Sequence[float],
    tle_effs: Sequence[float],
    afc_sigmas: Optional[Sequence[float]] = None,
    tle_sigmas: Optional[Sequence[float]] = None,
    duration: float = 0.8,
    power_ref: float = 5.7,
    initial_rabi: Optional[float] = None,
) -> FitReport:
    """Simultaneous fit of the two-level echo area and spin-wave efficiency versus control power.

    Shared parameters: rabi_mhz (at ``power_ref``), eta_afc and input_area.
    Five starts around ``initial_rabi`` guard against landing on an alias.
    """
    powers, afc_areas, tle_effs = _as_arrays(powers, afc_areas, tle_effs)
    if len(powers) < 5:
        raise DegenerateDataError(f"need at least 5 power points, got {len(powers)}")
    if np.any(powers < 0):
        raise DegenerateDataError("powers must be non-negative")
    afc_sigmas = np.full(len(powers), 1e-3 * max(float(np.max(np.abs(afc_areas))), 1e-12)) if afc_sigmas is None else np.asarray(afc_sigmas, dtype=float)
    tle_sigmas = np.full(len(powers), 1e-3 * max(float(np.max(np.abs(tle_effs))), 1e-12)) if tle_sigmas is None else np.asarray(tle_sigmas, dtype=float)
    _check_sigmas(afc_sigmas)
    _check_sigmas(tle_sigmas)

    p_max = float(np.max(powers))
    if p_max <= 0:
        raise DegenerateDataError("need at least one non-zero power")
    if initial_rabi is None:
        initial_rabi = 1.0 / (2.0 * duration * math.sqrt(p_max / power_ref))

    def residuals(params: np.ndarray) -> np.ndarray:
        afc, tle = rabi_models(powers, params[0], params[1], params[2], duration, power_ref)
        return np.concatenate([(afc - afc_areas) / afc_sigmas, (tle - tle_effs) / tle_sigmas])

    eta_guess = min(max(2.0 * float(np.max(tle_effs)), 1e-3), 1.0)
    area_guess = max(float(np.max(afc_areas)) / max(eta_guess, 1e-3), 1e-6)
    best = None
    for factor in (1.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.5):
        start = np.array([initial_rabi * factor, eta_guess, area_guess])
        result = least_squares(
            residuals,
            start,
            bounds=([0.0, 0.0, 0.0], [np.inf, 1.0, np.inf]),
            x_scale="jac",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=20000,
        )
        logger.debug("rabi start %.4f MHz -> %.6f MHz, cost %.3e", start[0], result.x[0], result.cost)
        if best is None or result.cost < best.cost:
            best = result
    if best is None or not best.success:
        raise ConvergenceError("rabi fit did not converge from any start")

    jacobian = best.jac
    covariance = linalg.pinv(jacobian.T @ jacobian)
    names = ("rabi_mhz", "eta_afc", "input_area")
    estimates = {name: (float(best.x[i]), _safe_sigma(covariance[i, i])) for i, name in enumerate(names)}
    return FitReport(
        estimates=estimates,
        residual_norm=float(np.linalg.norm(best.fun)),
        converged=bool(best.success),
        covariance=covariance,
        at_bound=bool(np.any(best.active_mask != 0)),
    )


def fit_fringe(phases: Sequence[float], areas: Sequence[float], sigmas: Sequence[float]) -> FitReport:
    """Fit area(phi) = A * (1 + V cos(phi - phi0)).

    Solved as the linear model A + a cos(phi) + b sin(phi) by weighted least
    squares, then V = sqrt(a^2 + b^2) / A.  V is clamped to [0, 1] and
    ``at_bound`` is set when the raw estimate exceeds 1.
    """
    phases, areas, sigmas = _as_arrays(phases, areas, sigmas)
    if len(phases) < 8 or not spans_full_turn(phases):
        raise ValidationError("phases", "need at least 8 phases covering a full turn")
    _check_sigmas(sigmas)

    design = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)]) / sigmas[:, None]
    target = areas / sigmas
    solution, _, rank, _ = linalg.lstsq(design, target)
    if rank < 3:
        raise DegenerateDataError("phases do not resolve a sinusoid")
    covariance = linalg.inv(design.T @ design)
    offset, a, b = (float(v) for v in solution)
    if offset <= 0:
        raise DegenerateDataError("mean fringe area must be positive")

    amplitude = math.hypot(a, b)
    raw_visibility = amplitude / offset
    if amplitude > 0:
        gradient = np.array([-amplitude / offset**2, a / (amplitude * offset), b / (amplitude * offset)])
        visibility_sigma = _safe_sigma(float(gradient @ covariance @ gradient))
        phase_gradient = np.array([0.0, -b / amplitude**2, a / amplitude**2])
        phase_sigma = _safe_sigma(float(phase_gradient @ covariance @ phase_gradient))
    else:
        visibility_sigma = math.sqrt(float(np.max(np.linalg.eigvalsh(covariance[1:, 1:])))) / offset
        phase_sigma = math.pi
    visibility = min(raw_visibility, 1.0)
    if raw_visibility > 1.0:
        logger.warning("fringe visibility %.4f exceeds 1; clamped", raw_visibility)

    residuals = target - design @ solution
    return FitReport(
        estimates={
            "amplitude": (offset, _safe_sigma(covariance[0, 0])),
            "visibility": (visibility, visibility_sigma),
            "phase0": (math.atan2(b, a), phase_sigma),
        },
        residual_norm=float(np.linalg.norm(residuals)),
        converged=True,
        covariance=covariance,
        at_bound=raw_visibility > 1.0,
        extra={"raw_visibility": raw_visibility},
    )


def fit_linear_trend(xs: Sequence[float], ys: Sequence[float], sigmas: Sequence[float], confidence: float = 0.95) -> FitReport:
    """Weighted straight-line fit; ``extra['slope_consistent_with_zero']`` holds the two-sided test."""
    xs, ys, sigmas = _as_arrays(xs, ys, sigmas)
    if len(xs) < 3:
        raise DegenerateDataError("need at least 3 points for a trend")
    _check_sigmas(sigmas)
    if np.ptp(xs) == 0:
        raise DegenerateDataError("all abscissae are identical")

    design = np.column_stack([np.ones_like(xs), xs]) / sigmas[:, None]
    target = ys / sigmas
    solution, _, _, _ = linalg.lstsq(design, target)
    covariance = linalg.inv(design.T @ design)
    intercept, slope = (float(v) for v in solution)
    slope_sigma = _safe_sigma(covariance[1, 1])
    critical = float(stats.norm.ppf(0.5 + confidence / 2.0))
    consistent = abs(slope) <= critical * slope_sigma
    return FitReport(
        estimates={"intercept": (intercept, _safe_sigma(covariance[0, 0])), "slope": (slope, slope_sigma)},
        residual_norm=float(np.linalg.norm(target - design @ solution)),
        converged=True,
        covariance=covariance,
        extra={"confidence": confidence, "slope_consistent_with_zero": bool(consistent)},
    )
