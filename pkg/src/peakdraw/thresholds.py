"""Wealth-threshold curves and the bliss-curve inverse.

Five increasing curves of the consumption peak h partition the wealth axis:

    w_bkrp  cost of funding the consumption floor forever (lam*h/r),
    w_low   below it consumption sits at the floor,
    w_ref   consumption crosses the reference level alpha*h,
    w_peak  consumption reaches the peak h,
    w_updt  the bliss curve: at and above it the peak itself is pushed up.

Each is the image -V~_y(y_b, h) of a dual interval endpoint, evaluated here
through closed forms whose exponentials all decay in h, so the curves are
safe to evaluate over the full peak range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, NumericConfig
from .core_model import ModelParams
from .dual_core import DualConstants, _DualModel, _check_h, _model
from .errors import BracketError

__all__ = [
    "ThresholdSet",
    "thresholds_at",
    "threshold_curves",
    "bliss_inverse",
    "bliss_concavity_threshold",
]

NAMES = ("w_bkrp", "w_low", "w_ref", "w_peak", "w_updt")


@dataclass(frozen=True)
class ThresholdSet:
    """The five wealth thresholds at one peak level h."""

    h: float
    w_bkrp: float
    w_low: float
    w_ref: float
    w_peak: float
    w_updt: float

    def as_tuple(self) -> tuple:
        return (self.w_bkrp, self.w_low, self.w_ref, self.w_peak, self.w_updt)


def thresholds_at(params: ModelParams, constants: DualConstants, h: float) -> ThresholdSet:
    """All five thresholds at a single peak level."""
    m = _model(params)
    h = _check_h(h, m.cfg)
    vals = m.threshold_values(h)
    return ThresholdSet(h, *(float(v) for v in vals))


def threshold_curves(params: ModelParams, constants: DualConstants, h_grid) -> dict:
    """Vectorized thresholds over an h-grid.

    Returns {"h": array, "w_bkrp": array, ..., "w_updt": array}; one
    coefficient evaluation is shared across the whole grid.
    """
    m = _model(params)
    h_arr = np.asarray(h_grid, dtype=float)
    if h_arr.ndim != 1 or h_arr.size == 0:
        raise ValueError("h_grid must be a non-empty 1-d array")
    for h in (h_arr.min(), h_arr.max()):
        _check_h(float(h), m.cfg)
    vals = m.threshold_values(h_arr)
    out = {"h": h_arr}
    for name, v in zip(NAMES, vals):
        out[name] = np.asarray(v, dtype=float)
    return out


def bliss_inverse(
    params: ModelParams,
    constants: DualConstants,
    x: float,
    cfg: NumericConfig = DEFAULT_CONFIG,
) -> float:
    """The peak level h with w_updt(h) = x (inverse of the bliss curve).

    w_updt is increasing in h, so the root is bracketed on [h_min, h_max]
    once x lies between the endpoint values; outside that a BracketError is
    raised.  Using the full configured range as the bracket makes the search
    immune to any local non-monotonicity: bisection only ever keeps a
    sign-changing subinterval.
    """
    m = _model(params)
    x = float(x)
    lo, hi = cfg.h_min, cfg.h_max
    f_lo = float(m.threshold_values(lo)[4]) - x
    f_hi = float(m.threshold_values(hi)[4]) - x
    if f_lo > 0.0:
        raise BracketError(
            f"x = {x} lies below the bliss curve at h_min = {lo} "
            f"(w_updt(h_min) = {f_lo + x}); no peak level reaches it"
        )
    if f_hi < 0.0:
        raise BracketError(
            f"x = {x} lies above the bliss curve at h_max = {hi} "
            f"(w_updt(h_max) = {f_hi + x}); raise h_max to invert this far out"
        )
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    a, b, fa, fb = lo, hi, f_lo, f_hi
    tol = cfg.abs_tol + cfg.rel_tol * abs(x)
    mid = 0.5 * (a + b)
    for _ in range(cfg.max_iter):
        # secant proposal, safeguarded to the bracket interior
        if fb != fa:
            mid = b - fb * (b - a) / (fb - fa)
        if not (a < mid < b):
            mid = 0.5 * (a + b)
        fm = float(m.threshold_values(mid)[4]) - x
        if abs(fm) < tol:
            return mid
        if (fa < 0.0) == (fm < 0.0):
            a, fa = mid, fm
        else:
            b, fb = mid, fm
        if b - a < 1e-14 * max(1.0, a):
            break
    return mid


def bliss_concavity_threshold(params: ModelParams, constants: DualConstants) -> float | None:
    """The peak level beyond which the bliss curve turns concave in wealth.

    The second h-derivative of w_updt is a two-term signed exponential
    M1 e^{b1 h} - M2 e^{b2 h} with b1 < b2 <= 0; when both amplitudes are
    positive it changes sign exactly once, at

        h_bar = (ln M1 - ln M2) / (b2 - b1).

    Returns None when no sign change exists: for beta1 >= beta2 the second
    amplitude is non-positive (the curve stays convex in h, i.e. the bliss
    curve in x stays concave nowhere / everywhere one-signed), and for
    alpha = lam the two rates coincide.  Only the Base and GeneralRate
    variants carry this closed form.
    """
    m = _model(params)
    if not isinstance(m, _DualModel):
        raise ValueError(
            "bliss_concavity_threshold needs the Base or GeneralRate variant; "
            "the general-reference bliss curve has no two-rate closed form"
        )
    groups = m.curves["w_updt"].total.grouped_amplitudes()
    nonzero = sorted((g for g in groups if g[0] < -1e-14), key=lambda g: g[0])
    if len(nonzero) != 2:
        return None
    (b1, a1), (b2, a2) = nonzero  # b1 < b2 < 0
    m1 = a1 * b1 * b1
    m2 = -a2 * b2 * b2
    if m1 <= 0.0 or m2 <= 0.0:
        return None
    return (math.log(m1) - math.log(m2)) / (b2 - b1)
