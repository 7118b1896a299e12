"""Numeric tolerances and range limits used across the library."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NumericConfig:
    """Tolerances for root-finding and residual checks.

    abs_tol, rel_tol
        Acceptance tolerances for inverted wealth residuals and threshold
        residual checks: a solve for x is accepted when the residual is below
        abs_tol + rel_tol * |x|. The closed forms are exact, so the defaults
        sit just above rounding level.
    y_tol
        Relative tolerance on the dual variable in bracketed root-finding.
    max_iter
        Iteration cap for scalar solves; exceeded caps raise ConvergenceError.
    h_min, h_max
        Supported peak range. Coefficient formulas grow exponentially in h,
        so evaluation beyond h_max raises HRangeError instead of overflowing.
    floor_eps
        Relative offset used when sampling just above the bankruptcy wealth
        W_bkrp (pi/x divides by x, which may be arbitrarily small there).
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    y_tol: float = 1e-12
    max_iter: int = 200
    h_min: float = 1e-6
    h_max: float = 200.0
    floor_eps: float = 1e-8


DEFAULT_CONFIG = NumericConfig()
