"""Dual-side closed forms: ODE constants, coefficients, smooth-fit residuals.

The primal HJB problem is linearized by the convex dual transform.  The dual
value solves a linear second order ODE piecewise on four adjacent y-intervals
(consumption floored / below reference / above reference / at the peak), and
eight coefficient functions C1(h)..C8(h) glue the homogeneous solutions
y^q1, y^q2 so that value and slope paste continuously at the three interior
boundaries and the h-derivative vanishes at the peak-updating boundary.

Numerics: every coefficient is a short signed sum of exponentials in h whose
rates can exceed 100/e-fold growth, and the homogeneous products C_i(h)*y^q
pair a huge factor with a tiny one.  _ExpSum keeps each term as
(sign, log amplitude, rate) and combines all exponents before a single exp,
so products that are representable are evaluated without intermediate
overflow or underflow.  The peak is capped at a configurable h_max because
the growth is intrinsic to the closed forms.

The general-reference variant (state-dependent reference weight phi) does not
need the log-space machinery for its supported parameter ranges; it is kept
as a direct float transcription of its case-dependent closed forms, with
h-derivatives taken by complex-step differentiation.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import DEFAULT_CONFIG, NumericConfig
from .core_model import ModelParams, validate
from .errors import DegenerateMarket, HRangeError

__all__ = [
    "DualConstants",
    "CoefficientSet",
    "ResidualReport",
    "dual_constants",
    "coefficients",
    "smooth_fit_residuals",
]

# Branch indices follow the dual interval order from high y to low y:
# 1: consumption at the floor lam*h      y >= y_gloom
# 2: interior below the reference        1 <= y < y_gloom
# 3: interior above the reference        y_peak <= y < 1
# 4: consumption at the peak h           y_updt <= y < y_peak
BRANCHES = (1, 2, 3, 4)


@dataclass(frozen=True)
class DualConstants:
    """Roots of the homogeneous dual ODE: k q^2 - (k + r - gamma) q - gamma = 0.

    k = (r - mu)^2 / (2 sigma^2) > 0, q1 < 0 < 1 < q2.  For r = gamma the
    quadratic reduces to k q^2 - k q - gamma = 0 and q1 + q2 = 1.
    """

    k: float
    q1: float
    q2: float


@dataclass(frozen=True)
class CoefficientSet:
    """The eight pasting coefficients evaluated at one peak level h.

    c2 = 0 always (the branch that must stay bounded as y grows has no
    y^q2 component).  case_tag is None except for the general-reference
    variant, where it records which case of the closed forms was active
    ("Case1": the gloom boundary lies above y = 1; "Case2": it collapses
    onto y = 1 and the below-reference interval is empty, so c3 and c4
    are not defined and are reported as nan).
    """

    h: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float
    case_tag: str | None = None

    def as_tuple(self) -> tuple:
        return (self.c1, self.c2, self.c3, self.c4, self.c5, self.c6, self.c7, self.c8)


@dataclass(frozen=True)
class ResidualReport:
    """Smooth-fit residuals of the dual value at one peak level h.

    value_* and slope_* are |dV~| and |dV~_y| mismatches across the three
    interior boundaries (gloom side, reference y=1, peak side); updating_h is
    |V~_h| at the peak-updating point y_updt.  scale is max(1, |V~|) over the
    boundary points, for relative normalization.
    """

    h: float
    value_gloom: float
    slope_gloom: float
    value_ref: float
    slope_ref: float
    value_peak: float
    slope_peak: float
    updating_h: float
    scale: float

    def max_abs(self) -> float:
        return max(
            self.value_gloom,
            self.slope_gloom,
            self.value_ref,
            self.slope_ref,
            self.value_peak,
            self.slope_peak,
            self.updating_h,
        )

    def max_relative(self) -> float:
        return self.max_abs() / self.scale


class _ExpSum:
    """Signed sum of exponentials sum_i s_i * exp(L_i + b_i * h).

    Closed under addition, scalar multiplication, and d/dh; evaluation
    accepts an extra additive exponent so that products like C(h) * y^q are
    computed as exp(L + b*h + q*ln y) term by term.
    """

    __slots__ = ("signs", "logamps", "rates")

    def __init__(self, terms=()):
        signs, logamps, rates = [], [], []
        for amp, rate in terms:
            if amp == 0.0:
                continue
            signs.append(1.0 if amp > 0 else -1.0)
            logamps.append(math.log(abs(amp)))
            rates.append(float(rate))
        self.signs = np.asarray(signs, dtype=float)
        self.logamps = np.asarray(logamps, dtype=float)
        self.rates = np.asarray(rates, dtype=float)

    @classmethod
    def _raw(cls, signs, logamps, rates):
        out = cls.__new__(cls)
        out.signs = np.asarray(signs, dtype=float)
        out.logamps = np.asarray(logamps, dtype=float)
        out.rates = np.asarray(rates, dtype=float)
        return out

    def __add__(self, other: "_ExpSum") -> "_ExpSum":
        return _ExpSum._raw(
            np.concatenate([self.signs, other.signs]),
            np.concatenate([self.logamps, other.logamps]),
            np.concatenate([self.rates, other.rates]),
        )

    def scaled(self, factor: float) -> "_ExpSum":
        """Multiply every term by a scalar factor."""
        if factor == 0.0:
            return _ExpSum()
        sgn = 1.0 if factor > 0 else -1.0
        return _ExpSum._raw(self.signs * sgn, self.logamps + math.log(abs(factor)), self.rates)

    def rate_shifted(self, delta: float, extra_logamp: float = 0.0) -> "_ExpSum":
        """Multiply every term by exp(extra_logamp + delta * h)."""
        return _ExpSum._raw(self.signs, self.logamps + extra_logamp, self.rates + delta)

    def d_dh(self) -> "_ExpSum":
        """Termwise h-derivative; rate-zero terms vanish."""
        keep = self.rates != 0.0
        r = self.rates[keep]
        return _ExpSum._raw(
            self.signs[keep] * np.sign(r), self.logamps[keep] + np.log(np.abs(r)), r
        )

    def value(self, h):
        return self.shifted(h, 0.0)

    def shifted(self, h, extra):
        """sum_i s_i exp(L_i + b_i h + extra), h/extra scalars or same-shape arrays."""
        h_arr = np.asarray(h, dtype=float)
        extra_arr = np.asarray(extra, dtype=float)
        shape = np.broadcast_shapes(h_arr.shape, extra_arr.shape)
        acc = np.zeros(shape)
        for s, L, b in zip(self.signs, self.logamps, self.rates):
            acc += s * np.exp(L + b * h_arr + extra_arr)
        return float(acc) if shape == () else acc

    def grouped_amplitudes(self) -> list[tuple[float, float]]:
        """Collapse to [(rate, signed amplitude)], merging near-equal rates."""
        groups: list[tuple[float, float]] = []
        for s, L, b in zip(self.signs, self.logamps, self.rates):
            amp = s * math.exp(L)
            for i, (rate, total) in enumerate(groups):
                if math.isclose(rate, b, rel_tol=1e-9, abs_tol=1e-12):
                    groups[i] = (rate, total + amp)
                    break
            else:
                groups.append((b, amp))
        return groups


@dataclass(frozen=True)
class _ThresholdCurve:
    """Threshold as (exp-sum in h) + slope*h + const; analytic derivatives."""

    total: _ExpSum
    slope: float
    const: float

    def value(self, h):
        return self.total.value(h) + self.slope * np.asarray(h, dtype=float) + self.const

    def d1(self, h):
        out = self.total.d_dh().value(h) + self.slope
        return out

    def d2(self, h):
        return self.total.d_dh().d_dh().value(h)


def _check_h(h: float, cfg: NumericConfig) -> float:
    h = float(h)
    if not h > 0 or not math.isfinite(h):
        raise HRangeError(f"peak h must lie in (0, {cfg.h_max}], got {h}")
    if h > cfg.h_max:
        raise HRangeError(
            f"peak h = {h} exceeds h_max = {cfg.h_max}; the coefficient closed forms "
            "grow exponentially in h and are capped (raise h_max in NumericConfig "
            "deliberately if needed)"
        )
    return h


class _DualModel:
    """Closed forms for the Base and GeneralRate variants (one code path).

    The two variants share every formula once the root pair (q1, q2) comes
    from the full quadratic and the two particular-solution weights

        P_i = -q_i/gamma + 1/r - (gamma - 2r + k)/r^2 * (q_i - 1)

    are used; at r = gamma these reduce to P1 = k(1-q1)/gamma^2 > 0 and
    P2 = -k(q2-1)/gamma^2 < 0 and every coefficient collapses to the
    equal-rate closed form term by term.
    """

    def __init__(self, p: ModelParams, cfg: NumericConfig = DEFAULT_CONFIG):
        self.p = p
        self.cfg = cfg
        r, gamma, sigma = p.r, p.gamma, p.sigma
        k = (r - p.mu) ** 2 / (2.0 * sigma**2)
        if k == 0.0:
            raise DegenerateMarket(
                "mu = r makes the market risk premium zero (k = 0); the dual ODE "
                "degenerates and the closed forms are undefined"
            )
        a = k + r - gamma
        disc = math.sqrt(a * a + 4.0 * k * gamma)
        self.k = k
        self.q1 = (a - disc) / (2.0 * k)
        self.q2 = (a + disc) / (2.0 * k)
        q1, q2 = self.q1, self.q2
        self.P1 = -q1 / gamma + 1.0 / r - ((gamma - 2.0 * r + k) / r**2) * (q1 - 1.0)
        self.P2 = -q2 / gamma + 1.0 / r - ((gamma - 2.0 * r + k) / r**2) * (q2 - 1.0)

        al, lam, b1, b2 = p.alpha, p.lam, p.beta1, p.beta2
        P1, P2 = self.P1, self.P2
        dq = q2 - q1
        one_al = 1.0 - al

        # Coefficient ladder: each branch pair adds one pasting term to the
        # previous one.  Rates are the h-exponents of the closed forms.
        c4 = _ExpSum([(-P1 / (dq * b1), -(al - lam) * (q2 - 1.0) * b1)])
        c6 = c4 + _ExpSum([((b2 - b1) * P1 / (dq * b1 * b2), 0.0)])
        c8 = c6 + _ExpSum([(P1 / (dq * b2), one_al * (q2 - 1.0) * b2)])
        s_mix = one_al * dq * b2 + (al - lam) * (q2 - 1.0) * b1
        pref = one_al ** (q2 - q1)
        c7 = _ExpSum(
            [
                (pref * P1 * (al - lam) * (q2 - 1.0) / (dq * s_mix), -s_mix),
                (pref * P1 * (q2 - 1.0) / ((1.0 - q1) * dq * b2), -one_al * (1.0 - q1) * b2),
            ]
        )
        c5 = c7 + _ExpSum([(P2 / (dq * b2), -one_al * (1.0 - q1) * b2)])
        c3 = c5 + _ExpSum([((b2 - b1) * P2 / (dq * b1 * b2), 0.0)])
        c1 = c3 + _ExpSum([(-P2 / (dq * b1), (al - lam) * (1.0 - q1) * b1)])
        self.csums = {1: c1, 2: _ExpSum(), 3: c3, 4: c4, 5: c5, 6: c6, 7: c7, 8: c8}
        # homogeneous pair (y^q1 coefficient, y^q2 coefficient) per branch
        self.branch_pairs = {1: (c1, _ExpSum()), 2: (c3, c4), 3: (c5, c6), 4: (c7, c8)}

        # Threshold curves, read off as -V~_y at the dual interval endpoints.
        # Every exp-sum below has non-positive rates only, so thresholds never
        # overflow: the growth of C_i(h) is exactly cancelled by the boundary
        # point y_b(h)^(q-1).
        lg = (al - lam) * b1  # d(ln y_gloom)/dh
        lp = -one_al * b2  # d(ln y_peak)/dh
        w_low_sum = c1.scaled(-q1).rate_shifted((q1 - 1.0) * lg)
        w_ref_sum = c3.scaled(-q1) + c4.scaled(-q2)
        w_peak_sum = c5.scaled(-q1).rate_shifted((q1 - 1.0) * lp) + c6.scaled(-q2).rate_shifted(
            (q2 - 1.0) * lp
        )
        w_updt_sum = c7.scaled(-q1 * one_al ** (q1 - 1.0)).rate_shifted(
            (q1 - 1.0) * lp
        ) + c8.scaled(-q2 * one_al ** (q2 - 1.0)).rate_shifted((q2 - 1.0) * lp)
        const2 = (gamma - r + k) / (r**2 * b1)
        const3 = (gamma - r + k) / (r**2 * b2)
        self.curves = {
            "w_bkrp": _ThresholdCurve(_ExpSum(), lam / r, 0.0),
            "w_low": _ThresholdCurve(w_low_sum, lam / r, 0.0),
            "w_ref": _ThresholdCurve(w_ref_sum, al / r, -const2),
            "w_peak": _ThresholdCurve(w_peak_sum, 1.0 / r, -const3),
            "w_updt": _ThresholdCurve(w_updt_sum, 1.0 / r, 0.0),
        }

    # -- structure ---------------------------------------------------------

    def constants(self) -> DualConstants:
        return DualConstants(k=self.k, q1=self.q1, q2=self.q2)

    def case_tag(self, h) -> str | None:
        return None

    def log_boundaries(self, h):
        """(ln y_gloom, ln y_peak, ln y_updt) as arrays/scalars in h."""
        p = self.p
        h = np.asarray(h, dtype=float)
        lg = (p.alpha - p.lam) * p.beta1 * h
        lp = -(1.0 - p.alpha) * p.beta2 * h
        lu = math.log(1.0 - p.alpha) + lp
        return lg, lp, lu

    def coefficient_values(self, h):
        return tuple(self.csums[i].value(h) for i in range(1, 9))

    def coefficient_set(self, h: float) -> CoefficientSet:
        h = _check_h(h, self.cfg)
        c = self.coefficient_values(h)
        return CoefficientSet(h, *c, case_tag=None)

    # -- dual value and derivatives ----------------------------------------

    def _particular(self, branch, y, h, order):
        """Branch particular part: order 0 value, 1 d/dy, 2 d2/dy2, "h" d/dh."""
        p = self.p
        r, gamma, k = p.r, p.gamma, self.k
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        if branch == 1:
            e = np.exp((p.alpha - p.lam) * p.beta1 * h)
            if order == 0:
                return -p.lam * h * y / r + (1.0 - e) / (gamma * p.beta1)
            if order == 1:
                return -p.lam * h / r + 0.0 * y
            if order == 2:
                return 0.0 * y
            return -p.lam * y / r - ((p.alpha - p.lam) / gamma) * e
        if branch == 4:
            e = np.exp(-(1.0 - p.alpha) * p.beta2 * h)
            if order == 0:
                return -h * y / r + (1.0 - e) / (gamma * p.beta2)
            if order == 1:
                return -h / r + 0.0 * y
            if order == 2:
                return 0.0 * y
            return -y / r + ((1.0 - p.alpha) / gamma) * e
        beta = p.beta1 if branch == 2 else p.beta2
        if order == 0:
            return (
                y * np.log(y) / (r * beta)
                + (gamma - 2.0 * r + k) * y / (r**2 * beta)
                - p.alpha * h * y / r
                + 1.0 / (gamma * beta)
            )
        if order == 1:
            return (np.log(y) + 1.0) / (r * beta) + (gamma - 2.0 * r + k) / (r**2 * beta) - p.alpha * h / r
        if order == 2:
            return 1.0 / (r * beta * y)
        return -p.alpha * y / r + 0.0 * h

    def v(self, y, h, branch):
        ca, cb = self.branch_pairs[branch]
        lny = np.log(y)
        return (
            ca.shifted(h, self.q1 * lny)
            + cb.shifted(h, self.q2 * lny)
            + self._particular(branch, y, h, 0)
        )

    def v_y(self, y, h, branch):
        ca, cb = self.branch_pairs[branch]
        lny = np.log(y)
        return (
            self.q1 * ca.shifted(h, (self.q1 - 1.0) * lny)
            + self.q2 * cb.shifted(h, (self.q2 - 1.0) * lny)
            + self._particular(branch, y, h, 1)
        )

    def v_yy(self, y, h, branch):
        ca, cb = self.branch_pairs[branch]
        q1, q2 = self.q1, self.q2
        lny = np.log(y)
        return (
            q1 * (q1 - 1.0) * ca.shifted(h, (q1 - 2.0) * lny)
            + q2 * (q2 - 1.0) * cb.shifted(h, (q2 - 2.0) * lny)
            + self._particular(branch, y, h, 2)
        )

    def y_v_yy(self, y, h, branch):
        """y * V~_yy, the quantity driving the risky position; overflow-safe."""
        ca, cb = self.branch_pairs[branch]
        q1, q2 = self.q1, self.q2
        lny = np.log(y)
        base = q1 * (q1 - 1.0) * ca.shifted(h, (q1 - 1.0) * lny) + q2 * (q2 - 1.0) * cb.shifted(
            h, (q2 - 1.0) * lny
        )
        if branch in (2, 3):
            beta = self.p.beta1 if branch == 2 else self.p.beta2
            base = base + 1.0 / (self.p.r * beta)
        return base

    def v_h(self, y, h, branch):
        ca, cb = self.branch_pairs[branch]
        lny = np.log(y)
        return (
            ca.d_dh().shifted(h, self.q1 * lny)
            + cb.d_dh().shifted(h, self.q2 * lny)
            + self._particular(branch, y, h, "h")
        )

    # -- thresholds ----------------------------------------------------------

    def threshold_values(self, h):
        return tuple(self.curves[n].value(h) for n in ("w_bkrp", "w_low", "w_ref", "w_peak", "w_updt"))

    def w_updt_d1(self, h):
        return self.curves["w_updt"].d1(h)

    def w_updt_d2(self, h):
        return self.curves["w_updt"].d2(h)

    # -- policy pieces -------------------------------------------------------

    def c_star(self, y, h, branch):
        p = self.p
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        if branch == 1:
            return p.lam * h + np.zeros_like(y)  # holds at y = +inf (the floor)
        if branch == 2:
            return -np.log(y) / p.beta1 + p.alpha * h
        if branch == 3:
            return -np.log(y) / p.beta2 + p.alpha * h
        return h + np.zeros_like(y)

    def mpc_beta(self, branch, h):
        """Effective beta in mpc = 1/(beta_eff * y * V~_yy) on branches 2/3."""
        return self.p.beta1 if branch == 2 else self.p.beta2

    def floor_value(self, h):
        """V at the wealth floor x = lam*h/r (the y -> inf limit)."""
        p = self.p
        return (1.0 - np.exp((p.alpha - p.lam) * p.beta1 * np.asarray(h, dtype=float))) / (
            p.gamma * p.beta1
        )


class _RefModel:
    """Closed forms for the GeneralReference variant (r = gamma).

    The reference level is alpha*(phi(h) c + (1-phi(h)) h); with
    ap(h) = 1 - alpha*phi(h) and expo(h) = (alpha-lam) - (1-lam)*alpha*phi(h)
    the dual boundaries become y_gloom = max(1, ap e^{expo beta1 h}),
    y_peak = ap e^{-(1-alpha) beta2 h}, y_updt = (1-alpha) e^{-(1-alpha) beta2 h}.
    Case 1 applies while the unclamped gloom boundary exceeds 1; in Case 2 the
    below-reference interval is empty and c3/c4 are undefined (nan).

    All evaluators accept complex h so h-derivatives are taken by complex
    step; the case decision is always made at the real part.
    """

    def __init__(self, p: ModelParams, cfg: NumericConfig = DEFAULT_CONFIG):
        self.p = p
        self.cfg = cfg
        r, sigma = p.r, p.sigma
        k = (r - p.mu) ** 2 / (2.0 * sigma**2)
        if k == 0.0:
            raise DegenerateMarket(
                "mu = r makes the market risk premium zero (k = 0); the dual ODE "
                "degenerates and the closed forms are undefined"
            )
        disc = math.sqrt(k * k + 4.0 * k * p.gamma)
        self.k = k
        self.q1 = (k - disc) / (2.0 * k)
        self.q2 = (k + disc) / (2.0 * k)

    def constants(self) -> DualConstants:
        return DualConstants(k=self.k, q1=self.q1, q2=self.q2)

    # -- case machinery ------------------------------------------------------

    def _ap_expo(self, h):
        p = self.p
        phi = p.phi.value(h)
        ap = 1.0 - p.alpha * phi
        expo = (p.alpha - p.lam) - (1.0 - p.lam) * p.alpha * phi
        return phi, ap, expo

    def log_case_criterion(self, h: float) -> float:
        """log of the unclamped gloom boundary; Case 1 iff > 0."""
        _, ap, expo = self._ap_expo(float(h))
        return math.log(ap) + expo * self.p.beta1 * float(h)

    def case_tag(self, h: float) -> str:
        crit = self.log_case_criterion(h)
        band = 1e-12
        if crit > band:
            return "Case1"
        if crit < -band:
            return "Case2"
        # Within the band the strict inequality is numerically meaningless:
        # evaluate both cases and keep the one that pastes better.
        r1 = self._residuals_for_case(float(h), "Case1").max_abs()
        r2 = self._residuals_for_case(float(h), "Case2").max_abs()
        return "Case1" if r1 <= r2 else "Case2"

    def log_boundaries(self, h):
        p = self.p
        h_arr = np.asarray(h, dtype=float)
        phi = p.phi.value(h_arr)
        ap = 1.0 - p.alpha * phi
        expo = (p.alpha - p.lam) - (1.0 - p.lam) * p.alpha * phi
        lg = np.maximum(0.0, np.log(ap) + expo * p.beta1 * h_arr)
        lp = np.log(ap) - (1.0 - p.alpha) * p.beta2 * h_arr
        lu = math.log(1.0 - p.alpha) - (1.0 - p.alpha) * p.beta2 * h_arr
        return lg, lp, lu

    # -- coefficients ----------------------------------------------------------

    def _coeffs(self, h, case: str):
        """c1..c8 at (possibly complex) h for a fixed case."""
        p = self.p
        q1, q2, k = self.q1, self.q2, self.k
        gamma = p.gamma
        g2 = gamma * gamma
        al, lam, b1, b2 = p.alpha, p.lam, p.beta1, p.beta2
        dq = q2 - q1
        one_al = 1.0 - al
        phi = p.phi.value(h)
        ap = 1.0 - al * phi
        expo = (al - lam) - (1.0 - lam) * al * phi

        s_mix = one_al * dq * b2 + (al - lam) * (q2 - 1.0) * b1
        c7 = (one_al ** (q2 - q1) * (k / g2) * ((1.0 - q1) / dq) * (al - lam) * (q2 - 1.0) / s_mix) * np.exp(
            -s_mix * h
        ) + one_al ** (q2 - q1) * (k / (g2 * b2)) * ((q2 - 1.0) / dq) * np.exp(
            -one_al * (1.0 - q1) * b2 * h
        )
        c5 = c7 - (k / (g2 * b2)) * ((q2 - 1.0) / dq) * ap ** (-q1) * np.exp(
            -one_al * (1.0 - q1) * b2 * h
        )
        if case == "Case1":
            c4 = -(k / (g2 * b1)) * ((1.0 - q1) / dq) * ap ** (-q2) * np.exp(
                -expo * (q2 - 1.0) * b1 * h
            )
            db = (b2 - b1) / (b1 * b2)
            c6 = (
                c4
                + (k / g2) * db * ((1.0 - q1) / dq) / ap
                + (1.0 / gamma) * db * (q1 / dq) * (al * phi / ap)
                + (1.0 / gamma) * db * ((1.0 - q1) / dq) * (1.0 / ap) * np.log(1.0 / ap)
            )
            c8 = c6 + (k / (g2 * b2)) * ((1.0 - q1) / dq) * ap ** (-q2) * np.exp(
                one_al * (q2 - 1.0) * b2 * h
            )
            c3 = (
                c5
                - (k / g2) * db * ((q2 - 1.0) / dq) / ap
                + (1.0 / gamma) * db * (q2 / dq) * (al * phi / ap)
                - (1.0 / gamma) * db * ((q2 - 1.0) / dq) * (1.0 / ap) * np.log(1.0 / ap)
            )
            c1 = c3 + (k / (g2 * b1)) * ((q2 - 1.0) / dq) * ap ** (-q1) * np.exp(
                expo * (1.0 - q1) * b1 * h
            )
        else:
            c6 = (
                -((1.0 - q1) / dq) * (lam * h / gamma)
                - (q1 / dq) * (1.0 / (gamma * b1)) * (1.0 - np.exp(expo * b1 * h))
                - ((1.0 - q1) / dq) * (1.0 / (gamma * b2)) * (1.0 / ap) * np.log(1.0 / ap)
                + (q1 / dq) * (1.0 / (gamma * b2)) * (1.0 - 1.0 / ap)
                + ((1.0 - q1) / dq) * (al * h / gamma) * ((1.0 - phi) / ap)
                - ((1.0 - q1) / dq) * (k / (g2 * b2)) / ap
            )
            c8 = c6 + (k / (g2 * b2)) * ((1.0 - q1) / dq) * ap ** (-q2) * np.exp(
                one_al * (q2 - 1.0) * b2 * h
            )
            c1 = (
                c5
                + ((q2 - 1.0) / dq) * (lam * h / gamma)
                - (q2 / dq) * (1.0 / (gamma * b1)) * (1.0 - np.exp(expo * b1 * h))
                + ((q2 - 1.0) / dq) * (1.0 / (gamma * b2)) * (1.0 / ap) * np.log(1.0 / ap)
                + (q2 / dq) * (1.0 / (gamma * b2)) * (1.0 - 1.0 / ap)
                - ((q2 - 1.0) / dq) * (al * h / gamma) * ((1.0 - phi) / ap)
                + ((q2 - 1.0) / dq) * (k / (g2 * b2)) / ap
            )
            c3 = math.nan
            c4 = math.nan
        return c1, 0.0, c3, c4, c5, c6, c7, c8

    def coefficient_set(self, h: float) -> CoefficientSet:
        h = _check_h(h, self.cfg)
        case = self.case_tag(h)
        c = self._coeffs(h, case)
        return CoefficientSet(h, *(float(np.real(ci)) for ci in c), case_tag=case)

    # -- dual value -------------------------------------------------------------

    def _v_branch(self, y, h, branch, case):
        """V~ on a branch at fixed case; y may be an array, h may be complex."""
        p = self.p
        gamma, k = p.gamma, self.k
        g2 = gamma * gamma
        c1, _, c3, c4, c5, c6, c7, c8 = self._coeffs(h, case)
        phi = p.phi.value(h)
        ap = 1.0 - p.alpha * phi
        expo = (p.alpha - p.lam) - (1.0 - p.lam) * p.alpha * phi
        if branch == 1:
            return c1 * y**self.q1 - p.lam * h * y / gamma + (1.0 - np.exp(expo * p.beta1 * h)) / (
                gamma * p.beta1
            )
        if branch == 4:
            return (
                c7 * y**self.q1
                + c8 * y**self.q2
                - h * y / gamma
                + (1.0 - np.exp(-(1.0 - p.alpha) * p.beta2 * h)) / (gamma * p.beta2)
            )
        beta = p.beta1 if branch == 2 else p.beta2
        ca, cb = (c3, c4) if branch == 2 else (c5, c6)
        return (
            ca * y**self.q1
            + cb * y**self.q2
            + (1.0 - y / ap) / (gamma * beta)
            + (y / (gamma * beta * ap)) * np.log(y / ap)
            - (p.alpha * h * y / gamma) * ((1.0 - phi) / ap)
            + (k / (g2 * beta)) * y / ap
        )

    def v(self, y, h, branch):
        return self._v_branch(y, h, branch, self.case_tag(float(np.real(h))))

    def v_y(self, y, h, branch):
        p = self.p
        case = self.case_tag(float(np.real(h)))
        c1, _, c3, c4, c5, c6, c7, c8 = self._coeffs(h, case)
        q1, q2 = self.q1, self.q2
        phi = p.phi.value(h)
        ap = 1.0 - p.alpha * phi
        if branch == 1:
            return c1 * q1 * y ** (q1 - 1.0) - p.lam * h / p.gamma + 0.0 * y
        if branch == 4:
            return c7 * q1 * y ** (q1 - 1.0) + c8 * q2 * y ** (q2 - 1.0) - h / p.gamma + 0.0 * y
        beta = p.beta1 if branch == 2 else p.beta2
        ca, cb = (c3, c4) if branch == 2 else (c5, c6)
        return (
            ca * q1 * y ** (q1 - 1.0)
            + cb * q2 * y ** (q2 - 1.0)
            + np.log(y / ap) / (p.gamma * beta * ap)
            - (p.alpha * h / p.gamma) * ((1.0 - phi) / ap)
            + (self.k / (p.gamma**2 * beta)) / ap
        )

    def v_yy(self, y, h, branch):
        return self.y_v_yy(y, h, branch) / np.asarray(y, dtype=float)

    def y_v_yy(self, y, h, branch):
        p = self.p
        case = self.case_tag(float(np.real(h)))
        c1, _, c3, c4, c5, c6, c7, c8 = self._coeffs(h, case)
        q1, q2 = self.q1, self.q2
        pair = {1: (c1, 0.0), 2: (c3, c4), 3: (c5, c6), 4: (c7, c8)}[branch]
        base = pair[0] * q1 * (q1 - 1.0) * y ** (q1 - 1.0) + pair[1] * q2 * (q2 - 1.0) * y ** (
            q2 - 1.0
        )
        if branch in (2, 3):
            beta = p.beta1 if branch == 2 else p.beta2
            phi = p.phi.value(h)
            ap = 1.0 - p.alpha * phi
            base = base + 1.0 / (p.gamma * beta * ap)
        return base

    def v_h(self, y, h, branch):
        """d V~/d h at fixed y by complex step (case frozen at the real h)."""
        case = self.case_tag(float(h))
        step = 1e-20
        return float(np.imag(self._v_branch(y, complex(h, step), branch, case))) / step

    # -- thresholds -------------------------------------------------------------

    def threshold_values_scalar(self, h: float):
        p = self.p
        case = self.case_tag(h)
        c1, _, c3, c4, c5, c6, c7, c8 = (float(np.real(c)) for c in self._coeffs(h, case))
        q1, q2 = self.q1, self.q2
        gamma = p.gamma
        g2 = gamma * gamma
        phi, ap, expo = self._ap_expo(h)
        lg, lp, lu = self.log_boundaries(h)
        yg, yp, yu = math.exp(lg), math.exp(lp), math.exp(lu)
        w_bkrp = p.lam * h / gamma
        w_low = -c1 * q1 * yg ** (q1 - 1.0) + p.lam * h / gamma
        if case == "Case1":
            w_ref = (
                -c3 * q1
                - c4 * q2
                - (1.0 / (gamma * p.beta1 * ap)) * math.log(1.0 / ap)
                - self.k / (g2 * p.beta1 * ap)
                + (p.alpha * h / gamma) * ((1.0 - phi) / ap)
            )
        else:
            w_ref = w_low
        w_peak = (
            -c5 * q1 * yp ** (q1 - 1.0)
            - c6 * q2 * yp ** (q2 - 1.0)
            + (h / gamma) * ((1.0 - p.alpha) / ap)
            - self.k / (g2 * p.beta2 * ap)
            + (p.alpha * h / gamma) * ((1.0 - phi) / ap)
        )
        w_updt = -c7 * q1 * yu ** (q1 - 1.0) - c8 * q2 * yu ** (q2 - 1.0) + h / gamma
        return w_bkrp, w_low, w_ref, w_peak, w_updt

    def threshold_values(self, h):
        h_arr = np.asarray(h, dtype=float)
        if h_arr.shape == ():
            return self.threshold_values_scalar(float(h_arr))
        rows = [self.threshold_values_scalar(float(x)) for x in h_arr.ravel()]
        cols = list(zip(*rows))
        return tuple(np.asarray(c, dtype=float).reshape(h_arr.shape) for c in cols)

    def w_updt_d1(self, h: float) -> float:
        case = self.case_tag(float(h))
        step = 1e-20

        def w_updt_complex(hc):
            p = self.p
            c = self._coeffs(hc, case)
            c7, c8 = c[6], c[7]
            yu = (1.0 - p.alpha) * np.exp(-(1.0 - p.alpha) * p.beta2 * hc)
            return (
                -c7 * self.q1 * yu ** (self.q1 - 1.0)
                - c8 * self.q2 * yu ** (self.q2 - 1.0)
                + hc / p.gamma
            )

        return float(np.imag(w_updt_complex(complex(h, step)))) / step

    # -- policy pieces -----------------------------------------------------------

    def c_star(self, y, h, branch):
        p = self.p
        y = np.asarray(y, dtype=float)
        phi, ap, _ = self._ap_expo(h)
        if branch == 1:
            return p.lam * h + np.zeros_like(y)  # holds at y = +inf (the floor)
        if branch == 4:
            return h + np.zeros_like(y)
        beta = p.beta1 if branch == 2 else p.beta2
        return -np.log(y / ap) / (beta * ap) + p.alpha * h * (1.0 - phi) / ap

    def mpc_beta(self, branch, h):
        _, ap, _ = self._ap_expo(float(np.real(h)))
        return (self.p.beta1 if branch == 2 else self.p.beta2) * ap

    def floor_value(self, h):
        p = self.p
        _, _, expo = self._ap_expo(h)
        return (1.0 - math.exp(expo * p.beta1 * h)) / (p.gamma * p.beta1)

    # -- residuals ----------------------------------------------------------------

    def _residuals_for_case(self, h: float, case: str) -> ResidualReport:
        p = self.p
        _, ap, expo = self._ap_expo(h)
        yg_raw = ap * math.exp(expo * p.beta1 * h)
        yg = max(1.0, yg_raw) if case == "Case2" else yg_raw
        yp = ap * math.exp(-(1.0 - p.alpha) * p.beta2 * h)
        yu = (1.0 - p.alpha) * math.exp(-(1.0 - p.alpha) * p.beta2 * h)

        def v(y, br):
            return float(self._v_branch(y, h, br, case))

        if case == "Case1":
            pieces = [
                (abs(v(yg, 1) - v(yg, 2)), abs(self._vy_for_case(yg, h, 1, case) - self._vy_for_case(yg, h, 2, case))),
                (abs(v(1.0, 2) - v(1.0, 3)), abs(self._vy_for_case(1.0, h, 2, case) - self._vy_for_case(1.0, h, 3, case))),
                (abs(v(yp, 3) - v(yp, 4)), abs(self._vy_for_case(yp, h, 3, case) - self._vy_for_case(yp, h, 4, case))),
            ]
            scale_pts = [v(yg, 1), v(1.0, 2), v(yp, 3)]
        else:
            pieces = [
                (abs(v(yg, 1) - v(yg, 3)), abs(self._vy_for_case(yg, h, 1, case) - self._vy_for_case(yg, h, 3, case))),
                (0.0, 0.0),
                (abs(v(yp, 3) - v(yp, 4)), abs(self._vy_for_case(yp, h, 3, case) - self._vy_for_case(yp, h, 4, case))),
            ]
            scale_pts = [v(yg, 1), v(yp, 3)]
        step = 1e-20
        vh = abs(float(np.imag(self._v_branch(yu, complex(h, step), 4, case))) / step)
        scale = max(1.0, max(abs(x) for x in scale_pts))
        return ResidualReport(
            h,
            pieces[0][0],
            pieces[0][1],
            pieces[1][0],
            pieces[1][1],
            pieces[2][0],
            pieces[2][1],
            vh,
            scale,
        )

    def _vy_for_case(self, y, h, branch, case):
        p = self.p
        c1, _, c3, c4, c5, c6, c7, c8 = self._coeffs(h, case)
        q1, q2 = self.q1, self.q2
        phi = p.phi.value(h)
        ap = 1.0 - p.alpha * phi
        if branch == 1:
            return c1 * q1 * y ** (q1 - 1.0) - p.lam * h / p.gamma
        if branch == 4:
            return c7 * q1 * y ** (q1 - 1.0) + c8 * q2 * y ** (q2 - 1.0) - h / p.gamma
        beta = p.beta1 if branch == 2 else p.beta2
        ca, cb = (c3, c4) if branch == 2 else (c5, c6)
        return (
            ca * q1 * y ** (q1 - 1.0)
            + cb * q2 * y ** (q2 - 1.0)
            + math.log(y / ap) / (p.gamma * beta * ap)
            - (p.alpha * h / p.gamma) * ((1.0 - phi) / ap)
            + (self.k / (p.gamma**2 * beta)) / ap
        )

    def residual_report(self, h: float) -> ResidualReport:
        return self._residuals_for_case(float(h), self.case_tag(float(h)))


_MODEL_LOCK = threading.Lock()


@lru_cache(maxsize=256)
def _model_cached(params: ModelParams):
    validate(params)
    if params.variant == "GeneralReference":
        return _RefModel(params)
    return _DualModel(params)


def _model(params: ModelParams):
    # lru_cache is safe for concurrent readers; the lock keeps a single
    # logical writer per key so two threads do not build the model twice.
    with _MODEL_LOCK:
        return _model_cached(params)


def dual_constants(params: ModelParams) -> DualConstants:
    """Roots and risk coefficient of the homogeneous dual ODE.

    Raises DegenerateMarket when mu = r (zero risk premium, k = 0).
    """
    return _model(params).constants()


@lru_cache(maxsize=8192)
def _coefficients_cached(params: ModelParams, h: float) -> CoefficientSet:
    return _model(params).coefficient_set(h)


def coefficients(params: ModelParams, constants: DualConstants, h: float) -> CoefficientSet:
    """The eight pasting coefficients at peak level h (memoized per (params, h)).

    The constants argument is accepted for interface symmetry and checked for
    consistency; the coefficient closed forms re-derive everything they need
    from params.  Raises HRangeError for h outside (0, h_max].
    """
    m = _model(params)
    if constants is not None and abs(constants.k - m.k) > 1e-15 * max(1.0, m.k):
        raise DegenerateMarket(
            "constants do not belong to these params (k mismatch); "
            "recompute them with dual_constants(params)"
        )
    return _coefficients_cached(params, float(h))


def smooth_fit_residuals(
    params: ModelParams, constants: DualConstants, coeffs: CoefficientSet
) -> ResidualReport:
    """Value/slope pasting residuals at the three interior dual boundaries.

    Also reports |V~_h| at the peak-updating point.  For the base model this
    vanishes identically; for the general-rate model with r != gamma the
    closed form used for the updating-branch coefficients enforces value and
    slope pasting but leaves a nonzero h-derivative at the updating boundary,
    equal to y_updt * (1/gamma - 1/r); the report carries it honestly rather
    than hiding it.  Residuals are absolute;
    scale holds max(1, |V~|) for relative normalization.
    """
    m = _model(params)
    h = coeffs.h
    if isinstance(m, _RefModel):
        return m.residual_report(h)
    lg, lp, lu = m.log_boundaries(h)
    yg, yp, yu = math.exp(lg), math.exp(lp), math.exp(lu)
    pairs = [(yg, 1, 2), (1.0, 2, 3), (yp, 3, 4)]
    vals = []
    scale_pts = []
    for y, bl, br in pairs:
        vl, vr = m.v(y, h, bl), m.v(y, h, br)
        sl, sr = m.v_y(y, h, bl), m.v_y(y, h, br)
        vals.append((abs(vl - vr), abs(sl - sr)))
        scale_pts.append(abs(vl))
    vh = abs(m.v_h(yu, h, 4))
    scale = max(1.0, max(scale_pts))
    return ResidualReport(
        h,
        vals[0][0],
        vals[0][1],
        vals[1][0],
        vals[1][1],
        vals[2][0],
        vals[2][1],
        vh,
        scale,
    )
