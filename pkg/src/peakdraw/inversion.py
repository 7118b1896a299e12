"""Dual-transform inversion y = f(x, h) and dual value evaluation.

The dual value V~(., h) is strictly convex on the dual effective region, so
x = -V~_y(y, h) is strictly decreasing in y and inverts uniquely.  The branch
is picked by comparing x against the threshold set; the floor branch inverts
in closed form (single power term), the other three by bracketed bisection on
ln y.  The primal value is V(x, h) = V~(f(x,h), h) + x f(x,h), regrouped on
the floor branch where the two linear parts nearly cancel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, NumericConfig
from .core_model import ModelParams, Region
from .dual_core import CoefficientSet, _DualModel, _model
from .errors import ConvergenceError, OutOfDualRegion, OutOfEffectiveRegion

__all__ = ["DualPoint", "DualValue", "dual_value", "invert", "primal_value"]

_BRANCH_REGION = {
    1: Region.GLOOM,
    2: Region.DEPRESSION,
    3: Region.RECOVERY,
    4: Region.SATISFACTORY,
}


@dataclass(frozen=True)
class DualPoint:
    """Inversion result: dual variable, region label, and branch tag F1..F4.

    y is +inf exactly at the wealth floor x = w_bkrp (the floor is the
    y -> infinity limit of the floor branch).
    """

    y: float
    region: Region
    f_branch: str


@dataclass(frozen=True)
class DualValue:
    """V~ and its first two y-derivatives and its h-derivative at one point."""

    v_tilde: float
    v_tilde_y: float
    v_tilde_yy: float
    v_tilde_h: float


def dual_value(params: ModelParams, coeffs: CoefficientSet, y: float, h: float) -> DualValue:
    """V~ and derivatives at (y, h), choosing the branch from y's interval.

    At interior boundaries the one-sided values agree by smooth fit; the
    higher-y branch is used.  Raises OutOfDualRegion below the updating
    boundary y_updt, with a 1e-12 relative forgiveness for rounding.
    """
    m = _model(params)
    y = float(y)
    h = float(h)
    if not (y > 0.0 and math.isfinite(y)):
        raise OutOfDualRegion(f"dual variable y must be positive and finite, got {y}")
    lg, lp, lu = (float(b) for b in m.log_boundaries(h))
    lny = math.log(y)
    if lny >= lg:
        branch = 1
    elif lny >= 0.0:
        branch = 2
    elif lny >= lp:
        branch = 3
    elif lny >= lu + math.log1p(-1e-12):
        branch = 4
    else:
        raise OutOfDualRegion(
            f"y = {y} lies below the dual effective region at h = {h} "
            f"(lower boundary y_updt = {math.exp(lu)})"
        )
    return DualValue(
        v_tilde=float(m.v(y, h, branch)),
        v_tilde_y=float(m.v_y(y, h, branch)),
        v_tilde_yy=float(m.v_yy(y, h, branch)),
        v_tilde_h=float(m.v_h(y, h, branch)),
    )


def _expsum_log_value(es, h):
    """(log|sum|, sign) of an exp-sum at h, overflow-safe; h scalar or array."""
    h_arr = np.asarray(h, dtype=float)
    if es.signs.size == 0:
        zero = np.zeros(h_arr.shape)
        if h_arr.shape == ():
            return -math.inf, 0.0
        return zero - math.inf, zero
    exps = es.logamps.reshape((-1,) + (1,) * h_arr.ndim) + es.rates.reshape(
        (-1,) + (1,) * h_arr.ndim
    ) * h_arr[None, ...]
    top = exps.max(axis=0)
    s = (es.signs.reshape((-1,) + (1,) * h_arr.ndim) * np.exp(exps - top)).sum(axis=0)
    log_abs = top + np.log(np.abs(s))
    if h_arr.shape == ():
        return float(log_abs), float(np.sign(s))
    return log_abs, np.sign(s)


def _log_c1(m, h):
    """ln C1(h); C1 > 0 whenever the model is valid (dual convexity)."""
    if isinstance(m, _DualModel):
        log_abs, _ = _expsum_log_value(m.csums[1], h)
        return log_abs
    if np.ndim(h) == 0:
        hh = float(h)
        return math.log(float(np.real(m._coeffs(hh, m.case_tag(hh))[0])))
    return np.array([_log_c1(m, float(hh)) for hh in np.ravel(h)]).reshape(np.shape(h))


def _floor_value(m, h):
    """V at the wealth floor; array-friendly for any model."""
    if isinstance(m, _DualModel) or np.ndim(h) == 0:
        return m.floor_value(h)
    return np.array([m.floor_value(float(hh)) for hh in np.ravel(h)]).reshape(np.shape(h))


def _bisect_branch(m, branch, x, h, lny_lo, lny_hi, cfg: NumericConfig):
    """Bisection for -V~_y(e^lny, h) = x on [lny_lo, lny_hi], vectorized.

    -V~_y is strictly decreasing in y, so the sign of (-V~_y - x) at the
    midpoint decides the half.  x and the bounds are 1-d arrays; h is a
    scalar or a matching 1-d array.
    """
    lo = np.array(lny_lo, dtype=float, copy=True)
    hi = np.array(lny_hi, dtype=float, copy=True)
    for _ in range(cfg.max_iter):
        mid = 0.5 * (lo + hi)
        g = -np.asarray(m.v_y(np.exp(mid), h, branch), dtype=float) - x
        take_lo = g >= 0.0
        lo = np.where(take_lo, mid, lo)
        hi = np.where(take_lo, hi, mid)
        if np.all(hi - lo < cfg.y_tol):
            break
    return 0.5 * (lo + hi)


def _invert_arrays(m, x, h, cfg: NumericConfig, thr=None):
    """Vectorized inversion core.  Returns (y, branch) shaped like x (x) h.

    h is a scalar or an array broadcastable with x.  y is +inf exactly at the
    floor x = w_bkrp.  Raises OutOfEffectiveRegion when any point leaves
    [w_bkrp, w_updt] (beyond rounding forgiveness above w_updt).  thr, when
    given, supplies the five threshold values used to pick branches.
    """
    x_in = np.asarray(x, dtype=float)
    h_in = np.asarray(h, dtype=float)
    shape = np.broadcast_shapes(x_in.shape, h_in.shape)

    if not isinstance(m, _DualModel) and h_in.size > 1:
        # general-reference with per-point h: the pasting case is decided per
        # h, so fall back to an elementwise loop (only small simulation runs
        # take this path)
        x_b = np.broadcast_to(x_in, shape)
        h_b = np.broadcast_to(h_in, shape)
        y = np.empty(shape)
        br = np.empty(shape, dtype=np.int8)
        for i in np.ndindex(shape):
            yi, bi = _invert_arrays(m, x_b[i], h_b[i], cfg)
            y[i] = yi.reshape(())[()]
            br[i] = bi.reshape(())[()]
        return y, br

    # 1-d working copies; h collapses to a scalar float for the
    # general-reference model (guaranteed single h here)
    x1 = np.ascontiguousarray(np.broadcast_to(x_in, shape).reshape(-1), dtype=float)
    if isinstance(m, _DualModel) and h_in.ndim > 0:
        h1 = np.ascontiguousarray(np.broadcast_to(h_in, shape).reshape(-1), dtype=float)
    else:
        h1 = float(h_in.reshape(-1)[0]) if h_in.size else float("nan")

    if thr is not None:
        wb, wl, wr, wp, wu = (np.asarray(v, dtype=float) for v in thr)
    else:
        wb, wl, wr, wp, wu = (np.asarray(v, dtype=float) for v in m.threshold_values(h1))
    wb_b = np.broadcast_to(wb, x1.shape)
    wu_b = np.broadcast_to(wu, x1.shape)
    forgive = cfg.abs_tol + cfg.rel_tol * np.maximum(1.0, np.abs(wu_b))
    if np.any(x1 < wb_b) or np.any(x1 > wu_b + forgive):
        lo_bad = x1[x1 < wb_b]
        hi_bad = x1[x1 > wu_b + forgive]
        raise OutOfEffectiveRegion(
            "wealth outside the effective region [w_bkrp(h), w_updt(h)]: "
            f"below floor {lo_bad[:5].tolist()}, "
            f"above updating boundary {hi_bad[:5].tolist()}"
        )
    x1 = np.minimum(x1, wu_b)

    branch = np.full(x1.shape, 4, dtype=np.int8)
    branch[x1 <= np.broadcast_to(wp, x1.shape)] = 3
    branch[x1 <= np.broadcast_to(wr, x1.shape)] = 2
    branch[x1 <= np.broadcast_to(wl, x1.shape)] = 1

    lg, lp, lu = m.log_boundaries(h1)
    lg = np.broadcast_to(np.asarray(lg, dtype=float), x1.shape)
    lp = np.broadcast_to(np.asarray(lp, dtype=float), x1.shape)
    lu = np.broadcast_to(np.asarray(lu, dtype=float), x1.shape)
    zero = np.zeros(x1.shape)
    lny = np.zeros(x1.shape)

    mask1 = branch == 1
    if np.any(mask1):
        logc1 = np.broadcast_to(np.asarray(_log_c1(m, h1), dtype=float), x1.shape)
        with np.errstate(divide="ignore"):  # x == w_bkrp: log(0) -> y = +inf
            lnum = np.log(x1 - wb_b)
        # x - w_bkrp = -q1 C1 y^(q1-1); q1 - 1 < 0, so the floor maps to +inf
        lny = np.where(mask1, (lnum - math.log(-m.q1) - logc1) / (m.q1 - 1.0), lny)

    bounds = {2: (zero, lg), 3: (lp, zero), 4: (lu, lp)}
    for br in (2, 3, 4):
        idx = np.nonzero(branch == br)[0]
        if idx.size == 0:
            continue
        lo_b, hi_b = bounds[br]
        h_sub = h1[idx] if isinstance(h1, np.ndarray) else h1
        lny[idx] = _bisect_branch(m, br, x1[idx], h_sub, lo_b[idx], hi_b[idx], cfg)

    y = np.exp(lny)
    # exact threshold hits return the closed-side endpoint deterministically
    y = np.where(x1 == np.broadcast_to(wl, x1.shape), np.exp(lg), y)
    y = np.where(x1 == np.broadcast_to(wr, x1.shape), 1.0, y)
    y = np.where(x1 == np.broadcast_to(wp, x1.shape), np.exp(lp), y)
    y = np.where(x1 == wu_b, np.exp(lu), y)
    return y.reshape(shape), branch.reshape(shape)


def invert(
    params: ModelParams,
    coeffs: CoefficientSet,
    x: float,
    h: float,
    thresholds=None,
    cfg: NumericConfig = DEFAULT_CONFIG,
) -> DualPoint:
    """Solve x = -V~_y(y, h) for y, picking the branch from the thresholds.

    Exact threshold values return the closed-side endpoint (w_low -> y_gloom,
    w_ref -> 1, w_peak -> y_peak, w_updt -> y_updt, w_bkrp -> +inf).  The
    final residual |x + V~_y(y, h)| must meet abs_tol + rel_tol*|x| or a
    ConvergenceError carrying the best iterate is raised.  x outside
    [w_bkrp, w_updt] raises OutOfEffectiveRegion.
    """
    m = _model(params)
    x = float(x)
    h = float(h)
    thr = thresholds.as_tuple() if thresholds is not None else None
    y_arr, br_arr = _invert_arrays(m, np.asarray(x), np.asarray(h), cfg, thr=thr)
    y = float(y_arr.reshape(())[()])
    branch = int(br_arr.reshape(())[()])
    point = DualPoint(y=y, region=_BRANCH_REGION[branch], f_branch=f"F{branch}")
    if math.isinf(y):
        return point
    residual = abs(x + float(m.v_y(y, h, branch)))
    tol = cfg.abs_tol + cfg.rel_tol * abs(x)
    if residual > tol:
        raise ConvergenceError(
            f"inversion residual {residual:.3e} exceeds tolerance {tol:.3e} "
            f"at (x={x}, h={h})",
            best=y,
            residual=residual,
            iterations=cfg.max_iter,
        )
    return point


def primal_value(
    params: ModelParams,
    coeffs: CoefficientSet,
    x: float,
    h: float,
    thresholds=None,
    cfg: NumericConfig = DEFAULT_CONFIG,
) -> float:
    """V(x, h) = V~(f(x,h), h) + x f(x,h), stable down to the wealth floor.

    On the floor branch the linear parts of V~ and x*y nearly cancel for
    large y; the regrouped form C1 y^q1 + (x - w_bkrp) y + V_floor(h) avoids
    the cancellation and covers x = w_bkrp (y infinite) exactly.
    """
    m = _model(params)
    x = float(x)
    h = float(h)
    thr = thresholds.as_tuple() if thresholds is not None else None
    y_arr, br_arr = _invert_arrays(m, np.asarray(x), np.asarray(h), cfg, thr=thr)
    y = float(y_arr.reshape(())[()])
    branch = int(br_arr.reshape(())[()])
    return float(np.asarray(_primal_from_dual(m, x, h, y, branch)).reshape(())[()])


def _primal_from_dual(m, x, h, y, branch):
    """Primal value from inverted points; scalars or same-shape 1-d arrays."""
    if np.ndim(branch) == 0:
        if branch == 1:
            return _floor_branch_value(m, x, h, y)
        return m.v(y, h, branch) + x * y
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h_b = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    out = np.empty(x.shape)
    for br in (1, 2, 3, 4):
        idx = np.nonzero(np.asarray(branch) == br)[0]
        if idx.size == 0:
            continue
        h_sub = h_b[idx] if np.ndim(h) > 0 else float(h)
        if br == 1:
            out[idx] = _floor_branch_value(m, x[idx], h_sub, y[idx])
        else:
            out[idx] = m.v(y[idx], h_sub, br) + x[idx] * y[idx]
    return out


def _floor_branch_value(m, x, h, y):
    """Regrouped floor-branch value C1 y^q1 + (x - w_bkrp) y + V_floor(h)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    wb = np.asarray(m.threshold_values(h)[0], dtype=float)
    inf = np.isinf(y)
    y_safe = np.where(inf, 1.0, y)
    if isinstance(m, _DualModel):
        homo = m.csums[1].shifted(h, m.q1 * np.log(y_safe))
    else:
        if np.ndim(h) == 0:
            c1 = float(np.real(m._coeffs(float(h), m.case_tag(float(h)))[0]))
        else:
            c1 = np.array(
                [float(np.real(m._coeffs(float(hh), m.case_tag(float(hh)))[0])) for hh in h]
            )
        homo = c1 * y_safe**m.q1
    value = np.where(inf, 0.0, homo) + np.where(inf, 0.0, (x - wb) * y_safe) + _floor_value(m, h)
    out = np.asarray(value)
    return float(out.reshape(())[()]) if out.shape == () else value
