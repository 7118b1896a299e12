"""Feedback policy: consumption, risky investment, MPC, implied risk aversion.

Everything here is read off the dual solution at y = f(x, h): consumption
from the branch first-order conditions, the risky amount from
pi* = (mu - r)/sigma^2 * y V~_yy, the marginal propensity to consume from
1/(beta_eff * y * V~_yy) on the interior branches, and the implied relative
risk aversion as the Merton inverse of the investment proportion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, NumericConfig
from .core_model import ModelParams, Region
from .dual_core import _check_h, _DualModel, _model
from .errors import OutOfEffectiveRegion
from .inversion import _BRANCH_REGION, _expsum_log_value, _invert_arrays, _primal_from_dual

__all__ = [
    "PolicyEvaluation",
    "ProportionProfile",
    "evaluate_policy",
    "mpc_jump_ratio",
    "mpc_turning_point",
    "proportion_profile",
]


@dataclass(frozen=True)
class PolicyEvaluation:
    """Optimal feedback controls and diagnostics at one effective state.

    c_star is a rate (currency/year), pi_star an amount (currency), pi_prop
    the investment proportion pi_star/x, mpc the wealth-derivative of c_star,
    and irra = (mu-r)/(sigma^2 * pi_prop) the implied relative risk aversion
    (inf where the investment proportion vanishes, i.e. at the wealth floor).
    """

    region: Region
    y: float
    c_star: float
    pi_star: float
    pi_prop: float
    value: float
    mpc: float
    irra: float


@dataclass(frozen=True)
class ProportionProfile:
    """pi*/x sampled on a wealth grid at fixed h, with its argmax."""

    h: float
    x: np.ndarray
    pi_prop: np.ndarray
    argmax_x: float
    argmax_pi_prop: float


def _policy_arrays(params: ModelParams, x, h, cfg: NumericConfig = DEFAULT_CONFIG):
    """Vectorized policy evaluation; returns a dict of arrays shaped like x.

    h is a scalar or an array broadcastable with x.  The full set of columns
    matches PolicyEvaluation, with regions as an int8 array of branch codes
    (1..4, mapped to labels by the caller).
    """
    p = params
    m = _model(p)
    x_in = np.asarray(x, dtype=float)
    h_in = np.asarray(h, dtype=float)
    shape = np.broadcast_shapes(x_in.shape, h_in.shape)
    if not isinstance(m, _DualModel) and h_in.size > 1:
        # general-reference with per-point h: elementwise (case per h)
        x_bb = np.broadcast_to(x_in, shape)
        h_bb = np.broadcast_to(h_in, shape)
        evals = [
            _policy_arrays(params, float(xx), float(hh), cfg)
            for xx, hh in zip(x_bb.ravel(), h_bb.ravel())
        ]
        return {
            key: np.array(
                [e[key].reshape(())[()] for e in evals],
                dtype=np.int8 if key == "branch" else float,
            ).reshape(shape)
            for key in evals[0]
        }
    x_b = np.ascontiguousarray(np.broadcast_to(x_in, shape).reshape(-1), dtype=float)
    h_b = np.ascontiguousarray(np.broadcast_to(h_in, shape).reshape(-1), dtype=float)
    h_eval = h_b if h_in.ndim > 0 else float(h_in)

    y, branch = _invert_arrays(m, x_b, h_b if h_in.ndim > 0 else h_in, cfg)
    y = y.reshape(-1)
    branch = branch.reshape(-1)

    merton = (p.mu - p.r) / p.sigma**2
    c = np.empty(x_b.shape)
    yv = np.empty(x_b.shape)
    mpc = np.zeros(x_b.shape)
    lamh = p.lam * h_b
    for br in (1, 2, 3, 4):
        idx = np.nonzero(branch == br)[0]
        if idx.size == 0:
            continue
        h_sub = h_b[idx] if np.ndim(h_eval) > 0 else h_eval
        c[idx] = m.c_star(y[idx], h_sub, br)
        yv[idx] = m.y_v_yy(y[idx], h_sub, br)
        if br in (2, 3):
            mpc[idx] = 1.0 / (m.mpc_beta(br, h_sub) * yv[idx])
    np.clip(c, lamh, h_b, out=c)
    value = np.asarray(_primal_from_dual(m, x_b, h_eval, y, branch), dtype=float)

    # at the bliss boundary x = w_updt(h) wealth increments move the peak, so
    # the consumption derivative is the bliss-inverse slope 1/w_updt'(h)
    wu = np.broadcast_to(np.asarray(m.threshold_values(h_eval)[4], dtype=float), x_b.shape)
    bliss = x_b >= wu
    if np.any(bliss):
        if isinstance(m, _DualModel):
            d1 = np.broadcast_to(np.asarray(m.w_updt_d1(h_eval), dtype=float), x_b.shape)
            mpc[bliss] = 1.0 / d1[bliss]
        else:
            mpc[bliss] = 1.0 / m.w_updt_d1(float(h_eval))

    pi = merton * yv
    with np.errstate(divide="ignore", invalid="ignore"):
        prop = np.where(x_b > 0.0, pi / x_b, 0.0)
        irra = np.where(prop > 0.0, merton / prop, math.inf)
    return {
        "branch": branch.reshape(shape),
        "y": y.reshape(shape),
        "c_star": c.reshape(shape),
        "pi_star": pi.reshape(shape),
        "pi_prop": prop.reshape(shape),
        "value": value.reshape(shape),
        "mpc": mpc.reshape(shape),
        "irra": irra.reshape(shape),
    }


def evaluate_policy(
    params: ModelParams, x: float, h: float, cfg: NumericConfig = DEFAULT_CONFIG
) -> PolicyEvaluation:
    """Optimal feedback controls at wealth x and peak h.

    Inverts the dual transform and applies the branch closed forms.  mpc is 0
    on the floor and peak-consumption interiors, 1/(beta_eff y V~_yy) on the
    two interior branches, and the bliss-inverse slope 1/w_updt'(h) exactly
    on the bliss boundary x = w_updt(h).  Raises OutOfEffectiveRegion outside
    [w_bkrp(h), w_updt(h)].
    """
    h = _check_h(h, cfg)
    out = _policy_arrays(params, float(x), h, cfg)
    branch = int(out["branch"].reshape(())[()])
    return PolicyEvaluation(
        region=_BRANCH_REGION[branch],
        y=float(out["y"].reshape(())[()]),
        c_star=float(out["c_star"].reshape(())[()]),
        pi_star=float(out["pi_star"].reshape(())[()]),
        pi_prop=float(out["pi_prop"].reshape(())[()]),
        value=float(out["value"].reshape(())[()]),
        mpc=float(out["mpc"].reshape(())[()]),
        irra=float(out["irra"].reshape(())[()]),
    )


def mpc_jump_ratio(params: ModelParams, h: float, cfg: NumericConfig = DEFAULT_CONFIG) -> float:
    """One-sided MPC ratio across w_ref(h): mpc(above w_ref) / mpc(below).

    Both sides are evaluated from the closed forms at the reference point
    y = 1.  With a constant reference weight (Base and GeneralRate) y V~_yy
    pastes continuously there and the ratio reduces to beta1/beta2 exactly;
    with a state-dependent reference weight phi > 0 the dual utility itself
    jumps at y = 1, y V~_yy inherits a jump, and the computed ratio deviates
    slightly from beta1/beta2.  When the below-reference interval is empty
    (general-reference Case 2) the below-side MPC is 0 and the ratio is +inf.
    """
    h = _check_h(h, cfg)
    m = _model(params)
    if not isinstance(m, _DualModel) and m.case_tag(h) == "Case2":
        return math.inf
    below = 1.0 / (m.mpc_beta(2, h) * float(m.y_v_yy(1.0, h, 2)))
    above = 1.0 / (m.mpc_beta(3, h) * float(m.y_v_yy(1.0, h, 3)))
    return above / below


def mpc_turning_point(
    params: ModelParams, h: float, cfg: NumericConfig = DEFAULT_CONFIG
) -> float | None:
    """Wealth x_bar(h) where the MPC switches from decreasing to increasing.

    Base variant only (the closed form uses the equal-rate root identity
    q1(q1-1) = q2(q2-1) = gamma/k).  Returns None when the sign condition
    C5(q1-1) y_peak^{q1-2} + C6(q2-1) y_peak^{q2-2} > 0 fails.  Otherwise the
    critical point of y V~_yy sits in the below-reference branch when its
    slope at y=1 is positive, else in the above-reference branch:

        y_bar = (-C_a (q1-1) / (C_b (q2-1)))^{1/(q2-q1)},  x_bar = -V~_y(y_bar, h).
    """
    if params.variant != "Base":
        raise ValueError(
            "mpc_turning_point uses the equal-rate closed form and is defined "
            "for the Base variant only"
        )
    h = _check_h(h, cfg)
    m = _model(params)
    q1, q2 = m.q1, m.q2
    _, lp, _ = m.log_boundaries(h)
    lp = float(lp)
    lp_rate = -(1.0 - params.alpha) * params.beta2  # d(ln y_peak)/dh

    # sign of d(y V~_yy)/dy at y_peak on the above-reference branch, as an
    # exp-sum so huge h cannot overflow
    cond_sum = m.csums[5].scaled(q1 - 1.0).rate_shifted((q1 - 2.0) * lp_rate) + m.csums[
        6
    ].scaled(q2 - 1.0).rate_shifted((q2 - 2.0) * lp_rate)
    _, cond_sign = _expsum_log_value(cond_sum, h)
    if not cond_sign > 0.0:
        return None

    # slope of y V~_yy at the reference point decides the side
    s_ref = m.csums[3].scaled(q1 - 1.0) + m.csums[4].scaled(q2 - 1.0)
    _, side = _expsum_log_value(s_ref, h)
    if side > 0.0:
        ca, cb, branch = m.csums[3], m.csums[4], 2
    else:
        ca, cb, branch = m.csums[5], m.csums[6], 3
    la, sa = _expsum_log_value(ca.scaled(q1 - 1.0), h)
    lb, sb = _expsum_log_value(cb.scaled(q2 - 1.0), h)
    # y_bar^(q2-q1) = -(C_a (q1-1)) / (C_b (q2-1)); signs are opposite here
    lny = (la - lb) / (q2 - q1)
    if sa * sb >= 0.0:
        return None
    x_bar = -float(m.v_y(math.exp(lny), h, branch))
    return x_bar


def proportion_profile(
    params: ModelParams, h: float, n: int, cfg: NumericConfig = DEFAULT_CONFIG
) -> ProportionProfile:
    """pi*/x on n wealth points spanning (w_bkrp(h), w_updt(h)], with argmax.

    The grid starts at w_bkrp + 1e-8*max(1, w_bkrp) because the proportion
    divides by x and the floor itself has pi* = 0.
    """
    if n < 3:
        raise ValueError(f"proportion grid needs n >= 3 points, got {n}")
    h = _check_h(h, cfg)
    m = _model(params)
    wb, _, _, _, wu = (float(v) for v in m.threshold_values(h))
    eps = cfg.floor_eps * max(1.0, wb)
    if wb + eps >= wu:
        raise OutOfEffectiveRegion(
            f"effective region at h = {h} is too narrow for a profile grid"
        )
    xs = np.linspace(wb + eps, wu, int(n))
    out = _policy_arrays(params, xs, h, cfg)
    prop = out["pi_prop"]
    i = int(np.argmax(prop))
    return ProportionProfile(
        h=h,
        x=xs,
        pi_prop=prop,
        argmax_x=float(xs[i]),
        argmax_pi_prop=float(prop[i]),
    )
