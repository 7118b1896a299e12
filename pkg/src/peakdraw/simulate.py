"""Monte Carlo: primal wealth paths, dual processes, budget identity, y*.

The dual side is exact in law: ln Y has independent Gaussian increments, so
paths are sampled without discretization error, and the budget functional
E int c*(Y_t, H^_t) M_t dt uses the conditional (Brownian-bridge) minimum of
ln Y inside each step so the running infimum driving H^ carries no step-size
bias.  The primal side is an Euler-Maruyama scheme with feedback controls,
reflected upward at the bliss boundary and clamped (and counted) at the
wealth floor.

Determinism: every path owns an RNG seeded by (seed, path_index), and
per-path draws follow a fixed order (all normals, then all uniforms), so
results are bit-identical for a given seed regardless of block size,
thread count, or execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, NumericConfig
from .core_model import ModelParams, Region
from .dual_core import _check_h, _DualModel, _model
from .errors import ConvergenceError, OutOfEffectiveRegion
from .inversion import _BRANCH_REGION, _invert_arrays
from .thresholds import bliss_inverse

__all__ = [
    "SimConfig",
    "PathRecord",
    "DualPathRecord",
    "BudgetEstimate",
    "simulate_primal",
    "simulate_dual",
    "budget_functional",
    "solve_y_star",
]

_BLOCK = 256


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; the seed is mandatory so every run is replayable."""

    seed: int
    t_horizon: float = 300.0
    dt: float = 1.0 / 252.0
    n_paths: int = 10_000
    scheme: str = "EulerMaruyama"

    def __post_init__(self):
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not self.t_horizon >= self.dt:
            raise ValueError(f"t_horizon {self.t_horizon} is shorter than one step dt {self.dt}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be at least 1, got {self.n_paths}")
        if self.scheme != "EulerMaruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}; only EulerMaruyama is implemented")

    def n_steps(self) -> int:
        return max(1, int(math.floor(self.t_horizon / self.dt + 1e-12)))


@dataclass
class PathRecord:
    """One simulated primal path sampled on the step grid.

    region_codes holds the branch index 1..4 per step; regions() maps them to
    labels.  clamp_count is how many steps needed the wealth-floor clamp.
    """

    path_id: int
    times: np.ndarray
    wealth: np.ndarray
    peak: np.ndarray
    consumption: np.ndarray
    investment: np.ndarray
    region_codes: np.ndarray
    clamp_count: int

    def regions(self) -> list[Region]:
        return [_BRANCH_REGION[int(b)] for b in self.region_codes]


@dataclass
class DualPathRecord:
    """One exact dual path: Y, the peak process H^, and the running inf of Y."""

    path_id: int
    times: np.ndarray
    y: np.ndarray
    h_hat: np.ndarray
    y_running_inf: np.ndarray


@dataclass(frozen=True)
class BudgetEstimate:
    """Monte Carlo estimate of E int_0^T c* M dt with its error split.

    std_error is the sampling error of the mean; truncation_bound is the
    deterministic tail bound e^{-rT} h_max / r for the discarded horizon
    (consumption is capped at h_max along every path).
    """

    estimate: float
    std_error: float
    truncation_bound: float
    n_paths: int
    t_horizon: float


def _theta(p: ModelParams) -> float:
    return (p.mu - p.r) / p.sigma


def _path_normals(seed: int, path_index: int, n_steps: int, with_uniforms: bool):
    """Per-path draws in a fixed order: all normals, then all uniforms."""
    gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_index,)))
    z = gen.standard_normal(n_steps)
    u = gen.random(n_steps) if with_uniforms else None
    return z, u


def _block_normals(seed: int, paths: range, n_steps: int, with_uniforms: bool):
    """(n_steps, block) normals and optional uniforms for a block of paths."""
    z = np.empty((n_steps, len(paths)))
    u = np.empty((n_steps, len(paths))) if with_uniforms else None
    for j, pid in enumerate(paths):
        zj, uj = _path_normals(seed, pid, n_steps, with_uniforms)
        z[:, j] = zj
        if with_uniforms:
            u[:, j] = uj
    return z, u


def _dual_log_paths(p: ModelParams, z: np.ndarray, dt: float):
    """ln(Y_t/y) on the grid: X_0 = 0, Gaussian increments, exact in law."""
    theta = _theta(p)
    drift = (p.gamma - p.r - 0.5 * theta * theta) * dt
    vol = theta * math.sqrt(dt)
    incr = drift - vol * z
    x = np.empty((z.shape[0] + 1,) + z.shape[1:])
    x[0] = 0.0
    np.cumsum(incr, axis=0, out=x[1:])
    return x


def _h_hat(p: ModelParams, lny: float, run_min: np.ndarray, h0: float, h_cap: float):
    """H^ = h0 v ln((1-alpha)/inf Y)/((1-alpha) beta2), capped at h_cap."""
    ob = (1.0 - p.alpha) * p.beta2
    raw = (math.log(1.0 - p.alpha) - lny - run_min) / ob
    return np.minimum(np.maximum(raw, h0), h_cap)


def _c_star_closed(p: ModelParams, lny_grid: np.ndarray, h: np.ndarray):
    """Feedback consumption c*(Y, H^) from the branch closed forms only.

    Works on arrays; needs no pasting coefficients, so it is safe for any h
    up to the cap.  Matches the policy-module branch formulas exactly.
    """
    if p.variant == "GeneralReference":
        phi = p.phi.value(h)
        ap = 1.0 - p.alpha * phi
        expo = (p.alpha - p.lam) - (1.0 - p.lam) * p.alpha * phi
        lg = np.maximum(0.0, np.log(ap) + expo * p.beta1 * h)
        lp = np.log(ap) - (1.0 - p.alpha) * p.beta2 * h
        shifted = (lny_grid - np.log(ap)) / ap
        interior_ref = p.alpha * h * (1.0 - phi) / ap
        c2 = -shifted / p.beta1 + interior_ref
        c3 = -shifted / p.beta2 + interior_ref
    else:
        lg = (p.alpha - p.lam) * p.beta1 * h
        lp = -(1.0 - p.alpha) * p.beta2 * h
        c2 = -lny_grid / p.beta1 + p.alpha * h
        c3 = -lny_grid / p.beta2 + p.alpha * h
    return np.where(
        lny_grid >= lg,
        p.lam * h,
        np.where(lny_grid >= 0.0, c2, np.where(lny_grid >= lp, c3, h)),
    )


def simulate_dual(
    params: ModelParams, y: float, h0: float, cfg: SimConfig
) -> list[DualPathRecord]:
    """Exact-in-law paths of (Y, H^) with the stepwise running infimum of Y.

    Y_t = y e^{(gamma-r)t} exp(-theta B_t - theta^2 t/2); at r = gamma it is
    a martingale.  H^ uses the closed form from the running infimum observed
    on the grid.
    """
    p = params
    _model(p)  # validates params
    h0 = _check_h(h0, DEFAULT_CONFIG)
    y = float(y)
    if not (y > 0.0 and math.isfinite(y)):
        raise ValueError(f"dual starting point y must be positive, got {y}")
    n_steps = cfg.n_steps()
    times = np.arange(n_steps + 1) * cfg.dt
    lny = math.log(y)
    out = []
    for start in range(0, cfg.n_paths, _BLOCK):
        paths = range(start, min(start + _BLOCK, cfg.n_paths))
        z, _ = _block_normals(cfg.seed, paths, n_steps, with_uniforms=False)
        x = _dual_log_paths(p, z, cfg.dt)
        run_min = np.minimum.accumulate(x, axis=0)
        h_hat = _h_hat(p, lny, run_min, h0, DEFAULT_CONFIG.h_max)
        for j, pid in enumerate(paths):
            out.append(
                DualPathRecord(
                    path_id=pid,
                    times=times,
                    y=y * np.exp(x[:, j]),
                    h_hat=h_hat[:, j],
                    y_running_inf=y * np.exp(run_min[:, j]),
                )
            )
    return out


def _budget_block(p: ModelParams, lny: float, h0: float, cfg: SimConfig, paths: range):
    """Per-path integral estimates for one block, bridge-exact minima."""
    n_steps = cfg.n_steps()
    dt = cfg.dt
    theta = _theta(p)
    z, u = _block_normals(cfg.seed, paths, n_steps, with_uniforms=True)
    x = _dual_log_paths(p, z, dt)
    # conditional minimum of the Brownian bridge on each step
    dx = x[1:] - x[:-1]
    with np.errstate(invalid="ignore"):
        interior = 0.5 * (
            x[:-1] + x[1:] - np.sqrt(dx * dx - 2.0 * theta * theta * dt * np.log(u))
        )
    run_min = np.empty_like(x)
    run_min[0] = 0.0
    np.minimum.accumulate(interior, axis=0, out=run_min[1:])
    np.minimum(run_min[1:], 0.0, out=run_min[1:])

    h_hat = _h_hat(p, lny, run_min, h0, DEFAULT_CONFIG.h_max)
    c = _c_star_closed(p, lny + x, h_hat)
    m_weight = np.exp(x - p.gamma * (np.arange(n_steps + 1) * dt)[:, None])
    f = c * m_weight
    # trapezoid in time, per path
    return dt * (f.sum(axis=0) - 0.5 * (f[0] + f[-1]))


def budget_functional(
    params: ModelParams,
    y: float,
    h0: float,
    cfg: SimConfig,
    threads: int | None = None,
) -> BudgetEstimate:
    """Monte Carlo E int_0^T c*(Y_t, H^_t) M_t dt from the dual closed forms.

    The same seed reuses the same noise for every y (common random numbers),
    and the log-price paths do not depend on y at all, so estimates at
    different y are perfectly coupled and monotone decreasing in y pathwise.
    The deterministic tail bound e^{-rT} h_max / r is reported separately.
    """
    p = params
    _model(p)
    h0 = _check_h(h0, DEFAULT_CONFIG)
    y = float(y)
    if not (y > 0.0 and math.isfinite(y)):
        raise ValueError(f"dual starting point y must be positive, got {y}")
    lny = math.log(y)
    blocks = [
        range(start, min(start + _BLOCK, cfg.n_paths)) for start in range(0, cfg.n_paths, _BLOCK)
    ]
    if threads is not None and threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _budget_block(p, lny, h0, cfg, b), blocks))
    else:
        parts = [_budget_block(p, lny, h0, cfg, b) for b in blocks]
    total = 0.0
    total_sq = 0.0
    for part in parts:  # fixed block order: reduction independent of threads
        total += float(part.sum())
        total_sq += float(np.square(part).sum())
    n = cfg.n_paths
    mean = total / n
    var = max(0.0, (total_sq - n * mean * mean) / (n - 1)) if n > 1 else 0.0
    se = math.sqrt(var / n)
    trunc = math.exp(-p.r * cfg.n_steps() * cfg.dt) * DEFAULT_CONFIG.h_max / p.r
    return BudgetEstimate(
        estimate=mean,
        std_error=se,
        truncation_bound=trunc,
        n_paths=n,
        t_horizon=cfg.n_steps() * cfg.dt,
    )


def solve_y_star(
    params: ModelParams,
    x0: float,
    h0: float,
    cfg: SimConfig,
    threads: int | None = None,
    numeric: NumericConfig = DEFAULT_CONFIG,
) -> float:
    """Solve E int c* M dt = x0 for the dual starting point y.

    Uses common random numbers (the budget estimate with a fixed seed is a
    deterministic, strictly decreasing function of y), brackets the root by
    geometric expansion inside [1e-8, 1e8], then runs a safeguarded secant
    in ln y.  Stops when the estimate is within 2*SE + truncation bound of
    x0; raises ConvergenceError if no bracket exists in the allowed range.
    """
    m = _model(params)
    h0 = _check_h(h0, numeric)
    x0 = float(x0)
    wb, _, _, _, wu = (float(v) for v in m.threshold_values(h0))
    if not wb <= x0 <= wu:
        raise OutOfEffectiveRegion(
            f"x0 = {x0} is outside the effective region [{wb}, {wu}] at h0 = {h0}"
        )

    cache: dict[float, BudgetEstimate] = {}

    def f(yv: float) -> BudgetEstimate:
        if yv not in cache:
            cache[yv] = budget_functional(params, yv, h0, cfg, threads=threads)
        return cache[yv]

    lo = hi = 1.0
    est = f(1.0)
    if est.estimate > x0:  # root is at larger y
        while f(hi).estimate > x0:
            hi *= 2.0
            if hi > 1e8:
                raise ConvergenceError(
                    f"no bracket for the budget root within y <= 1e8 (x0 = {x0})",
                    best=hi / 2.0,
                    residual=abs(f(hi / 2.0).estimate - x0),
                    iterations=0,
                )
        lo = hi / 2.0
    else:
        while f(lo).estimate < x0:
            lo /= 2.0
            if lo < 1e-8:
                raise ConvergenceError(
                    f"no bracket for the budget root within y >= 1e-8 (x0 = {x0})",
                    best=lo * 2.0,
                    residual=abs(f(lo * 2.0).estimate - x0),
                    iterations=0,
                )
        hi = lo * 2.0

    # f(lo) >= x0 >= f(hi); secant proposal in ln y, bisection fallback
    a, b = math.log(lo), math.log(hi)
    fa = f(lo).estimate - x0
    fb = f(hi).estimate - x0
    best_y, best_res = (lo, abs(fa)) if abs(fa) < abs(fb) else (hi, abs(fb))
    for it in range(60):
        if fa != fb:
            mid = a - fa * (b - a) / (fb - fa)
            if not a < mid < b:
                mid = 0.5 * (a + b)
        else:
            mid = 0.5 * (a + b)
        ym = math.exp(mid)
        em = f(ym)
        res = em.estimate - x0
        if abs(res) < best_res:
            best_y, best_res = ym, abs(res)
        if abs(res) <= 2.0 * em.std_error + em.truncation_bound:
            return ym
        if res > 0.0:
            a, fa = mid, res
        else:
            b, fb = mid, res
        if b - a < 1e-13:
            break
    raise ConvergenceError(
        "budget root-find exhausted its iterations without meeting the "
        f"2*SE + truncation tolerance at x0 = {x0}",
        best=best_y,
        residual=best_res,
        iterations=it + 1,
    )


def _controls(m, p: ModelParams, x: np.ndarray, h: np.ndarray, numeric: NumericConfig):
    """Vectorized (c*, pi*, branch) across paths at per-path states."""
    y, branch = _invert_arrays(m, x, h, numeric)
    merton = (p.mu - p.r) / p.sigma**2
    c = np.empty(x.shape)
    pi = np.empty(x.shape)
    for br in (1, 2, 3, 4):
        idx = np.nonzero(branch == br)[0]
        if idx.size == 0:
            continue
        c[idx] = m.c_star(y[idx], h[idx], br)
        pi[idx] = merton * np.asarray(m.y_v_yy(y[idx], h[idx], br), dtype=float)
    np.clip(c, p.lam * h, h, out=c)
    return c, pi, branch


def simulate_primal(
    params: ModelParams,
    x0: float,
    h0: float,
    cfg: SimConfig,
    numeric: NumericConfig = DEFAULT_CONFIG,
) -> list[PathRecord]:
    """Euler-Maruyama wealth paths under the optimal feedback controls.

    dX = [rX + pi*(mu-r) - c*] dt + pi* sigma dB.  After each step the peak
    is pushed up to bliss_inverse(X) whenever X crosses the bliss boundary
    (the singular update of the consumption peak), and X is clamped onto the
    wealth floor with the event counted when discretization error pushes it
    below.  If x0 is already above the bliss boundary the peak jumps at t=0.
    """
    p = params
    m = _model(p)
    h0 = _check_h(h0, numeric)
    x0 = float(x0)
    constants = m.constants()
    wb0, _, _, _, wu0 = (float(v) for v in m.threshold_values(h0))
    if x0 < wb0:
        raise OutOfEffectiveRegion(
            f"x0 = {x0} is below the wealth floor w_bkrp({h0}) = {wb0}"
        )
    h_start = h0
    if x0 > wu0:
        h_start = bliss_inverse(p, constants, x0, numeric)

    n_steps = cfg.n_steps()
    dt = cfg.dt
    sq = math.sqrt(dt)
    times = np.arange(n_steps + 1) * dt
    n = cfg.n_paths

    wealth = np.empty((n_steps + 1, n))
    peak = np.empty((n_steps + 1, n))
    cons = np.empty((n_steps + 1, n))
    inv = np.empty((n_steps + 1, n))
    regions = np.empty((n_steps + 1, n), dtype=np.int8)
    clamps = np.zeros(n, dtype=np.int64)

    x = np.full(n, x0)
    h = np.full(n, h_start)
    wealth[0] = x
    peak[0] = h

    # per-path noise, stacked to (n_steps, n) in path order
    z = np.empty((n_steps, n))
    for pid in range(n):
        z[:, pid], _ = _path_normals(cfg.seed, pid, n_steps, with_uniforms=False)

    for i in range(n_steps):
        c, pi, br = _controls(m, p, x, h, numeric)
        cons[i] = c
        inv[i] = pi
        regions[i] = br
        x = x + (p.r * x + pi * (p.mu - p.r) - c) * dt + pi * p.sigma * sq * z[i]
        # bliss reflection: wealth above the updating boundary moves the peak
        wu = np.asarray(m.threshold_values(h)[4], dtype=float)
        above = x > wu
        if np.any(above):
            for j in np.nonzero(above)[0]:
                h[j] = bliss_inverse(p, constants, float(x[j]), numeric)
        # floor clamp: discretization may undershoot the floor; record it
        wb = np.asarray(m.threshold_values(h)[0], dtype=float)
        below = x < wb
        if np.any(below):
            x = np.where(below, wb, x)
            clamps += below
        wealth[i + 1] = x
        peak[i + 1] = h
    c, pi, br = _controls(m, p, x, h, numeric)
    cons[-1] = c
    inv[-1] = pi
    regions[-1] = br

    return [
        PathRecord(
            path_id=pid,
            times=times,
            wealth=wealth[:, pid].copy(),
            peak=peak[:, pid].copy(),
            consumption=cons[:, pid].copy(),
            investment=inv[:, pid].copy(),
            region_codes=regions[:, pid].copy(),
            clamp_count=int(clamps[pid]),
        )
        for pid in range(n)
    ]
