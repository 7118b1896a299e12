"""Domain types, parameter validation and wealth-region classification.

The model describes an agent who consumes at rate c, invests pi in a risky
asset, and is constrained to keep consumption above a fraction ``lambda`` of
the historical consumption peak h. Absolute risk aversion switches from
``beta1`` to ``beta2`` when consumption crosses the reference level
``alpha * h``. Three variants are supported:

* ``Base``        equal discount and interest rate (r = gamma), reference alpha*h.
* ``GeneralRate`` r != gamma permitted, reference alpha*h.
* ``GeneralReference`` r = gamma, reference alpha*(phi(h)*c + (1-phi(h))*h)
  with a state-dependent weight phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Mapping

from .errors import ParamDomainError

VARIANTS = ("Base", "GeneralRate", "GeneralReference")
PHI_KINDS = ("Zero", "Fractional")


class Region(str, Enum):
    """Wealth regions of the (x, h) half-plane, ordered by wealth."""

    BANKRUPT = "Bankrupt"
    GLOOM = "Gloom"
    DEPRESSION = "Depression"
    RECOVERY = "Recovery"
    SATISFACTORY = "Satisfactory"
    ABOVE_BLISS = "AboveBliss"


#: Region order used for compact integer coding in simulation records.
REGION_ORDER: tuple[Region, ...] = (
    Region.BANKRUPT,
    Region.GLOOM,
    Region.DEPRESSION,
    Region.RECOVERY,
    Region.SATISFACTORY,
    Region.ABOVE_BLISS,
)


@dataclass(frozen=True)
class PhiSpec:
    """Specification of the reference-weight function phi(h).

    kind ``"Zero"`` encodes phi identically zero (reduces the general
    reference model to the base model). kind ``"Fractional"`` encodes

        phi(h) = phi_bar * h / (h + h_hat),

    which is non-decreasing, valued in [0, phi_bar), and satisfies
    phi'(h) h + phi(h) <= phi_bar <= 1 automatically. The admissibility bound
    phi(inf) < (alpha - lambda) / (alpha (1 - lambda)) is checked against
    phi_bar in :func:`validate`.
    """

    kind: str
    phi_bar: float | None = None
    h_hat: float | None = None

    def value(self, h):
        """phi(h); accepts scalars or numpy arrays."""
        if self.kind == "Zero":
            return 0.0 * h
        return self.phi_bar * h / (h + self.h_hat)

    def derivative(self, h):
        """phi'(h); accepts scalars or numpy arrays."""
        if self.kind == "Zero":
            return 0.0 * h
        return self.phi_bar * self.h_hat / (h + self.h_hat) ** 2

    def limit_at_infinity(self) -> float:
        return 0.0 if self.kind == "Zero" else float(self.phi_bar)


@dataclass(frozen=True)
class ModelParams:
    """Market and preference parameters.

    Attributes
    ----------
    r : float
        Risk-free rate (per year, > 0).
    mu : float
        Risky drift (per year, >= r).
    sigma : float
        Risky volatility (per year^0.5, > 0).
    gamma : float
        Discount rate (per year, > 0).
    lam : float
        Drawdown fraction; consumption must stay above lam * h. Serialized
        under the JSON key ``"lambda"``.
    alpha : float
        Reference fraction in (0, 1). lam <= alpha is required; lam = alpha
        is accepted as a degenerate endpoint at which the depression region
        is empty (W_low = W_ref).
    beta1, beta2 : float
        Absolute risk aversion below and above the reference (> 0).
    variant : str
        One of ``"Base"``, ``"GeneralRate"``, ``"GeneralReference"``.
    phi : PhiSpec or None
        Reference-weight specification; required for GeneralReference and
        disallowed otherwise.
    """

    r: float
    mu: float
    sigma: float
    gamma: float
    lam: float
    alpha: float
    beta1: float
    beta2: float
    variant: str = "Base"
    phi: PhiSpec | None = None

    def with_(self, **kwargs) -> "ModelParams":
        """Copy with selected fields replaced (no validation)."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class StatePoint:
    """A wealth-peak state (x, h); h must be positive."""

    x: float
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"peak h must be positive, got {self.h}")


def _check_finite(name: str, value: Any, violations: list[str]) -> bool:
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        violations.append(f"{name} must be a finite number, got {value!r}")
        return False
    return True


def validate(params: ModelParams) -> ModelParams:
    """Check every parameter invariant and return the validated instance.

    All violations are collected and reported together in a single
    :class:`ParamDomainError` rather than stopping at the first.

    Notes
    -----
    mu = r is accepted here; it is rejected later as
    :class:`~peakdraw.errors.DegenerateMarket` when dual constants are
    requested, because every dual closed form divides by
    k = (r - mu)^2 / (2 sigma^2). lam = 0 (no drawdown) is accepted and makes
    the gloom region start at zero wealth.
    """
    v: list[str] = []
    numeric_ok = all(
        _check_finite(name, getattr(params, name), v)
        for name in ("r", "mu", "sigma", "gamma", "lam", "alpha", "beta1", "beta2")
    )
    if not numeric_ok:
        raise ParamDomainError(v)

    if not params.r > 0:
        v.append(f"r must be > 0, got {params.r}")
    if not params.gamma > 0:
        v.append(f"gamma must be > 0, got {params.gamma}")
    if not params.sigma > 0:
        v.append(f"sigma must be > 0, got {params.sigma}")
    if not params.mu >= params.r:
        v.append(f"mu must be >= r, got mu={params.mu} < r={params.r}")
    if not params.beta1 > 0:
        v.append(f"beta1 must be > 0, got {params.beta1}")
    if not params.beta2 > 0:
        v.append(f"beta2 must be > 0, got {params.beta2}")
    if not 0.0 <= params.lam:
        v.append(f"lambda must be >= 0, got {params.lam}")
    if not params.lam <= params.alpha:
        v.append(f"lambda must be <= alpha, got lambda={params.lam} > alpha={params.alpha}")
    if not 0.0 < params.alpha < 1.0:
        v.append(f"alpha must lie in (0, 1), got {params.alpha}")

    if params.variant not in VARIANTS:
        v.append(f"variant must be one of {VARIANTS}, got {params.variant!r}")
    else:
        if params.variant == "Base" and params.r != params.gamma:
            v.append(
                f"Base variant requires r = gamma exactly, got r={params.r}, gamma={params.gamma}"
            )
        if params.variant == "GeneralReference":
            if params.r != params.gamma:
                v.append(
                    "GeneralReference requires r = gamma (its closed forms are built "
                    f"on the equal-rate dual equation), got r={params.r}, gamma={params.gamma}"
                )
            if params.phi is None:
                v.append("GeneralReference requires a phi specification")
            else:
                _validate_phi(params, v)
        elif params.phi is not None:
            v.append(f"variant {params.variant} does not take a phi specification")

    if v:
        raise ParamDomainError(v)
    return params


def _validate_phi(params: ModelParams, v: list[str]) -> None:
    phi = params.phi
    if phi.kind not in PHI_KINDS:
        v.append(f"phi.kind must be one of {PHI_KINDS}, got {phi.kind!r}")
        return
    if phi.kind == "Zero":
        if phi.phi_bar is not None or phi.h_hat is not None:
            v.append("phi kind Zero takes neither phi_bar nor h_hat")
        return
    if not _check_finite("phi.phi_bar", phi.phi_bar, v):
        return
    if not _check_finite("phi.h_hat", phi.h_hat, v):
        return
    if not 0.0 <= phi.phi_bar <= 1.0:
        v.append(f"phi_bar must lie in [0, 1], got {phi.phi_bar}")
    if not phi.h_hat > 0:
        v.append(f"h_hat must be > 0, got {phi.h_hat}")
    if 0.0 < params.alpha < 1.0 and params.lam <= params.alpha:
        bound = (params.alpha - params.lam) / (params.alpha * (1.0 - params.lam))
        if not phi.limit_at_infinity() < bound:
            v.append(
                "phi(inf) must stay below (alpha - lambda) / (alpha (1 - lambda)) "
                f"= {bound!r}, got phi_bar = {phi.phi_bar!r}"
            )


def classify_region(params: ModelParams, s: StatePoint, thresholds) -> Region:
    """Assign the unique region label of the state (x, h).

    Boundary ties go to the lower-wealth region's closed upper end:
    Gloom = [W_bkrp, W_low], Depression = (W_low, W_ref],
    Recovery = (W_ref, W_peak], Satisfactory = (W_peak, W_updt].
    """
    x = s.x
    if x < thresholds.w_bkrp:
        return Region.BANKRUPT
    if x <= thresholds.w_low:
        return Region.GLOOM
    if x <= thresholds.w_ref:
        return Region.DEPRESSION
    if x <= thresholds.w_peak:
        return Region.RECOVERY
    if x <= thresholds.w_updt:
        return Region.SATISFACTORY
    return Region.ABOVE_BLISS


def params_to_dict(params: ModelParams) -> dict:
    """Flat mapping with the JSON key ``"lambda"`` for the lam field."""
    d = {
        "r": params.r,
        "mu": params.mu,
        "sigma": params.sigma,
        "gamma": params.gamma,
        "lambda": params.lam,
        "alpha": params.alpha,
        "beta1": params.beta1,
        "beta2": params.beta2,
        "variant": params.variant,
    }
    if params.phi is not None:
        phi: dict[str, Any] = {"kind": params.phi.kind}
        if params.phi.phi_bar is not None:
            phi["phi_bar"] = params.phi.phi_bar
        if params.phi.h_hat is not None:
            phi["h_hat"] = params.phi.h_hat
        d["phi"] = phi
    return d


def params_from_dict(d: Mapping[str, Any]) -> ModelParams:
    """Build (unvalidated) ModelParams from a flat mapping.

    Unknown keys are rejected so that typos in parameter files fail loudly.
    """
    known = {"r", "mu", "sigma", "gamma", "lambda", "alpha", "beta1", "beta2", "variant", "phi"}
    unknown = set(d) - known
    if unknown:
        raise ParamDomainError([f"unknown parameter key(s): {sorted(unknown)}"])
    missing = {"r", "mu", "sigma", "gamma", "lambda", "alpha", "beta1", "beta2"} - set(d)
    if missing:
        raise ParamDomainError([f"missing parameter key(s): {sorted(missing)}"])

    phi = None
    if "phi" in d and d["phi"] is not None:
        p = d["phi"]
        extra = set(p) - {"kind", "phi_bar", "h_hat"}
        if extra:
            raise ParamDomainError([f"unknown phi key(s): {sorted(extra)}"])
        phi = PhiSpec(kind=p.get("kind"), phi_bar=p.get("phi_bar"), h_hat=p.get("h_hat"))

    return ModelParams(
        r=d["r"],
        mu=d["mu"],
        sigma=d["sigma"],
        gamma=d["gamma"],
        lam=d["lambda"],
        alpha=d["alpha"],
        beta1=d["beta1"],
        beta2=d["beta2"],
        variant=d.get("variant", "Base"),
        phi=phi,
    )
