"""Exception hierarchy shared by all peakdraw modules.

Every error raised by the library derives from :class:`PeakdrawError`, so
callers (including the CLI) can distinguish domain and convergence failures
from programming errors with a single except clause.
"""

from __future__ import annotations


class PeakdrawError(Exception):
    """Base class for all library errors."""


class ParamDomainError(PeakdrawError):
    """Model parameters violate the admissible domain.

    Carries the full list of violations, not just the first one found.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DegenerateMarket(PeakdrawError):
    """mu equals r, so the dual constant k = (r - mu)^2 / (2 sigma^2) is zero.

    Every dual closed form divides by k; there is no risk premium to invest
    against and the model degenerates.
    """


class HRangeError(PeakdrawError):
    """Peak level h outside the supported range (0, h_max]."""


class OutOfDualRegion(PeakdrawError):
    """Dual variable y below the lower dual boundary (1 - alpha) e^{-(1-alpha) beta2 h}."""


class OutOfEffectiveRegion(PeakdrawError):
    """Wealth x outside [W_bkrp(h), W_updt(h)], where the feedback policy is defined."""


class BracketError(PeakdrawError):
    """A bracketing root-finder could not enclose a sign change."""


class ConvergenceError(PeakdrawError):
    """An iterative solve stopped before reaching its residual tolerance.

    Attributes
    ----------
    best : float
        Best iterate found.
    residual : float
        Residual at the best iterate.
    iterations : int
        Iterations performed.
    """

    def __init__(self, message: str, best: float, residual: float, iterations: int):
        self.best = best
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{message} (best={best!r}, residual={residual!r}, iterations={iterations})"
        )
