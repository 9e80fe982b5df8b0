"""Adaptive inverse-temperature scheduling.

The step from temperature beta_n to beta_{n+1} is chosen so that the
effective sample size of pseudo-importance weights

    w_j = exp(-(beta_{n+1} - beta_n)/2 * ||Gamma^{-1/2}(y - G(x_j))||^2)

hits a target fraction tau of the ensemble size. The weights are purely
diagnostic: they control the step size and are never used to resample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .ensemble import Ensemble, NoiseModel
from .errors import DegenerateEnsemble, NonFinite, ScheduleStalled

__all__ = [
    "AnnealingRecord",
    "AnnealingState",
    "compute_misfits",
    "ess_at",
    "next_beta",
]

#: Bisection knobs: absolute beta tolerance, ESS tolerance (fraction of J),
#: iteration cap, and the progress threshold below which the schedule is
#: declared stalled.
BETA_TOL = 1e-10
ESS_TOL_FRACTION = 1e-7
MAX_BISECT_ITER = 100
STALL_THRESHOLD = 1e-12


@dataclass(frozen=True)
class AnnealingRecord:
    """One accepted temperature step."""

    beta: float
    alpha: float
    ess: float


@dataclass
class AnnealingState:
    """Current inverse temperature plus the realized schedule so far."""

    beta: float = 0.0
    step_index: int = 0
    history: list[AnnealingRecord] = field(default_factory=list)

    def advance(self, beta_next: float, alpha: float, ess: float) -> None:
        if not (self.beta < beta_next <= 1.0):
            raise ValueError(f"beta must increase within (current, 1]: {beta_next}")
        if abs(alpha - (beta_next - self.beta)) > 1e-12:
            raise ValueError("alpha must equal the beta increment")
        self.history.append(AnnealingRecord(beta=beta_next, alpha=alpha, ess=ess))
        self.beta = beta_next
        self.step_index += 1

    @property
    def complete(self) -> bool:
        return self.beta >= 1.0

    def betas(self) -> list[float]:
        """The realized sequence beta_0=0 < beta_1 < ... (ends at 1 when complete)."""
        return [0.0] + [rec.beta for rec in self.history]

    def alphas(self) -> list[float]:
        return [rec.alpha for rec in self.history]


def compute_misfits(
    ensemble: Ensemble, data: np.ndarray, noise: NoiseModel
) -> np.ndarray:
    """Squared noise-whitened data misfit per particle.

    Entry j is ``(y - G_j)^T Gamma^{-1} (y - G_j)``, computed via a triangular
    solve against the precomputed Cholesky factor of Gamma.
    """
    if ensemble.forward_evals is None or not ensemble.fresh:
        raise DegenerateEnsemble("misfits need fresh forward evaluations")
    if not np.isfinite(ensemble.forward_evals).all():
        raise NonFinite("forward evaluations contain NaN/Inf")
    resid = np.asarray(data, dtype=float) - ensemble.forward_evals  # (J, d_y)
    white = scipy.linalg.solve_triangular(noise.gamma_chol, resid.T, lower=True)
    return np.einsum("ij,ij->j", white, white)


def ess_at(misfits: np.ndarray, beta_next: float, beta_current: float) -> float:
    """Effective sample size of the pseudo-weights for a candidate step.

    Uses max-shifted exponents so the largest weight is exactly 1; the ESS
    ratio is invariant to the shift, and overflow is impossible even for
    enormous misfits. Result lies in [1, J].
    """
    if not (beta_current <= beta_next <= 1.0):
        raise ValueError("require beta_current <= beta_next <= 1")
    misfits = np.asarray(misfits, dtype=float)
    exponents = -0.5 * (beta_next - beta_current) * misfits
    weights = np.exp(exponents - exponents.max())
    total = weights.sum()
    return float(total * total / np.dot(weights, weights))


def next_beta(
    misfits: np.ndarray, state: AnnealingState, tau: float
) -> tuple[float, float]:
    """Solve for the next inverse temperature by bisection on the ESS.

    Returns ``(beta_next, alpha)``. If the ESS at beta=1 is already above
    tau*J there is no root in the interval and the schedule clamps to the
    final temperature. Otherwise bisection runs until the bracket is below
    BETA_TOL *and* the ESS matches tau*J to ESS_TOL_FRACTION*J (or the
    bracket degenerates at float resolution); the lower bracket end is
    returned so the accepted ESS never undershoots the target.

    Raises
    ------
    ScheduleStalled
        If the accepted increment falls below STALL_THRESHOLD (collapsed
        ensemble or enormous misfits).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if state.beta >= 1.0:
        raise ValueError("schedule already complete")
    misfits = np.asarray(misfits, dtype=float)
    if misfits.size < 1 or not np.isfinite(misfits).all() or (misfits < 0).any():
        raise NonFinite("misfits must be finite and nonnegative")

    target = tau * misfits.size
    ess_tol = ESS_TOL_FRACTION * misfits.size

    if ess_at(misfits, 1.0, state.beta) >= target:
        return 1.0, 1.0 - state.beta

    lo, hi = state.beta, 1.0  # ESS(lo) = J >= target > ESS(hi)
    for _ in range(MAX_BISECT_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # bracket exhausted at float resolution
        if ess_at(misfits, mid, state.beta) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BETA_TOL and abs(ess_at(misfits, lo, state.beta) - target) <= ess_tol:
            break

    beta_next = lo if lo > state.beta else hi
    alpha = beta_next - state.beta
    if alpha < STALL_THRESHOLD:
        raise ScheduleStalled(
            f"temperature increment {alpha:.3e} below {STALL_THRESHOLD:.0e}"
        )
    return beta_next, alpha
