"""Ensemble containers and the perturbed-observation Kalman update.

The update implemented here is generic over the coordinate system: the
inversion drivers call it both on parameter-space particles and on the
latent-space particles produced by a normalizing flow. Nothing in this
module ever mutates an ensemble in place; updates return new objects so
the temperature scheduler can probe candidate step sizes safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import DegenerateEnsemble, NonFinite, SingularSystem

__all__ = [
    "Ensemble",
    "NoiseModel",
    "KalmanCrossCovariances",
    "empirical_cross_covariances",
    "perturb_observations",
    "kalman_update",
]

# Jitter escalation for the (C_gg + alpha*Gamma) factorization, as a
# fraction of trace/d_y: start tiny, grow x10, then give up.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Ensemble:
    """J particles with (possibly stale) forward-model evaluations.

    Parameters
    ----------
    particles : ndarray, shape (J, d)
        Particle positions, one row per ensemble member.
    forward_evals : ndarray, shape (J, d_y), or None
        Forward-model outputs, row j belonging to particle row j.
    generation : int
        Iteration counter; incremented by each accepted update.
    fresh : bool
        True when ``forward_evals`` corresponds to ``particles``.
    """

    particles: np.ndarray
    forward_evals: np.ndarray | None = None
    generation: int = 0
    fresh: bool = field(default=False)

    def __post_init__(self):
        particles = _readonly(np.atleast_2d(self.particles))
        object.__setattr__(self, "particles", particles)
        if self.forward_evals is not None:
            evals = _readonly(np.atleast_2d(self.forward_evals))
            if evals.shape[0] != particles.shape[0]:
                raise DegenerateEnsemble(
                    f"{evals.shape[0]} forward evals for {particles.shape[0]} particles"
                )
            object.__setattr__(self, "forward_evals", evals)
        else:
            object.__setattr__(self, "fresh", False)
        if self.generation < 0:
            raise ValueError("generation must be nonnegative")

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def require_finite(self) -> None:
        if not np.isfinite(self.particles).all():
            raise NonFinite("ensemble particles contain NaN/Inf")
        if self.forward_evals is not None and not np.isfinite(self.forward_evals).all():
            raise NonFinite("forward evaluations contain NaN/Inf")

    def with_evals(self, forward_evals: np.ndarray) -> "Ensemble":
        """New ensemble with fresh forward evaluations attached."""
        return replace(self, forward_evals=forward_evals, fresh=True)


@dataclass(frozen=True)
class NoiseModel:
    """Observation-noise covariance with its precomputed Cholesky factor."""

    gamma: np.ndarray
    gamma_chol: np.ndarray

    @classmethod
    def from_covariance(cls, gamma: np.ndarray) -> "NoiseModel":
        """Validate symmetry/SPD and factorize once.

        Raises
        ------
        NonFinite
            If the covariance contains NaN/Inf.
        ValueError
            If the covariance is asymmetric beyond 1e-12 relative, or not
            positive definite.
        """
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        if not np.isfinite(gamma).all():
            raise NonFinite("noise covariance contains NaN/Inf")
        scale = max(np.abs(gamma).max(), 1.0)
        if np.abs(gamma - gamma.T).max() > 1e-12 * scale:
            raise ValueError("noise covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(gamma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("noise covariance is not positive definite") from exc
        return cls(gamma=_readonly(gamma), gamma_chol=_readonly(chol))

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class KalmanCrossCovariances:
    """Empirical means and centered cross-covariances of an ensemble."""

    c_xg: np.ndarray  # (d, d_y)
    c_gg: np.ndarray  # (d_y, d_y)
    x_mean: np.ndarray  # (d,)
    g_mean: np.ndarray  # (d_y,)


def empirical_cross_covariances(ensemble: Ensemble) -> KalmanCrossCovariances:
    """Centered (J-1)-normalized cross-covariances of particles and evals.

    Raises
    ------
    DegenerateEnsemble
        If J < 2 or forward evaluations are missing/stale.
    NonFinite
        If any input entry is non-finite.
    """
    if ensemble.size < 2:
        raise DegenerateEnsemble("need at least 2 particles for empirical covariances")
    if ensemble.forward_evals is None or not ensemble.fresh:
        raise DegenerateEnsemble("forward evaluations are stale or missing")
    ensemble.require_finite()

    x = ensemble.particles
    g = ensemble.forward_evals
    x_mean = x.mean(axis=0)
    g_mean = g.mean(axis=0)
    xc = x - x_mean
    gc = g - g_mean
    norm = 1.0 / (ensemble.size - 1)
    return KalmanCrossCovariances(
        c_xg=xc.T @ gc * norm,
        c_gg=gc.T @ gc * norm,
        x_mean=x_mean,
        g_mean=g_mean,
    )


def perturb_observations(
    data: np.ndarray,
    noise: NoiseModel,
    alpha: float,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Data replicated ``count`` times, each row perturbed by sqrt(alpha)*N(0, Gamma).

    Row j is ``data + sqrt(alpha) * gamma_chol @ u_j`` with u_j i.i.d. standard
    normal; deterministic given the generator state.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    data = np.asarray(data, dtype=float)
    if not np.isfinite(data).all():
        raise NonFinite("observed data contains NaN/Inf")
    u = rng.standard_normal((count, noise.dim))
    return data + np.sqrt(alpha) * (u @ noise.gamma_chol.T)


def _factorize_with_jitter(system: np.ndarray):
    """Cholesky of the Kalman system matrix, escalating diagonal jitter."""
    d_y = system.shape[0]
    base = np.trace(system) / d_y
    jitter = 0.0
    while True:
        try:
            return scipy.linalg.cho_factor(
                system + jitter * np.eye(d_y), lower=True
            )
        except np.linalg.LinAlgError:
            pass
        if jitter == 0.0:
            jitter = _JITTER_START * base
        else:
            jitter *= 10.0
        if jitter > _JITTER_MAX * base or jitter == 0.0:
            raise SingularSystem(
                "Kalman system matrix not SPD after jitter escalation"
            )


def kalman_update(
    ensemble: Ensemble,
    data: np.ndarray,
    noise: NoiseModel,
    alpha: float,
    rng: np.random.Generator,
) -> Ensemble:
    """One perturbed-observation Kalman step with regularization ``alpha``.

    Each particle moves by ``C_xg (C_gg + alpha*Gamma)^{-1} (y - G_j + sqrt(alpha) xi_j)``
    with independent xi_j ~ N(0, Gamma). The system matrix is factorized once
    and solved against all J right-hand sides.

    Returns a new ensemble at ``generation + 1`` with stale forward evals.

    Raises
    ------
    SingularSystem
        If the factorization fails after jitter escalation.
    NonFinite
        If any updated particle is non-finite.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    cov = empirical_cross_covariances(ensemble)
    data = np.asarray(data, dtype=float)
    if not np.isfinite(data).all():
        raise NonFinite("observed data contains NaN/Inf")

    perturbed = perturb_observations(data, noise, alpha, ensemble.size, rng)
    innovations = perturbed - ensemble.forward_evals  # (J, d_y)

    system = cov.c_gg + alpha * noise.gamma
    factor = _factorize_with_jitter(system)
    solved = scipy.linalg.cho_solve(factor, innovations.T)  # (d_y, J)
    updated = ensemble.particles + (cov.c_xg @ solved).T

    if not np.isfinite(updated).all():
        raise NonFinite("Kalman update produced non-finite particles")
    return Ensemble(particles=updated, generation=ensemble.generation + 1)
