"""Hamiltonian Monte Carlo reference sampler with IACT-based thinning.

Produces the ground-truth posterior samples the evaluation harness
compares against. Plain HMC: fixed leapfrog trajectory length, diagonal
mass matrix estimated from warmup variances, and dual-averaging step-size
adaptation toward a target acceptance rate. Deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergentChain, GradientUnavailable, InsufficientChain, KalflowError
from .models import ForwardModel

__all__ = [
    "HmcConfig",
    "ChainOutput",
    "leapfrog",
    "run_hmc",
    "integrated_autocorr_times",
    "thin_chain",
]

# Energy error beyond which a trajectory counts as divergent, and the
# divergence budget (fraction of sampling iterations) before the chain is
# declared broken.
DIVERGENCE_ENERGY = 1e3
DIVERGENCE_BUDGET = 0.05


@dataclass(frozen=True)
class HmcConfig:
    warmup: int = 1000
    samples: int = 10_000
    leapfrog_steps: int = 50
    target_accept: float = 0.65
    step_size: float | None = None  # None: bracket a reasonable value first
    seed: int = 0

    def __post_init__(self):
        if self.warmup < 100:
            raise ValueError("warmup must be at least 100")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class ChainOutput:
    samples: np.ndarray  # (M, d)
    acceptance_rate: float
    iact: np.ndarray  # (d,)
    thinned: np.ndarray  # every ceil(max iact)-th sample
    step_size: float
    inv_mass: np.ndarray
    divergences: int
    seed: int


def _divergence_safe(log_posterior, d: int):
    """Wrap a log-density so exploding trajectories reject instead of raising.

    Non-finite positions (or model errors on them) map to -inf density and a
    zero gradient; the Metropolis energy check then rejects the trajectory.
    """

    def wrapped(q):
        if not np.isfinite(q).all():
            return -np.inf, np.zeros(d)
        try:
            logp, grad = log_posterior(q)
        except (KalflowError, FloatingPointError):
            return -np.inf, np.zeros(d)
        if not np.isfinite(logp) or not np.isfinite(grad).all():
            return -np.inf, np.where(np.isfinite(grad), grad, 0.0)
        return logp, grad

    return wrapped


def leapfrog(grad_logp, q, p, step_size, n_steps, inv_mass):
    """Leapfrog integration of Hamiltonian dynamics; returns (q, p, grad).

    ``grad_logp`` maps a position to the gradient of the log density.
    Integration stops early once the state stops being finite (the caller's
    energy check will reject such trajectories).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        g = grad_logp(q)
        p = p + 0.5 * step_size * g
        for step in range(n_steps):
            q = q + step_size * inv_mass * p
            if not np.isfinite(q).all():
                return q, p, g
            g = grad_logp(q)
            if step != n_steps - 1:
                p = p + step_size * g
        p = p + 0.5 * step_size * g
    return q, p, g


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, initial_step: float, target: float):
        self.mu = math.log(10.0 * initial_step)
        self.target = target
        self.log_eps = math.log(initial_step)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0
        self.gamma, self.t0, self.kappa = 0.05, 10.0, 0.75

    def update(self, accept_prob: float) -> float:
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def adapted_step(self) -> float:
        return math.exp(self.log_eps_bar)


def _initial_step_size(logp_and_grad, q, rng, inv_mass):
    """Double/halve until a single leapfrog step crosses 0.5 acceptance."""
    d = q.size
    eps = 1.0
    p = rng.standard_normal(d) / np.sqrt(inv_mass)

    def accept_logprob(eps):
        q1, p1, _ = leapfrog(lambda x: logp_and_grad(x)[1], q, p, eps, 1, inv_mass)
        h0 = -logp_and_grad(q)[0] + 0.5 * float(p @ (inv_mass * p))
        h1 = -logp_and_grad(q1)[0] + 0.5 * float(p1 @ (inv_mass * p1))
        return h0 - h1

    a = accept_logprob(eps)
    if not np.isfinite(a):
        a = -np.inf
    direction = 1.0 if a > math.log(0.5) else -1.0
    for _ in range(60):
        eps *= 2.0**direction
        a = accept_logprob(eps)
        if not np.isfinite(a):
            a = -np.inf
        if direction * a <= direction * math.log(0.5):
            break
    return eps


def run_hmc(model: ForwardModel, config: HmcConfig) -> ChainOutput:
    """Sample the model posterior; adapts step size and diagonal mass in warmup.

    Warmup runs in two windows: the first ~30% with unit mass, after which
    the inverse mass is set to the per-dimension variance of the window's
    second half and step-size adaptation restarts. Divergent trajectories
    (energy error above DIVERGENCE_ENERGY) are rejected; the run aborts if
    more than DIVERGENCE_BUDGET of sampling iterations diverge.
    """
    if model.log_posterior is None:
        raise GradientUnavailable(f"model {model.name!r} provides no gradients")
    logp_and_grad = _divergence_safe(model.log_posterior, model.d)
    grad = lambda x: logp_and_grad(x)[1]  # noqa: E731

    rng = np.random.default_rng(config.seed)
    d = model.d
    q = np.asarray(model.sample_prior(rng, 1)[0], dtype=float)
    inv_mass = np.ones(d)

    eps = config.step_size or _initial_step_size(logp_and_grad, q, rng, inv_mass)
    averager = _DualAveraging(eps, config.target_accept)

    window_end = max(100, int(0.3 * config.warmup))
    window_samples = []
    total = config.warmup + config.samples
    samples = np.empty((config.samples, d))
    accepted = 0
    divergences = 0

    logp = logp_and_grad(q)[0]
    for it in range(total):
        p = rng.standard_normal(d) / np.sqrt(inv_mass)
        with np.errstate(over="ignore", invalid="ignore"):
            h0 = -logp + 0.5 * float(p @ (inv_mass * p))
            q_new, p_new, _ = leapfrog(grad, q, p, eps, config.leapfrog_steps, inv_mass)
            logp_new = logp_and_grad(q_new)[0]
            h1 = -logp_new + 0.5 * float(p_new @ (inv_mass * p_new))
            energy_error = h1 - h0

        if not np.isfinite(energy_error) or abs(energy_error) > DIVERGENCE_ENERGY:
            accept_prob = 0.0
            if it >= config.warmup:
                divergences += 1
        else:
            accept_prob = min(1.0, math.exp(-energy_error))
        if rng.random() < accept_prob:
            q, logp = q_new, logp_new

        if it < config.warmup:
            eps = averager.update(accept_prob)
            if it < window_end:
                window_samples.append(q.copy())
                if it == window_end - 1:
                    block = np.asarray(window_samples[window_end // 2 :])
                    var = block.var(axis=0)
                    inv_mass = np.where(var > 0, var, 1.0)
                    eps = _initial_step_size(logp_and_grad, q, rng, inv_mass)
                    averager = _DualAveraging(eps, config.target_accept)
            if it == config.warmup - 1:
                eps = averager.adapted_step
        else:
            samples[it - config.warmup] = q
            accepted += accept_prob

    if divergences > DIVERGENCE_BUDGET * config.samples:
        raise DivergentChain(
            f"{divergences} divergent trajectories in {config.samples} iterations"
        )

    iact = integrated_autocorr_times(samples)
    max_iact = float(np.max(iact))
    stride = max(1, math.ceil(max_iact)) if np.isfinite(max_iact) else len(samples)
    return ChainOutput(
        samples=samples,
        acceptance_rate=accepted / config.samples,
        iact=iact,
        thinned=samples[::stride],
        step_size=eps,
        inv_mass=inv_mass,
        divergences=divergences,
        seed=config.seed,
    )


def integrated_autocorr_times(samples: np.ndarray) -> np.ndarray:
    """Per-dimension IACT via Geyer's initial positive sequence.

    Autocorrelations are computed with FFTs; pairwise sums of consecutive
    correlations are accumulated while they stay positive. Constant
    dimensions get an infinite IACT.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    out = np.empty(d)
    nfft = 1 << (2 * n - 1).bit_length()
    centered = x - x.mean(axis=0)
    freq = np.fft.rfft(centered, n=nfft, axis=0)
    acov = np.fft.irfft(freq * np.conj(freq), n=nfft, axis=0)[:n].real / n
    for j in range(d):
        if acov[0, j] <= 0:
            out[j] = np.inf
            continue
        rho = acov[:, j] / acov[0, j]
        tau = -1.0
        for m in range(n // 2):
            pair = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < n else 0.0)
            if pair <= 0:
                break
            tau += 2.0 * pair
        out[j] = max(tau, 1.0)
    return out


def thin_chain(chain: ChainOutput, target_count: int) -> np.ndarray:
    """Thin to exactly ``target_count`` approximately independent rows.

    The stride is the larger of the worst-dimension IACT and
    ``floor(M / target_count)``.

    Raises
    ------
    InsufficientChain
        If the chain is shorter than ``target_count * max(IACT)``.
    """
    samples = chain.samples
    m = samples.shape[0]
    max_iact = float(np.max(chain.iact))
    if not np.isfinite(max_iact) or m < target_count * max_iact:
        raise InsufficientChain(
            f"chain of length {m} cannot yield {target_count} samples "
            f"at IACT {max_iact:.1f}"
        )
    stride = max(math.ceil(max_iact), m // target_count)
    thinned = samples[::stride][:target_count]
    if thinned.shape[0] < target_count:
        raise InsufficientChain("thinning produced too few samples")
    return thinned
