"""Forward-model interface and the built-in inversion benchmarks.

Three models ship with the package:

* a 2-D Rosenbrock-type model whose tiny noise scale on the curved
  component produces a strongly non-Gaussian posterior,
* a stochastic Lorenz system observed through its X trajectory, where the
  state path and the innovation scale are all inferred jointly,
* a linear-Gaussian model with a closed-form posterior, used for oracle
  checks.

Each benchmark provides a prior sampler, a batched forward map, the noise
model, observed data, and (for the reference sampler) the log posterior
with its analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ensemble import NoiseModel
from .errors import NonFinite

__all__ = [
    "ForwardModel",
    "rosenbrock_forward",
    "generate_rosenbrock_data",
    "make_rosenbrock",
    "lorenz_drift",
    "lorenz_prior_sample",
    "lorenz_forward",
    "lorenz_log_prior",
    "generate_lorenz_data",
    "make_lorenz",
    "make_linear_gaussian",
]

# Rosenbrock benchmark constants.
ROSENBROCK_PRIOR_SCALE = 10.0
ROSENBROCK_NOISE_DIAG = np.array([0.01**2, 1.0**2])
ROSENBROCK_TRUTH = np.array([1.0, 1.0])

# Lorenz benchmark constants.
LORENZ_DT = 0.02
LORENZ_STEPS = 30
LORENZ_OBS_SD = 1.0
LORENZ_DATA_SIGMA0 = 0.1
LORENZ_LOG_SIGMA0_PRIOR = (-1.0, 1.0)  # mean, sd

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ForwardModel:
    """Bundle of everything the inversion and reference samplers need.

    ``forward`` is batched: it maps an (n, d) array to (n, d_y) and must be
    pure (deterministic, no state), which is what makes particle-level
    parallel evaluation safe. ``log_posterior`` maps a single d-vector to
    ``(logp, grad)`` and is only required by the reference sampler.
    """

    name: str
    d: int
    d_y: int
    sample_prior: Callable[[np.random.Generator, int], np.ndarray]
    forward: Callable[[np.ndarray], np.ndarray]
    noise: NoiseModel
    data: np.ndarray
    log_posterior: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None
    param_names: tuple[str, ...] = ()
    obs_names: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Rosenbrock
# ---------------------------------------------------------------------------

def rosenbrock_forward(x: np.ndarray) -> np.ndarray:
    """Map (x0, x1) -> (x1 - x0^2, x0); accepts a single vector or a batch."""
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise NonFinite("rosenbrock_forward input contains NaN/Inf")
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    out = np.stack([xb[:, 1] - xb[:, 0] ** 2, xb[:, 0]], axis=1)
    return out[0] if single else out


def generate_rosenbrock_data(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Simulate observations at the generating point (1, 1)."""
    rng = np.random.default_rng(seed)
    eta = np.sqrt(ROSENBROCK_NOISE_DIAG) * rng.standard_normal(2)
    obs = rosenbrock_forward(ROSENBROCK_TRUTH) + eta
    return obs, ROSENBROCK_TRUTH.copy()


def make_rosenbrock(observations: np.ndarray) -> ForwardModel:
    obs = np.asarray(observations, dtype=float)
    noise = NoiseModel.from_covariance(np.diag(ROSENBROCK_NOISE_DIAG))
    prior_var = ROSENBROCK_PRIOR_SCALE**2
    gamma_inv = 1.0 / ROSENBROCK_NOISE_DIAG

    def sample_prior(rng: np.random.Generator, n: int) -> np.ndarray:
        return ROSENBROCK_PRIOR_SCALE * rng.standard_normal((n, 2))

    def log_posterior(x: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        resid = obs - rosenbrock_forward(x)
        white = gamma_inv * resid
        logp = (
            -0.5 * float(x @ x) / prior_var
            - _LOG_2PI
            - np.log(prior_var)
            - 0.5 * float(resid @ white)
            - _LOG_2PI
            - 0.5 * float(np.log(ROSENBROCK_NOISE_DIAG).sum())
        )
        # Jacobian of the forward map is [[-2 x0, 1], [1, 0]].
        grad = -x / prior_var
        grad[0] += -2.0 * x[0] * white[0] + white[1]
        grad[1] += white[0]
        return logp, grad

    return ForwardModel(
        name="rosenbrock",
        d=2,
        d_y=2,
        sample_prior=sample_prior,
        forward=rosenbrock_forward,
        noise=noise,
        data=obs,
        log_posterior=log_posterior,
        param_names=("x0", "x1"),
        obs_names=("y0", "y1"),
    )


# ---------------------------------------------------------------------------
# Stochastic Lorenz system
# ---------------------------------------------------------------------------
#
# Parameter layout, fixed for serialization stability:
#   theta = (log_sigma0, X_0, Y_0, Z_0, X_1..X_T, Y_1..Y_T, Z_1..Z_T)
# so d = 4 + 3T and the observations are the X_1..X_T block (d_y = T).


def lorenz_drift(x: np.ndarray, y: np.ndarray, z: np.ndarray):
    """Drift terms (f_X, f_Y, f_Z) of the Lorenz system; vectorized."""
    fx = 10.0 * (y - x)
    fy = x * (28.0 - z) - y
    fz = x * y - (8.0 / 3.0) * z
    return fx, fy, fz


def lorenz_param_names(steps: int = LORENZ_STEPS) -> tuple[str, ...]:
    names = ["log_sigma0", "x_0", "y_0", "z_0"]
    for block in ("x", "y", "z"):
        names += [f"{block}_{t}" for t in range(1, steps + 1)]
    return tuple(names)


def _unpack(theta: np.ndarray, steps: int):
    """Split theta into log_sigma0 and the X/Y/Z paths of length steps+1."""
    t = steps
    x = np.concatenate(([theta[1]], theta[4 : 4 + t]))
    y = np.concatenate(([theta[2]], theta[4 + t : 4 + 2 * t]))
    z = np.concatenate(([theta[3]], theta[4 + 2 * t : 4 + 3 * t]))
    return theta[0], x, y, z


def _pack(log_sigma0: float, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.concatenate(
        ([log_sigma0, x[0], y[0], z[0]], x[1:], y[1:], z[1:])
    )


def lorenz_prior_sample(
    rng: np.random.Generator, steps: int = LORENZ_STEPS, dt: float = LORENZ_DT
) -> np.ndarray:
    """One ancestral draw from the joint prior over scale, initials, and path."""
    return _lorenz_prior_batch(rng, 1, steps, dt)[0]


def _lorenz_prior_batch(
    rng: np.random.Generator, n: int, steps: int, dt: float
) -> np.ndarray:
    mu, sd = LORENZ_LOG_SIGMA0_PRIOR
    log_sigma0 = mu + sd * rng.standard_normal(n)
    step_sd = np.exp(log_sigma0) * np.sqrt(dt)  # per-step innovation sd

    x = np.empty((n, steps + 1))
    y = np.empty((n, steps + 1))
    z = np.empty((n, steps + 1))
    x[:, 0] = rng.standard_normal(n)
    y[:, 0] = rng.standard_normal(n)
    z[:, 0] = rng.standard_normal(n)
    for t in range(steps):
        fx, fy, fz = lorenz_drift(x[:, t], y[:, t], z[:, t])
        x[:, t + 1] = x[:, t] + fx * dt + step_sd * rng.standard_normal(n)
        y[:, t + 1] = y[:, t] + fy * dt + step_sd * rng.standard_normal(n)
        z[:, t + 1] = z[:, t] + fz * dt + step_sd * rng.standard_normal(n)

    out = np.empty((n, 4 + 3 * steps))
    out[:, 0] = log_sigma0
    out[:, 1], out[:, 2], out[:, 3] = x[:, 0], y[:, 0], z[:, 0]
    out[:, 4 : 4 + steps] = x[:, 1:]
    out[:, 4 + steps : 4 + 2 * steps] = y[:, 1:]
    out[:, 4 + 2 * steps : 4 + 3 * steps] = z[:, 1:]
    return out


def lorenz_forward(params: np.ndarray, steps: int = LORENZ_STEPS) -> np.ndarray:
    """Project out the X_1..X_T block; no integration happens here."""
    params = np.asarray(params, dtype=float)
    if not np.isfinite(params).all():
        raise NonFinite("lorenz_forward input contains NaN/Inf")
    if params.ndim == 1:
        return params[4 : 4 + steps].copy()
    return params[:, 4 : 4 + steps].copy()


def generate_lorenz_data(
    seed: int,
    steps: int = LORENZ_STEPS,
    dt: float = LORENZ_DT,
    sigma0: float = LORENZ_DATA_SIGMA0,
    obs_sd: float = LORENZ_OBS_SD,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama simulation of the system plus noisy X observations.

    Returns ``(observations, ground_truth)`` where the ground truth is the
    realized parameter vector (fixed ``log sigma0 = log(0.1)`` by default,
    standard-normal initials, and the simulated path).
    """
    rng = np.random.default_rng(seed)
    step_sd = sigma0 * np.sqrt(dt)
    x = np.empty(steps + 1)
    y = np.empty(steps + 1)
    z = np.empty(steps + 1)
    x[0], y[0], z[0] = rng.standard_normal(3)
    for t in range(steps):
        fx, fy, fz = lorenz_drift(x[t], y[t], z[t])
        x[t + 1] = x[t] + fx * dt + step_sd * rng.standard_normal()
        y[t + 1] = y[t] + fy * dt + step_sd * rng.standard_normal()
        z[t + 1] = z[t] + fz * dt + step_sd * rng.standard_normal()
    observations = x[1:] + obs_sd * rng.standard_normal(steps)
    truth = _pack(np.log(sigma0), x, y, z)
    return observations, truth


def lorenz_log_prior(
    theta: np.ndarray, steps: int = LORENZ_STEPS, dt: float = LORENZ_DT
) -> float:
    """Fully normalized joint prior density of scale, initials, and path."""
    log_sigma0, x, y, z = _unpack(np.asarray(theta, dtype=float), steps)
    mu, sd = LORENZ_LOG_SIGMA0_PRIOR
    s2 = np.exp(2.0 * log_sigma0) * dt

    logp = -0.5 * ((log_sigma0 - mu) / sd) ** 2 - 0.5 * _LOG_2PI - np.log(sd)
    logp += -0.5 * (x[0] ** 2 + y[0] ** 2 + z[0] ** 2) - 1.5 * _LOG_2PI
    drifts = lorenz_drift(x[:-1], y[:-1], z[:-1])
    for path, f in zip((x, y, z), drifts):
        delta = path[1:] - path[:-1] - f * dt
        logp += float((-0.5 * delta**2 / s2 - 0.5 * np.log(2.0 * np.pi * s2)).sum())
    return float(logp)


def _lorenz_log_posterior(
    theta: np.ndarray,
    observations: np.ndarray,
    steps: int,
    dt: float,
    obs_sd: float,
) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    log_sigma0, x, y, z = _unpack(theta, steps)
    mu, sd = LORENZ_LOG_SIGMA0_PRIOR
    s2 = np.exp(2.0 * log_sigma0) * dt
    obs_var = obs_sd**2

    fx, fy, fz = lorenz_drift(x[:-1], y[:-1], z[:-1])
    dxt = x[1:] - x[:-1] - fx * dt
    dyt = y[1:] - y[:-1] - fy * dt
    dzt = z[1:] - z[:-1] - fz * dt
    obs_resid = observations - x[1:]

    logp = (
        -0.5 * ((log_sigma0 - mu) / sd) ** 2
        - 0.5 * (x[0] ** 2 + y[0] ** 2 + z[0] ** 2)
        - 0.5 * float(((dxt**2 + dyt**2 + dzt**2) / s2).sum())
        - 1.5 * steps * np.log(2.0 * np.pi * s2)
        - 0.5 * float((obs_resid**2).sum()) / obs_var
        - 0.5 * steps * np.log(2.0 * np.pi * obs_var)
        - 2.0 * _LOG_2PI
        - np.log(sd)
    )

    # Whitened transition residuals.
    rx, ry, rz = dxt / s2, dyt / s2, dzt / s2

    gx = np.zeros(steps + 1)
    gy = np.zeros(steps + 1)
    gz = np.zeros(steps + 1)
    # Own transition: state at time t+1 appears with coefficient -1.
    gx[1:] -= rx
    gy[1:] -= ry
    gz[1:] -= rz
    # Next transition: state at time t enters the conditional means.
    gx[:-1] += rx * (1.0 - 10.0 * dt) + ry * (28.0 - z[:-1]) * dt + rz * y[:-1] * dt
    gy[:-1] += rx * 10.0 * dt + ry * (1.0 - dt) + rz * x[:-1] * dt
    gz[:-1] += ry * (-x[:-1] * dt) + rz * (1.0 - (8.0 / 3.0) * dt)
    # Priors on initials and the observation term on X_1..X_T.
    gx[0] -= x[0]
    gy[0] -= y[0]
    gz[0] -= z[0]
    gx[1:] += obs_resid / obs_var
    # log sigma0: each transition contributes delta^2/s2 - 1.
    g_ls = (
        -(log_sigma0 - mu) / sd**2
        + float(((dxt**2 + dyt**2 + dzt**2) / s2).sum())
        - 3.0 * steps
    )
    return float(logp), _pack(g_ls, gx, gy, gz)


def make_lorenz(
    observations: np.ndarray,
    steps: int = LORENZ_STEPS,
    dt: float = LORENZ_DT,
    obs_sd: float = LORENZ_OBS_SD,
) -> ForwardModel:
    obs = np.asarray(observations, dtype=float)
    if obs.shape != (steps,):
        raise ValueError(f"expected {steps} observations, got {obs.shape}")
    noise = NoiseModel.from_covariance(obs_sd**2 * np.eye(steps))

    def sample_prior(rng: np.random.Generator, n: int) -> np.ndarray:
        return _lorenz_prior_batch(rng, n, steps, dt)

    def forward(params: np.ndarray) -> np.ndarray:
        return lorenz_forward(params, steps)

    def log_posterior(theta: np.ndarray) -> tuple[float, np.ndarray]:
        return _lorenz_log_posterior(theta, obs, steps, dt, obs_sd)

    return ForwardModel(
        name="lorenz" if steps == LORENZ_STEPS else f"lorenz_t{steps}",
        d=4 + 3 * steps,
        d_y=steps,
        sample_prior=sample_prior,
        forward=forward,
        noise=noise,
        data=obs,
        log_posterior=log_posterior,
        param_names=lorenz_param_names(steps),
        obs_names=tuple(f"obs_{t}" for t in range(1, steps + 1)),
    )


# ---------------------------------------------------------------------------
# Linear-Gaussian oracle model
# ---------------------------------------------------------------------------

def make_linear_gaussian(
    operator: np.ndarray,
    prior_mean: np.ndarray,
    prior_cov: np.ndarray,
    noise_cov: np.ndarray,
    observations: np.ndarray,
) -> tuple[ForwardModel, np.ndarray, np.ndarray]:
    """Linear forward model with conjugate posterior.

    Returns ``(model, posterior_mean, posterior_cov)`` so tests can compare
    ensemble estimates against the closed form.
    """
    a = np.atleast_2d(np.asarray(operator, dtype=float))
    m0 = np.asarray(prior_mean, dtype=float)
    c0 = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    obs = np.asarray(observations, dtype=float)
    noise = NoiseModel.from_covariance(noise_cov)
    d = m0.size

    c0_inv = np.linalg.inv(c0)
    gamma_inv = np.linalg.inv(noise.gamma)
    post_cov = np.linalg.inv(c0_inv + a.T @ gamma_inv @ a)
    post_mean = post_cov @ (c0_inv @ m0 + a.T @ gamma_inv @ obs)

    chol0 = np.linalg.cholesky(c0)

    def sample_prior(rng: np.random.Generator, n: int) -> np.ndarray:
        return m0 + rng.standard_normal((n, d)) @ chol0.T

    def forward(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = np.atleast_2d(x) @ a.T
        return out[0] if single else out

    def log_posterior(x: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        dp = x - m0
        resid = obs - a @ x
        logp = -0.5 * float(dp @ c0_inv @ dp) - 0.5 * float(resid @ gamma_inv @ resid)
        grad = -c0_inv @ dp + a.T @ (gamma_inv @ resid)
        return logp, grad

    model = ForwardModel(
        name="linear_gaussian",
        d=d,
        d_y=a.shape[0],
        sample_prior=sample_prior,
        forward=forward,
        noise=noise,
        data=obs,
        log_posterior=log_posterior,
        param_names=tuple(f"x{i}" for i in range(d)),
        obs_names=tuple(f"y{i}" for i in range(a.shape[0])),
    )
    return model, post_mean, post_cov
