"""End-to-end inversion loops producing run reports.

Two drivers share one annealing skeleton: ``run_eki`` updates particles in
parameter space; ``run_faki`` fits a flow to the current particles at each
temperature level and performs the same Kalman update in the flow's latent
space before mapping back.

Randomness is split into two independent streams derived from the run
seed: one for the particle path (prior draw and observation perturbations)
and one for flow training. The flow-based driver therefore consumes the
particle stream in exactly the same order as the plain driver, so a run
with an identity flow reproduces the plain run draw-for-draw.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .annealing import AnnealingState, compute_misfits, ess_at, next_beta
from .ensemble import Ensemble, kalman_update
from .errors import ForwardModelFailure, IterationCapExceeded
from .flow import FlowTrainConfig, fit_flow, flow_forward, flow_inverse
from .models import ForwardModel

__all__ = ["RunConfig", "RunReport", "evaluate_forward_parallel", "run_eki", "run_faki"]

METHODS = ("eki", "faki")


@dataclass(frozen=True)
class RunConfig:
    """Settings for one inversion run."""

    method: str
    ensemble_size: int
    seed: int
    tau: float = 0.5
    flow: FlowTrainConfig | None = None
    iteration_cap: int = 10_000
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")


@dataclass
class RunReport:
    """Outcome of one completed run."""

    method: str
    seed: int
    final_ensemble: Ensemble
    n_iter: int
    schedule: AnnealingState
    wall_times: list[float]
    metadata: dict = field(default_factory=dict)


def evaluate_forward_parallel(
    model: ForwardModel, ensemble: Ensemble, threads: int = 1
) -> Ensemble:
    """Fill forward evaluations for every particle, optionally threaded.

    The forward map is pure, so results are identical in particle order
    regardless of the parallelism degree.

    Raises
    ------
    ForwardModelFailure
        Carrying the index of the first particle whose evaluation raised or
        produced non-finite output.
    """
    ensemble.require_finite()
    particles = ensemble.particles

    def _locate_failure() -> int:
        for j in range(particles.shape[0]):
            try:
                row = np.asarray(model.forward(particles[j]))
            except Exception:
                return j
            if not np.isfinite(row).all():
                return j
        return 0

    try:
        if threads <= 1:
            evals = np.asarray(model.forward(particles), dtype=float)
        else:
            chunks = np.array_split(np.arange(particles.shape[0]), threads)
            chunks = [c for c in chunks if c.size]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda c: model.forward(particles[c]), chunks))
            evals = np.concatenate([np.atleast_2d(p) for p in parts], axis=0)
    except Exception as exc:
        idx = _locate_failure()
        raise ForwardModelFailure(idx, f"forward model raised on particle {idx}: {exc}")

    evals = np.atleast_2d(evals)
    if not np.isfinite(evals).all():
        idx = int(np.where(~np.isfinite(evals).all(axis=1))[0][0])
        raise ForwardModelFailure(idx, f"non-finite forward output at particle {idx}")
    return ensemble.with_evals(evals)


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    particle_ss, flow_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(particle_ss), np.random.default_rng(flow_ss)


def run_eki(model: ForwardModel, config: RunConfig) -> RunReport:
    """Annealed ensemble Kalman inversion from prior to posterior.

    Each iteration evaluates the forward model on all particles, solves for
    the next inverse temperature from the misfit-based effective sample
    size, and applies one perturbed-observation Kalman update. The reported
    ensemble is the state after the final (beta = 1) update, with stale
    forward evaluations.
    """
    if config.method != "eki":
        raise ValueError("run_eki requires method='eki'")
    return _run_annealed(model, config, use_flow=False)


def run_faki(model: ForwardModel, config: RunConfig) -> RunReport:
    """Flow-preconditioned variant: Kalman updates in the latent space.

    Per level: the next temperature is solved from data-space misfits, a
    fresh flow is fit to the current particles, particles move to latent
    space, the Kalman update runs there (reusing the forward evaluations,
    since the inverse map returns the same points up to round-trip error),
    and the updated particles map back through the inverse flow.
    """
    if config.method != "faki":
        raise ValueError("run_faki requires method='faki'")
    return _run_annealed(model, config, use_flow=True)


def _run_annealed(model: ForwardModel, config: RunConfig, use_flow: bool) -> RunReport:
    particle_rng, flow_rng = _rng_streams(config.seed)
    flow_config = config.flow or FlowTrainConfig()

    ens = Ensemble(model.sample_prior(particle_rng, config.ensemble_size))
    state = AnnealingState()
    wall_times: list[float] = []

    while not state.complete:
        if state.step_index >= config.iteration_cap:
            raise IterationCapExceeded(
                f"no convergence within {config.iteration_cap} iterations"
            )
        tick = time.perf_counter()

        ens = evaluate_forward_parallel(model, ens, config.threads)
        misfits = compute_misfits(ens, model.data, model.noise)
        beta_next, alpha = next_beta(misfits, state, config.tau)
        ess = ess_at(misfits, beta_next, state.beta)
        # The Kalman update moves the ensemble across one temperature
        # increment, i.e. against the likelihood tempered by alpha, so its
        # Tikhonov regularization is the reciprocal increment.
        tikhonov = 1.0 / alpha

        if use_flow:
            flow = fit_flow(ens.particles, flow_config, flow_rng)
            latent, _ = flow_forward(flow, ens.particles)
            latent_ens = Ensemble(
                latent,
                forward_evals=ens.forward_evals,
                generation=ens.generation,
                fresh=True,
            )
            updated = kalman_update(
                latent_ens, model.data, model.noise, tikhonov, particle_rng
            )
            back, _ = flow_inverse(flow, updated.particles)
            ens = Ensemble(back, generation=ens.generation + 1)
        else:
            ens = kalman_update(ens, model.data, model.noise, tikhonov, particle_rng)

        state.advance(beta_next, alpha, ess)
        wall_times.append(time.perf_counter() - tick)

    metadata = {"tau": config.tau, "ensemble_size": config.ensemble_size}
    if use_flow:
        metadata["latent_updates_reuse_forward_evals"] = True
    return RunReport(
        method=config.method,
        seed=config.seed,
        final_ensemble=ens,
        n_iter=state.step_index,
        schedule=state,
        wall_times=wall_times,
        metadata=metadata,
    )
