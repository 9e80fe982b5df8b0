"""Command-line front end: generate -> run -> reference -> metrics.

Subcommands operate on a validated experiment config and an output
directory laid out as::

    <out>/
      dataset/            observations, ground truth, generation metadata
      runs/<method>_seed<k>/   final ensemble, schedule, report
      reference/          thinned posterior samples from the HMC sampler
      metrics/            per-run metric documents, aggregates, summary table

Completed (method, seed) pairs are skipped unless --force is given, which
makes the experiment matrix resumable. Every persisted file embeds the
config hash and the seed it was produced from; wall-clock timings go to a
separate timing file that is excluded from the reproducibility contract.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import models
from .config import ExperimentConfig, load_config
from .drivers import RunConfig, RunReport, run_eki, run_faki
from .errors import InvalidConfig, IoFailure, KalflowError, MissingReference
from .hmc import run_hmc, thin_chain
from .metrics import MetricReport, aggregate, moment_comparison, wasserstein1
from .models import ForwardModel
from .storage import read_json, read_matrix, write_json, write_matrix

__all__ = ["main", "cmd_generate", "cmd_run", "cmd_reference", "cmd_metrics"]


def _say(message: str) -> None:
    print(message, flush=True)


# ---------------------------------------------------------------------------
# Benchmark wiring
# ---------------------------------------------------------------------------

_LINEAR_OPERATOR = np.array([[1.0, 0.5], [0.0, 1.0]])
_LINEAR_PRIOR_MEAN = np.zeros(2)
_LINEAR_PRIOR_COV = np.eye(2)
_LINEAR_NOISE_COV = 0.5 * np.eye(2)
_LINEAR_TRUTH = np.array([1.0, 1.0])


def _generate_dataset(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    seed = config.dataset["generation_seed"]
    if config.benchmark == "rosenbrock":
        return models.generate_rosenbrock_data(seed)
    if config.benchmark == "lorenz":
        return models.generate_lorenz_data(seed)
    if config.benchmark == "lorenz_smoke":
        return models.generate_lorenz_data(seed, steps=10)
    if config.benchmark == "linear_gaussian":
        rng = np.random.default_rng(seed)
        chol = np.linalg.cholesky(_LINEAR_NOISE_COV)
        obs = _LINEAR_OPERATOR @ _LINEAR_TRUTH + chol @ rng.standard_normal(2)
        return obs, _LINEAR_TRUTH.copy()
    raise InvalidConfig(f"unknown benchmark {config.benchmark!r}")


def _build_model(config: ExperimentConfig, observations: np.ndarray) -> ForwardModel:
    if config.benchmark == "rosenbrock":
        return models.make_rosenbrock(observations)
    if config.benchmark == "lorenz":
        return models.make_lorenz(observations)
    if config.benchmark == "lorenz_smoke":
        return models.make_lorenz(observations, steps=10)
    if config.benchmark == "linear_gaussian":
        model, _, _ = models.make_linear_gaussian(
            _LINEAR_OPERATOR,
            _LINEAR_PRIOR_MEAN,
            _LINEAR_PRIOR_COV,
            _LINEAR_NOISE_COV,
            observations,
        )
        return model
    raise InvalidConfig(f"unknown benchmark {config.benchmark!r}")


def _dataset_path(out: Path) -> Path:
    return out / "dataset" / "observations.tsv"


def _load_observations(config: ExperimentConfig, out: Path) -> np.ndarray:
    if config.dataset["path"]:
        path = Path(config.dataset["path"])
    else:
        path = _dataset_path(out)
    if not path.exists():
        raise IoFailure(
            f"dataset {path} not found; run the 'generate' command first"
        )
    array, _, _ = read_matrix(path)
    return array[0]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(config: ExperimentConfig, out: Path, force: bool = False) -> None:
    """Write observations, ground truth, and generation metadata."""
    obs_path = _dataset_path(out)
    if obs_path.exists() and not force:
        _say(f"dataset exists: {obs_path} (use --force to regenerate)")
        return
    observations, ground_truth = _generate_dataset(config)
    model = _build_model(config, observations)
    meta = {
        "benchmark": config.benchmark,
        "config_hash": config.hash,
        "seed": config.dataset["generation_seed"],
    }
    write_matrix(obs_path, observations[None, :], list(model.obs_names), meta)
    write_matrix(
        out / "dataset" / "ground_truth.tsv",
        ground_truth[None, :],
        list(model.param_names),
        meta,
    )
    write_json(out / "dataset" / "generation.json", meta)
    _say(f"wrote dataset for {config.benchmark} to {obs_path.parent}")


def _pair_dir(out: Path, method: str, seed: int) -> Path:
    return out / "runs" / f"{method}_seed{seed}"


def _execute_pair(
    config: ExperimentConfig,
    model: ForwardModel,
    method: str,
    seed: int,
    out: Path,
    threads: int,
) -> RunReport:
    run_config = RunConfig(
        method=method,
        ensemble_size=config.ensemble_size,
        seed=seed,
        tau=config.tau,
        flow=config.flow_train_config(),
        iteration_cap=config.iteration_cap,
        threads=threads,
    )
    driver = run_faki if method == "faki" else run_eki
    started = time.perf_counter()
    report = driver(model, run_config)
    elapsed = time.perf_counter() - started

    pair = _pair_dir(out, method, seed)
    meta = {"config_hash": config.hash, "seed": seed, "method": method}
    write_matrix(
        pair / "ensemble.tsv",
        report.final_ensemble.particles,
        list(model.param_names),
        meta,
    )
    schedule = np.array(
        [[rec.beta, rec.alpha, rec.ess] for rec in report.schedule.history]
    )
    write_matrix(pair / "schedule.tsv", schedule, ["beta", "alpha", "ess"], meta)
    write_json(
        pair / "report.json",
        {
            "benchmark": config.benchmark,
            "config_hash": config.hash,
            "method": method,
            "seed": seed,
            "n_iter": report.n_iter,
            "sum_alpha": float(sum(report.schedule.alphas())),
            "metadata": report.metadata,
        },
    )
    # Wall-clock data is inherently non-reproducible, so it lives in its own
    # file outside the byte-identity contract.
    write_json(
        pair / "timing.json",
        {
            "config_hash": config.hash,
            "seed": seed,
            "total_seconds": elapsed,
            "per_iteration_seconds": report.wall_times,
        },
    )
    _say(f"{method} seed={seed}: n_iter={report.n_iter} ({elapsed:.1f}s)")
    return report


def cmd_run(
    config: ExperimentConfig,
    out: Path,
    force: bool = False,
    threads: int = 1,
    seed_filter: int | None = None,
    pair_workers: int = 1,
) -> dict:
    """Execute the (method, seed) matrix; failures are recorded, not fatal."""
    observations = _load_observations(config, out)
    model = _build_model(config, observations)
    seeds = [seed_filter] if seed_filter is not None else list(config.seeds)

    pending = []
    for method in config.methods:
        for seed in seeds:
            if _pair_dir(out, method, seed).joinpath("report.json").exists() and not force:
                _say(f"{method} seed={seed}: already complete, skipping")
                continue
            pending.append((method, seed))

    failures: dict[str, str] = {}

    def _one(pair):
        method, seed = pair
        try:
            _execute_pair(config, model, method, seed, out, threads)
        except KalflowError as exc:
            failures[f"{method}_seed{seed}"] = f"{type(exc).__name__}: {exc}"
            _say(f"{method} seed={seed}: FAILED ({exc})")

    if pair_workers > 1:
        with ThreadPoolExecutor(max_workers=pair_workers) as pool:
            list(pool.map(_one, pending))
    else:
        for pair in pending:
            _one(pair)

    summary = {
        "config_hash": config.hash,
        "attempted": [f"{m}_seed{s}" for m, s in pending],
        "failures": failures,
    }
    write_json(out / "runs" / "run_summary.json", summary)
    if failures:
        raise KalflowError(f"{len(failures)} run(s) failed: {sorted(failures)}")
    return summary


def _reference_path(config: ExperimentConfig, out: Path) -> Path:
    return out / "reference" / f"reference_{config.hash}.tsv"


def cmd_reference(config: ExperimentConfig, out: Path, force: bool = False) -> Path:
    """Produce (or reuse) thinned posterior samples from the HMC sampler."""
    path = _reference_path(config, out)
    if path.exists() and not force:
        _say(f"reference exists: {path}")
        return path
    observations = _load_observations(config, out)
    model = _build_model(config, observations)
    started = time.perf_counter()
    chain = run_hmc(model, config.hmc_config())
    thinned = thin_chain(chain, config.ensemble_size)
    elapsed = time.perf_counter() - started
    meta = {
        "model": model.name,
        "config_hash": config.hash,
        "seed": config.hmc["seed"],
        "acceptance_rate": f"{chain.acceptance_rate:.6f}",
        "max_iact": f"{float(np.max(chain.iact)):.3f}",
        "thin_stride": max(
            int(np.ceil(float(np.max(chain.iact)))),
            chain.samples.shape[0] // config.ensemble_size,
        ),
        "chain_length": chain.samples.shape[0],
    }
    write_matrix(path, thinned, list(model.param_names), meta)
    _say(
        f"reference for {model.name}: {thinned.shape[0]} samples, "
        f"accept={chain.acceptance_rate:.2f}, max IACT={np.max(chain.iact):.0f} "
        f"({elapsed:.0f}s)"
    )
    return path


def cmd_metrics(config: ExperimentConfig, out: Path) -> dict:
    """Compare every completed run against the reference and aggregate."""
    ref_path = _reference_path(config, out)
    if not ref_path.exists():
        raise MissingReference(
            f"reference samples {ref_path} not found; run the 'reference' command first"
        )
    reference, _, _ = read_matrix(ref_path)

    table_rows = []
    aggregates = {}
    for method in config.methods:
        reports: list[MetricReport] = []
        for seed in config.seeds:
            pair = _pair_dir(out, method, seed)
            report_path = pair / "report.json"
            if not report_path.exists():
                continue
            run_doc = read_json(report_path)
            ensemble, _, _ = read_matrix(pair / "ensemble.tsv")
            moments = moment_comparison(ensemble, reference)
            w1 = wasserstein1(ensemble, reference)
            reports.append(
                MetricReport(
                    method=method,
                    seed=seed,
                    n_iter=run_doc["n_iter"],
                    w1=w1,
                    moments=moments,
                )
            )
            write_json(
                out / "metrics" / f"{method}_seed{seed}_metrics.json",
                {
                    "config_hash": config.hash,
                    "method": method,
                    "seed": seed,
                    "n_iter": run_doc["n_iter"],
                    "w1": w1,
                    "mean_samples": moments.mean_samples.tolist(),
                    "mean_reference": moments.mean_reference.tolist(),
                    "sd_samples": moments.sd_samples.tolist(),
                    "sd_reference": moments.sd_reference.tolist(),
                },
            )
        if not reports:
            continue
        agg = aggregate(reports)
        aggregates[method] = agg
        write_json(
            out / "metrics" / f"aggregate_{method}.json",
            {
                "config_hash": config.hash,
                "benchmark": config.benchmark,
                "method": method,
                "seeds": [r.seed for r in reports],
                "median_n_iter": agg.median_n_iter,
                "mad_n_iter": agg.mad_n_iter,
                "median_w1": agg.median_w1,
                "mad_w1": agg.mad_w1,
                "per_seed": [
                    {"seed": r.seed, "n_iter": r.n_iter, "w1": r.w1} for r in reports
                ],
            },
        )
        table_rows.append(
            [agg.median_n_iter, agg.mad_n_iter, agg.median_w1, agg.mad_w1]
        )

    if not table_rows:
        raise MissingReference("no completed runs found; run the 'run' command first")

    # Summary table, one row per method, in the four-column layout
    # median(n_iter) / MAD(n_iter) / median(W1) / MAD(W1).
    table_path = out / "metrics" / "summary_table.tsv"
    header_meta = {"benchmark": config.benchmark, "config_hash": config.hash}
    labeled = [
        f"{config.benchmark}\t{method}\t"
        + "\t".join("%.17g" % v for v in row)
        for method, row in zip([m for m in config.methods if m in aggregates], table_rows)
    ]
    table_path.parent.mkdir(parents=True, exist_ok=True)
    with open(table_path, "w") as fh:
        for key in sorted(header_meta):
            fh.write(f"# {key}: {header_meta[key]}\n")
        fh.write(
            "model\talgorithm\tmedian_n_iter\tmad_n_iter\tmedian_w1\tmad_w1\n"
        )
        for line in labeled:
            fh.write(line + "\n")

    for method, agg in aggregates.items():
        _say(
            f"{config.benchmark} {method}: median n_iter={agg.median_n_iter:.1f} "
            f"(MAD {agg.mad_n_iter:.1f}), median W1={agg.median_w1:.4g} "
            f"(MAD {agg.mad_w1:.2g})"
        )
    return aggregates


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kalflow",
        description="Annealed ensemble Kalman inversion experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "simulate and persist the benchmark dataset"),
        ("run", "execute the (method, seed) experiment matrix"),
        ("reference", "produce reference posterior samples via HMC"),
        ("metrics", "evaluate runs against the reference and aggregate"),
        ("all", "generate, run, reference, and metrics in sequence"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config path")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--seed", type=int, default=None, help="run a single seed")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="parallelism for forward-model evaluation",
        )
        p.add_argument(
            "--pair-workers",
            type=int,
            default=1,
            help="concurrent (method, seed) pairs",
        )
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except InvalidConfig as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out) if args.out else Path(config.output_dir)
    try:
        if args.command in ("generate", "all"):
            cmd_generate(config, out, force=args.force)
        if args.command in ("run", "all"):
            cmd_run(
                config,
                out,
                force=args.force,
                threads=args.threads,
                seed_filter=args.seed,
                pair_workers=args.pair_workers,
            )
        if args.command in ("reference", "all"):
            cmd_reference(config, out, force=args.force)
        if args.command in ("metrics", "all"):
            cmd_metrics(config, out)
    except InvalidConfig as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    except KalflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
