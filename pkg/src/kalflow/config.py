"""Experiment configuration: schema validation and hashing.

Configs are YAML or JSON documents validated strictly before any compute:
unknown keys are rejected at every level, values are type- and
range-checked, and the validated document gets a short content hash that
is embedded in every output file for provenance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InvalidConfig
from .flow import FlowTrainConfig
from .hmc import HmcConfig

__all__ = ["ExperimentConfig", "load_config", "validate_config", "config_hash"]

BENCHMARKS = ("rosenbrock", "lorenz", "lorenz_smoke", "linear_gaussian")
METHODS = ("eki", "faki")

_FLOW_DEFAULTS = {
    "blocks": 4,
    "hidden": None,
    "learning_rate": 1e-3,
    "batch_size": 128,
    "max_epochs": 500,
    "patience": 30,
    "validation_fraction": 0.2,
}
_HMC_DEFAULTS = {
    "warmup": 5000,
    "samples": 100_000,
    "leapfrog_steps": 50,
    "target_accept": 0.65,
    "seed": 90210,
}
_DATASET_DEFAULTS = {"generation_seed": 2024, "path": None}


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    ensemble_size: int
    tau: float
    iteration_cap: int
    dataset: dict
    flow: dict
    hmc: dict
    output_dir: str
    hash: str = field(default="", compare=False)

    def flow_train_config(self) -> FlowTrainConfig:
        return FlowTrainConfig(**self.flow)

    def hmc_config(self) -> HmcConfig:
        return HmcConfig(**self.hmc)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidConfig(message)


def _merge_section(raw: dict, name: str, defaults: dict) -> dict:
    section = raw.get(name, {})
    _require(isinstance(section, dict), f"{name!r} must be a mapping")
    unknown = set(section) - set(defaults)
    _require(not unknown, f"unknown keys in {name!r}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    return merged


def validate_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping; raises InvalidConfig on the first violation."""
    _require(isinstance(raw, dict), "config root must be a mapping")
    known = {
        "benchmark",
        "methods",
        "seeds",
        "ensemble_size",
        "tau",
        "iteration_cap",
        "dataset",
        "flow",
        "hmc",
        "output_dir",
    }
    unknown = set(raw) - known
    _require(not unknown, f"unknown top-level keys: {sorted(unknown)}")

    benchmark = raw.get("benchmark")
    _require(benchmark in BENCHMARKS, f"benchmark must be one of {BENCHMARKS}")

    methods = tuple(raw.get("methods", ["eki", "faki"]))
    _require(
        len(methods) > 0 and all(m in METHODS for m in methods),
        f"methods must be a non-empty subset of {METHODS}",
    )

    seeds = raw.get("seeds", list(range(10)))
    _require(
        isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds),
        "seeds must be a non-empty list of integers",
    )
    _require(len(set(seeds)) == len(seeds), "seeds must be unique")

    ensemble_size = raw.get("ensemble_size")
    _require(
        isinstance(ensemble_size, int) and ensemble_size >= 2,
        "ensemble_size must be an integer >= 2",
    )

    tau = float(raw.get("tau", 0.5))
    _require(0.0 < tau < 1.0, "tau must lie strictly between 0 and 1")

    iteration_cap = raw.get("iteration_cap", 10_000)
    _require(
        isinstance(iteration_cap, int) and iteration_cap > 0,
        "iteration_cap must be a positive integer",
    )

    dataset = _merge_section(raw, "dataset", _DATASET_DEFAULTS)
    _require(
        dataset["path"] is None or isinstance(dataset["path"], str),
        "dataset.path must be a string path or null",
    )
    _require(
        isinstance(dataset["generation_seed"], int),
        "dataset.generation_seed must be an integer",
    )

    flow = _merge_section(raw, "flow", _FLOW_DEFAULTS)
    _require(
        flow["hidden"] is None or (isinstance(flow["hidden"], int) and flow["hidden"] > 0),
        "flow.hidden must be a positive integer or null",
    )
    for key in ("blocks", "batch_size", "max_epochs", "patience"):
        _require(
            isinstance(flow[key], int) and flow[key] >= 0,
            f"flow.{key} must be a nonnegative integer",
        )
    _require(float(flow["learning_rate"]) > 0, "flow.learning_rate must be positive")
    _require(
        0.0 < float(flow["validation_fraction"]) < 1.0,
        "flow.validation_fraction must lie in (0, 1)",
    )
    flow["learning_rate"] = float(flow["learning_rate"])
    flow["validation_fraction"] = float(flow["validation_fraction"])

    hmc = _merge_section(raw, "hmc", _HMC_DEFAULTS)
    for key in ("warmup", "samples", "leapfrog_steps", "seed"):
        _require(isinstance(hmc[key], int), f"hmc.{key} must be an integer")
    _require(hmc["warmup"] >= 100, "hmc.warmup must be at least 100")
    _require(
        0.0 < float(hmc["target_accept"]) < 1.0,
        "hmc.target_accept must lie in (0, 1)",
    )
    hmc["target_accept"] = float(hmc["target_accept"])

    output_dir = raw.get("output_dir", f"results/{benchmark}")
    _require(isinstance(output_dir, str), "output_dir must be a string")

    config = ExperimentConfig(
        benchmark=benchmark,
        methods=methods,
        seeds=tuple(seeds),
        ensemble_size=ensemble_size,
        tau=tau,
        iteration_cap=iteration_cap,
        dataset=dataset,
        flow=flow,
        hmc=hmc,
        output_dir=output_dir,
    )
    return ExperimentConfig(**{**config.__dict__, "hash": config_hash(config)})


def config_hash(config: ExperimentConfig) -> str:
    """Short content hash over everything except the output location."""
    doc = {
        "benchmark": config.benchmark,
        "methods": list(config.methods),
        "seeds": list(config.seeds),
        "ensemble_size": config.ensemble_size,
        "tau": config.tau,
        "iteration_cap": config.iteration_cap,
        "dataset": config.dataset,
        "flow": config.flow,
        "hmc": config.hmc,
    }
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a YAML/JSON experiment configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot parse config {path}: {exc}") from exc
    return validate_config(raw)
