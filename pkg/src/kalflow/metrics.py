"""Evaluation metrics: exact 1-Wasserstein distance, moments, aggregation.

For two equal-size uniform empirical measures the 1-Wasserstein distance
reduces to a minimum-cost perfect matching under the Euclidean ground
cost; the assignment problem is solved exactly (shortest augmenting path,
O(n^3)), which is adequate up to a couple of thousand samples. No
coordinate whitening is applied: distances are in raw parameter units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import EmptyInput, SizeMismatch

__all__ = [
    "MetricReport",
    "AggregateReport",
    "MomentTable",
    "wasserstein1",
    "moment_comparison",
    "aggregate",
]


@dataclass(frozen=True)
class MomentTable:
    """Per-dimension first/second moment comparison of two sample sets."""

    mean_samples: np.ndarray
    mean_reference: np.ndarray
    sd_samples: np.ndarray
    sd_reference: np.ndarray
    mean_abs_gap: np.ndarray
    mean_rel_gap: np.ndarray
    sd_abs_gap: np.ndarray
    sd_rel_gap: np.ndarray


@dataclass(frozen=True)
class MetricReport:
    """Evaluation of one completed run against the reference."""

    method: str
    seed: int
    n_iter: int
    w1: float
    moments: MomentTable | None = None


@dataclass(frozen=True)
class AggregateReport:
    """Median/MAD summary of per-seed reports for one (model, method) pair."""

    method: str
    median_n_iter: float
    mad_n_iter: float
    median_w1: float
    mad_w1: float
    reports: tuple[MetricReport, ...]


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between equal-size empirical measures with Euclidean cost.

    Raises
    ------
    SizeMismatch
        If the two sets differ in sample count or dimension.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise SizeMismatch(f"sample sets differ in shape: {a.shape} vs {b.shape}")
    if a.shape[0] < 1:
        raise SizeMismatch("empty sample sets")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def moment_comparison(samples: np.ndarray, reference: np.ndarray) -> MomentTable:
    """Per-dimension means and (n-1)-normalized standard deviations.

    Relative gaps are normalized by the reference magnitude, floored at
    machine-noise level to keep constant dimensions well-defined.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if samples.shape[1] != reference.shape[1]:
        raise SizeMismatch("dimension mismatch between samples and reference")
    if samples.shape[0] < 2 or reference.shape[0] < 2:
        raise SizeMismatch("need at least 2 rows per sample set")

    mean_s = samples.mean(axis=0)
    mean_r = reference.mean(axis=0)
    sd_s = samples.std(axis=0, ddof=1)
    sd_r = reference.std(axis=0, ddof=1)
    tiny = 1e-300
    return MomentTable(
        mean_samples=mean_s,
        mean_reference=mean_r,
        sd_samples=sd_s,
        sd_reference=sd_r,
        mean_abs_gap=np.abs(mean_s - mean_r),
        mean_rel_gap=np.abs(mean_s - mean_r) / np.maximum(np.abs(mean_r), tiny),
        sd_abs_gap=np.abs(sd_s - sd_r),
        sd_rel_gap=np.abs(sd_s - sd_r) / np.maximum(sd_r, tiny),
    )


def _median_and_mad(values: np.ndarray) -> tuple[float, float]:
    med = float(np.median(values))
    return med, float(np.median(np.abs(values - med)))


def aggregate(reports: list[MetricReport]) -> AggregateReport:
    """Median and median-absolute-deviation of n_iter and W1 over seeds."""
    if not reports:
        raise EmptyInput("no reports to aggregate")
    methods = {r.method for r in reports}
    if len(methods) != 1:
        raise ValueError(f"reports mix methods: {sorted(methods)}")
    n_iter = np.array([r.n_iter for r in reports], dtype=float)
    w1 = np.array([r.w1 for r in reports], dtype=float)
    med_n, mad_n = _median_and_mad(n_iter)
    med_w, mad_w = _median_and_mad(w1)
    return AggregateReport(
        method=reports[0].method,
        median_n_iter=med_n,
        mad_n_iter=mad_n,
        median_w1=med_w,
        mad_w1=mad_w,
        reports=tuple(reports),
    )
