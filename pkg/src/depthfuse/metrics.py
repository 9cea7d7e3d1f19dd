"""Depth evaluation measures pooled over all valid pixels of all images.

rel, log10 and rms are averages over the total valid pixel count ``T`` of
every image accumulated so far, not means of per-image values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from depthfuse.core import DepthMap, Scale, require_same_grid, valid_intersection
from depthfuse.errors import EmptyAccumulator, NonPositiveDepth, WrongScale

THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)

CSV_HEADER = "rel,log10,rms,d1,d2,d3,pixels"


@dataclass(frozen=True)
class MetricsAccumulator:
    sum_rel: float = 0.0
    sum_log10: float = 0.0
    sum_sq: float = 0.0
    count_delta1: int = 0
    count_delta2: int = 0
    count_delta3: int = 0
    total: int = 0

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        return MetricsAccumulator(
            self.sum_rel + other.sum_rel,
            self.sum_log10 + other.sum_log10,
            self.sum_sq + other.sum_sq,
            self.count_delta1 + other.count_delta1,
            self.count_delta2 + other.count_delta2,
            self.count_delta3 + other.count_delta3,
            self.total + other.total,
        )


@dataclass(frozen=True)
class MetricsReport:
    rel: float
    log10: float
    rms: float
    delta1: float
    delta2: float
    delta3: float
    pixels: int

    def as_text(self) -> str:
        return (f"rel={self.rel:.6f} log10={self.log10:.6f} rms={self.rms:.6f} "
                f"d1={self.delta1:.6f} d2={self.delta2:.6f} d3={self.delta3:.6f} "
                f"pixels={self.pixels}")

    def as_csv_row(self) -> str:
        return (f"{self.rel:.6f},{self.log10:.6f},{self.rms:.6f},"
                f"{self.delta1:.6f},{self.delta2:.6f},{self.delta3:.6f},{self.pixels}")


def pixel_terms(d_gt: DepthMap, d: DepthMap) -> MetricsAccumulator:
    """Accumulator holding the contribution of one image pair."""
    for m in (d_gt, d):
        if m.scale is not Scale.LINEAR:
            raise WrongScale("metrics are computed on linear-scale depth (meters)")
    require_same_grid(d_gt, d)
    mask = valid_intersection(d_gt.mask, d.mask)
    gt = d_gt.values[mask]
    pred = d.values[mask]
    if np.any(gt <= 0) or np.any(pred <= 0):
        raise NonPositiveDepth("metrics need positive depths at valid pixels")
    ratio = np.maximum(gt / pred, pred / gt)
    return MetricsAccumulator(
        float(np.sum(np.abs(gt - pred) / gt)),
        float(np.sum(np.abs(np.log10(gt) - np.log10(pred)))),
        float(np.sum((gt - pred) ** 2)),
        int(np.count_nonzero(ratio < THRESHOLDS[0])),
        int(np.count_nonzero(ratio < THRESHOLDS[1])),
        int(np.count_nonzero(ratio < THRESHOLDS[2])),
        int(gt.size),
    )


def accumulate(acc: MetricsAccumulator, d_gt: DepthMap, d: DepthMap) -> MetricsAccumulator:
    return acc.merge(pixel_terms(d_gt, d))


def finalize(acc: MetricsAccumulator) -> MetricsReport:
    t = acc.total
    if t == 0:
        raise EmptyAccumulator("no valid pixels accumulated")
    return MetricsReport(
        acc.sum_rel / t,
        acc.sum_log10 / t,
        math.sqrt(acc.sum_sq / t),
        acc.count_delta1 / t,
        acc.count_delta2 / t,
        acc.count_delta3 / t,
        t,
    )


def evaluate(d_gt: DepthMap, d: DepthMap) -> MetricsReport:
    """Report for a single image pair."""
    return finalize(pixel_terms(d_gt, d))


def rms(d_gt: DepthMap, d: DepthMap) -> float:
    return evaluate(d_gt, d).rms
