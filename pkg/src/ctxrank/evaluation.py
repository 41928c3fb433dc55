"""Calibration and normalized-entropy metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadEdges, DegenerateLabels, DimensionMismatch, ZeroLabelMass

EPS = 1e-12


def _pair(predictions, labels):
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise DimensionMismatch(f"{p.size} predictions vs {y.size} labels")
    return p, y


def calibration(predictions, labels) -> float:
    """Sum of predictions over sum of labels; 1.0 means unbiased."""
    p, y = _pair(predictions, labels)
    if p.size == 0:
        raise ZeroLabelMass("no samples")
    denom = math.fsum(y)
    if denom <= 0:
        raise ZeroLabelMass("labels sum to zero; calibration undefined")
    return math.fsum(p) / denom


def default_bucket_edges(n_buckets: int = 40) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n_buckets + 1)


@dataclass
class CalibrationReport:
    edges: list
    counts: list
    sum_pred: list
    sum_label: list
    calibration: list  # None where the bucket has no positive labels
    overall: float | None

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def populated(self, min_count: int = 1) -> list[int]:
        return [
            i for i, (n, c) in enumerate(zip(self.counts, self.calibration))
            if n >= min_count and c is not None
        ]

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "buckets": [
                {
                    "low": self.edges[i],
                    "high": self.edges[i + 1],
                    "count": self.counts[i],
                    "sum_prediction": self.sum_pred[i],
                    "sum_label": self.sum_label[i],
                    "calibration": self.calibration[i],
                }
                for i in range(len(self.counts))
            ],
            "overall": self.overall,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket_low", "bucket_high", "count", "calibration"])
        for i, n in enumerate(self.counts):
            c = self.calibration[i]
            w.writerow([repr(self.edges[i]), repr(self.edges[i + 1]), n, "" if c is None else repr(c)])
        return buf.getvalue()


def calibration_by_bucket(predictions, labels, similarity, edges=None) -> CalibrationReport:
    """Bucket impressions by cached similarity score and compute calibration per bucket.

    Buckets are half-open ``[lo, hi)`` except the last, which is closed.
    """
    p, y = _pair(predictions, labels)
    s = np.asarray(similarity, dtype=np.float64).ravel()
    if s.shape != p.shape:
        raise DimensionMismatch("similarity scores do not match predictions")
    edges = default_bucket_edges() if edges is None else np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise BadEdges("bucket edges must be strictly increasing with at least two entries")
    if edges[0] > -1.0 or edges[-1] < 1.0:
        raise BadEdges("bucket edges must cover [-1, 1]")
    if s.size and (s.min() < edges[0] or s.max() > edges[-1]):
        raise BadEdges("similarity scores fall outside the bucket edges")

    n_b = edges.size - 1
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_b - 1)
    counts, sp, sy, cal = [], [], [], []
    for b in range(n_b):
        mask = idx == b
        n = int(mask.sum())
        ps = math.fsum(p[mask])
        ys = math.fsum(y[mask])
        counts.append(n)
        sp.append(ps)
        sy.append(ys)
        cal.append(ps / ys if ys > 0 else None)
    total_y = math.fsum(sy)
    overall = math.fsum(sp) / total_y if total_y > 0 else None
    return CalibrationReport([float(e) for e in edges], counts, sp, sy, cal, overall)


def entropy(rate: float) -> float:
    return -(rate * math.log(rate) + (1.0 - rate) * math.log(1.0 - rate))


def normalized_entropy(predictions, labels, background_ctr: float | None = None) -> float:
    """Mean log loss divided by the entropy of the background rate.

    The background rate defaults to the mean label of the evaluated set.
    """
    p, y = _pair(predictions, labels)
    c = float(np.mean(y)) if background_ctr is None else float(background_ctr)
    if not 0.0 < c < 1.0:
        raise DegenerateLabels("labels contain a single class; NE undefined")
    p = np.clip(p, EPS, 1.0 - EPS)
    ll = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(ll / entropy(c))


@dataclass
class NEReport:
    name: str
    ne: float
    background_ctr: float
    count: int
    trajectory: list = field(default_factory=list)
    baseline_name: str | None = None
    improvement_pct: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ne": self.ne,
            "background_ctr": self.background_ctr,
            "count": self.count,
            "trajectory": [dict(t) for t in self.trajectory],
            "baseline": self.baseline_name,
            "improvement_pct": self.improvement_pct,
        }


def ne_report(name, predictions, labels, trajectory=(), baseline: NEReport | None = None) -> NEReport:
    p, y = _pair(predictions, labels)
    ne = normalized_entropy(p, y)
    rep = NEReport(name, ne, float(np.mean(y)), int(y.size), list(trajectory))
    if baseline is not None:
        rep.baseline_name = baseline.name
        rep.improvement_pct = percent_improvement(baseline.ne, ne)
    return rep


def percent_improvement(baseline_ne: float, model_ne: float) -> float:
    """Relative NE reduction in percent; positive means the model is better."""
    return 100.0 * (baseline_ne - model_ne) / baseline_ne
