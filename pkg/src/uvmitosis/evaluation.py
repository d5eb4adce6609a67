"""Centroid matching and precision / recall / F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Point = tuple[float, float]


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    unmatched_predictions: list[int]
    unmatched_truths: list[int]

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_predictions)

    @property
    def fn(self) -> int:
        return len(self.unmatched_truths)


def _distances(predictions: Sequence[Point], truths: Sequence[Point]) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truths, dtype=np.float64).reshape(-1, 2)
    return np.sqrt(((p[:, None, :] - t[None, :, :]) ** 2).sum(-1))


def _result(pairs, n_pred: int, n_truth: int) -> MatchResult:
    pairs = sorted(pairs)
    used_p = {i for i, _, _ in pairs}
    used_t = {j for _, j, _ in pairs}
    return MatchResult(
        pairs,
        [i for i in range(n_pred) if i not in used_p],
        [j for j in range(n_truth) if j not in used_t],
    )


def match_detections(
    predictions: Sequence[Point],
    truths: Sequence[Point],
    radius: float = 30.0,
    method: str = "greedy",
) -> MatchResult:
    """One-to-one matching of predicted to true centroids within ``radius``.

    ``greedy`` takes candidate pairs in ascending distance, ties broken by
    (prediction index, truth index). ``optimal`` maximises the number of
    matches first and total distance second.
    """
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    n_p, n_t = len(predictions), len(truths)
    if n_p == 0 or n_t == 0:
        return _result([], n_p, n_t)
    d = _distances(predictions, truths)
    if method == "greedy":
        ii, jj = np.nonzero(d <= radius)
        order = sorted(zip(d[ii, jj].tolist(), ii.tolist(), jj.tolist()))
        used_p, used_t, pairs = set(), set(), []
        for dist, i, j in order:
            if i in used_p or j in used_t:
                continue
            used_p.add(i)
            used_t.add(j)
            pairs.append((i, j, dist))
        return _result(pairs, n_p, n_t)
    if method == "optimal":
        within = d <= radius
        # each match is worth more than any total of in-radius distances
        big = 1.0 + radius * (min(n_p, n_t) + 1)
        cost = np.where(within, d - big, 0.0)
        rows, cols = linear_sum_assignment(cost)
        pairs = [(int(i), int(j), float(d[i, j])) for i, j in zip(rows, cols) if within[i, j]]
        return _result(pairs, n_p, n_t)
    raise ValueError(f"unknown matching method {method!r}")


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)

    def __post_init__(self):
        self.precision = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        self.recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        pr = self.precision + self.recall
        self.f1 = 2 * self.precision * self.recall / pr if pr else 0.0

    def to_json(self) -> dict:
        return asdict(self)


def compute_metrics(matches: Sequence[MatchResult]) -> MetricsReport:
    """Micro-average: pool TP/FP/FN over all images, then apply the formulas."""
    return MetricsReport(
        tp=sum(m.tp for m in matches),
        fp=sum(m.fp for m in matches),
        fn=sum(m.fn for m in matches),
    )


def compute_macro_metrics(matches: Sequence[MatchResult]) -> dict:
    """Per-image precision/recall/F1 averaged over images.

    Images with no truths and no predictions have nothing to score and are
    left out of the mean; ``images`` counts the images that were averaged.
    """
    reports = [MetricsReport(m.tp, m.fp, m.fn) for m in matches if m.tp + m.fp + m.fn]
    if not reports:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0, "images": 0}
    return {
        "precision": float(np.mean([r.precision for r in reports])),
        "recall": float(np.mean([r.recall for r in reports])),
        "f1": float(np.mean([r.f1 for r in reports])),
        "images": len(reports),
    }


def check_report(report: MetricsReport, n_predictions: int | None = None, n_truths: int | None = None,
                 tol: float = 1e-12) -> None:
    """Raise if a report breaks the metric identities."""
    p, r = report.precision, report.recall
    expected = 2 * p * r / (p + r) if p + r else 0.0
    if abs(report.f1 - expected) > tol:
        raise AssertionError(f"f1 {report.f1} is not the harmonic mean of P={p}, R={r}")
    if n_predictions is not None and report.tp + report.fp != n_predictions:
        raise AssertionError(f"tp+fp={report.tp + report.fp} but there are {n_predictions} predictions")
    if n_truths is not None and report.tp + report.fn != n_truths:
        raise AssertionError(f"tp+fn={report.tp + report.fn} but there are {n_truths} truths")


def format_table(micro: MetricsReport, macro: dict | None = None, radius: float | None = None) -> str:
    lines = []
    if radius is not None:
        lines.append(f"match radius: {radius:g} px")
    lines.append(f"{'aggregation':<12}{'precision':>10}{'recall':>10}{'f1':>10}")
    lines.append(f"{'micro':<12}{micro.precision:>10.4f}{micro.recall:>10.4f}{micro.f1:>10.4f}")
    if macro is not None:
        lines.append(f"{'macro':<12}{macro['precision']:>10.4f}{macro['recall']:>10.4f}{macro['f1']:>10.4f}")
    lines.append(f"tp={micro.tp} fp={micro.fp} fn={micro.fn}")
    return "\n".join(lines)
