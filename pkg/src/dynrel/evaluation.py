"""Ranking metrics and proxy ground truth from navigation counts."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .dataio import DEFAULT_MIN_COUNT, DEFAULT_TOP_N, ranked_targets

logger = logging.getLogger(__name__)

PEARSON_CUTOFFS = (10, 30, 50, None)
NDCG_CUTOFFS = (3, 10, 20)


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation; ``None`` when either side has zero variance."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("pearson needs two 1-D arrays of equal length")
    if a.size < 2:
        raise ValueError("pearson needs at least 2 observations")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        return None
    r = float(np.dot(da, db) / (sa * sb))
    return min(1.0, max(-1.0, r))


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson on average-ranked data."""
    return pearson(stats.rankdata(x, method="average"), stats.rankdata(y, method="average"))


def pearson_at_k(predicted: Sequence[float], truth: Sequence[float], k: int | None) -> float | None:
    """Pearson over the ``k`` items ranked highest by ``truth``.

    Ties in ``truth`` are broken by position. ``k`` larger than the list is
    clipped to its length; ``None`` means all items.
    """
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    n = t.size
    if k is None or k >= n:
        return pearson(p, t)
    if k < 2:
        raise ValueError("k must be at least 2")
    top = np.lexsort((np.arange(n), -t))[:k]
    return pearson(p[top], t[top])


def ndcg_at_k(order: Sequence, grades: Mapping, k: int, gain: str = "exp",
              grade_cap: float | None = None) -> float:
    """NDCG@k of a predicted ``order`` against graded relevance.

    ``grades`` maps item to a non-negative grade (missing items count 0).
    Gain is ``2**g - 1`` (``exp``) or ``g`` (``linear``); the discount is
    ``log2(rank + 1)``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if gain not in ("exp", "linear"):
        raise ValueError(f"unknown gain {gain!r}")
    vals = np.asarray(list(grades.values()), dtype=np.float64)
    if np.any(vals < 0):
        raise ValueError("grades must be non-negative")

    def g(v):
        v = np.asarray(v, dtype=np.float64)
        if grade_cap is not None:
            v = np.minimum(v, grade_cap)
        return np.expm1(v * math.log(2.0)) if gain == "exp" else v

    ideal = np.sort(vals)[::-1][:k]
    disc = 1.0 / np.log2(np.arange(2, k + 2))
    idcg = float(np.dot(g(ideal), disc[:ideal.size]))
    if idcg == 0.0:
        return 0.0
    got = np.asarray([grades.get(item, 0.0) for item in list(order)[:k]], dtype=np.float64)
    dcg = float(np.dot(g(got), disc[:got.size]))
    return min(1.0, dcg / idcg)


# -- proxy ground truth -------------------------------------------------------

@dataclass
class GroundTruth:
    """Per source: candidates by descending navigation count, with grades."""

    ranked: dict = field(default_factory=dict)  # source -> [(target, count)]

    def grades(self, source) -> dict:
        items = self.ranked[source]
        n = len(items)
        return {t: n - i for i, (t, _) in enumerate(items)}

    def candidates(self, source) -> list:
        return [t for t, _ in self.ranked[source]]

    def sources(self) -> list:
        return sorted(self.ranked)


def build_proxy_groundtruth(records, seeds: Iterable, period: int, top_n: int = DEFAULT_TOP_N,
                            min_count: int = DEFAULT_MIN_COUNT) -> GroundTruth:
    """Grade the top navigated targets of each seed by reversed rank.

    The candidate at truth rank ``i`` of ``n`` gets grade ``n - i + 1``;
    count ties are broken by target id.
    """
    gt = GroundTruth()
    for s in seeds:
        ranked = ranked_targets(s, records, min_count, top_n, period)
        if not ranked:
            logger.warning("seed %s has no navigations at period %s; excluded", s, period)
            continue
        gt.ranked[s] = ranked
    return gt


# -- reports ------------------------------------------------------------------

def _metric_names() -> list[tuple[str, int | None]]:
    return ([("pearson", k) for k in PEARSON_CUTOFFS] + [("spearman", None)]
            + [("ndcg", k) for k in NDCG_CUTOFFS])


def _label(metric: str, cutoff: int | None) -> str:
    return metric if cutoff is None else f"{metric}@{cutoff}"


def source_metrics(predicted_order: Sequence, scores: Mapping, truth: GroundTruth, source,
                   gain: str = "exp", grade_cap: float | None = None) -> dict:
    """Metrics for one source over the ground-truth candidates.

    Candidates missing from ``scores`` get the lowest predicted score.
    """
    grades = truth.grades(source)
    cands = truth.candidates(source)
    floor = min(scores.values(), default=0.0) - 1.0
    pred = np.asarray([scores.get(c, floor) for c in cands], dtype=np.float64)
    tru = np.asarray([grades[c] for c in cands], dtype=np.float64)
    out = {}
    for metric, k in _metric_names():
        key = _label(metric, k)
        if metric == "pearson":
            out[key] = pearson_at_k(pred, tru, k) if len(cands) >= 2 else None
        elif metric == "spearman":
            out[key] = spearman(pred, tru) if len(cands) >= 2 else None
        else:
            order = [c for c in predicted_order if c in grades]
            order += [c for c in cands if c not in set(order)]
            out[key] = ndcg_at_k(order, grades, k, gain, grade_cap)
    return out


@dataclass
class MetricReport:
    per_source: dict = field(default_factory=dict)  # source -> {label: value | None}

    def macro(self) -> dict:
        """label -> (mean over defined values or None, number defined)."""
        out = {}
        for metric, k in _metric_names():
            key = _label(metric, k)
            vals = [m[key] for m in self.per_source.values() if m.get(key) is not None]
            out[key] = (float(np.mean(vals)) if vals else None, len(vals))
        return out

    def table(self) -> str:
        lines = ["metric\tcutoff\tvalue\tn_defined"]
        for metric, k in _metric_names():
            value, n = self.macro()[_label(metric, k)]
            cut = "all" if k is None else str(k)
            lines.append(f"{metric}\t{cut}\t{'nan' if value is None else repr(value)}\t{n}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        macro = self.macro()
        parts = [f"sources: {len(self.per_source)}"]
        for key, (value, n) in macro.items():
            if value is None:
                parts.append(f"{key:>12}: undefined")
            elif key.startswith("ndcg"):
                parts.append(f"{key:>12}: {value:.4f} (n={n})")
            else:
                parts.append(f"{key:>12}: {100 * value:.2f} x100 (n={n})")
        return "\n".join(parts) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.table())

    def vector(self, key: str) -> dict:
        return {s: m[key] for s, m in self.per_source.items() if m.get(key) is not None}


def evaluate_rankings(rankings: Mapping, truth: GroundTruth, gain: str = "exp",
                      grade_cap: float | None = None) -> MetricReport:
    """``rankings`` maps source to ``[(candidate, score)]`` in predicted order."""
    report = MetricReport()
    for s in truth.sources():
        if s not in rankings:
            logger.warning("no ranking for source %s; excluded", s)
            continue
        items = list(rankings[s])
        report.per_source[s] = source_metrics([c for c, _ in items], dict(items), truth, s,
                                              gain, grade_cap)
    return report


def paired_ttest(a: MetricReport, b: MetricReport, key: str) -> tuple[float, float, int]:
    """Paired t-test on sources where both reports define ``key``.

    Returns ``(t, p, n)``.
    """
    va, vb = a.vector(key), b.vector(key)
    common = sorted(set(va) & set(vb))
    if len(common) < 2:
        raise ValueError("paired t-test needs at least 2 shared sources")
    res = stats.ttest_rel([va[s] for s in common], [vb[s] for s in common])
    return float(res.statistic), float(res.pvalue), len(common)


def write_sweep(rows: Iterable[tuple[float, MetricReport]], path, param: str = "alpha") -> None:
    """Plot-ready dump: one line per (parameter value, metric)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{param}\tmetric\tvalue\tn_defined\n")
        for value, report in rows:
            for key, (v, n) in report.macro().items():
                fh.write(f"{value!r}\t{key}\t{'nan' if v is None else repr(v)}\t{n}\n")
