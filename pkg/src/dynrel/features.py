"""Assemble per-triple network inputs from the three feature sources."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .content import ContentFeatures
from .dataio import LeakageError, PageviewTable, build_time_series, feature_end_period, period_label
from .graph import GraphFeatures


@dataclass
class TripleBatch:
    sources: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    periods: np.ndarray
    prob: np.ndarray | None = None
    words: sp.csr_matrix | None = None  # (3N, |V|), rows ordered s..., +..., -...
    links: sp.csr_matrix | None = None
    h_pos: np.ndarray | None = None  # (N, bins)
    h_neg: np.ndarray | None = None
    series: np.ndarray | None = None  # (3N, D, T)

    def __len__(self) -> int:
        return len(self.sources)


class FeatureStore:
    """Caches content rows, histograms and normalized series.

    ``max_feature_period`` caps the last month any time series may include;
    asking for a later one raises ``LeakageError``.
    """

    def __init__(self, content: ContentFeatures | None = None, graph: GraphFeatures | None = None,
                 pageviews: PageviewTable | None = None, length: int = 27,
                 max_feature_period: int | None = None, dtype=np.float64):
        self.content, self.graph, self.pageviews = content, graph, pageviews
        self.length = length
        self.max_feature_period = max_feature_period
        self.dtype = dtype
        self._series: dict[tuple[int, int], np.ndarray] = {}

    def series(self, entity: int, end_period: int) -> np.ndarray:
        if self.max_feature_period is not None and end_period > self.max_feature_period:
            raise LeakageError(f"time series ending {period_label(end_period)} is past the feature "
                               f"cut-off {period_label(self.max_feature_period)}")
        key = (entity, end_period)
        x = self._series.get(key)
        if x is None:
            x = build_time_series(self.pageviews, entity, end_period, self.length).values.astype(self.dtype)
            self._series[key] = x
        return x

    def batch(self, sources: Sequence, pos: Sequence, neg: Sequence, periods: Sequence[int],
              prob: Sequence[float] | None = None,
              channels: Sequence[str] = ("content", "graph", "time")) -> TripleBatch:
        b = TripleBatch(np.asarray(sources), np.asarray(pos), np.asarray(neg),
                        np.asarray(periods, dtype=np.int64),
                        None if prob is None else np.asarray(prob, dtype=self.dtype))
        stacked = list(sources) + list(pos) + list(neg)
        if "content" in channels and self.content is not None:
            b.words, b.links = self.content.batch(stacked)
        if "graph" in channels and self.graph is not None:
            b.h_pos, b.h_neg = self.graph.batch(sources, pos, neg)
            b.h_pos = b.h_pos.astype(self.dtype)
            b.h_neg = b.h_neg.astype(self.dtype)
        if "time" in channels and self.pageviews is not None:
            ends = [feature_end_period(int(p)) for p in periods] * 3
            b.series = np.stack([self.series(e, t) for e, t in zip(stacked, ends)])
        return b

    def triples(self, triples, channels=("content", "graph", "time")) -> TripleBatch:
        return self.batch([t.source for t in triples], [t.pos for t in triples],
                          [t.neg for t in triples], [t.period for t in triples],
                          [t.prob for t in triples], channels)
