"""Unsupervised reference measures: link-overlap relatedness and embedding cosine."""

from __future__ import annotations

import logging
import math
from typing import Iterable, Sequence

from .graph import GraphEmbedding, LinkGraph, cosine
from .ranker import RankedList

logger = logging.getLogger(__name__)


class InLinkIndex:
    """In-linking entity sets plus the total entity count ``num_entities``."""

    def __init__(self, graph: LinkGraph):
        self.inlinks: dict[int, frozenset] = {n: frozenset(graph.in_links.get(n, ())) for n in graph.nodes}
        self.num_entities = len(graph.nodes)

    def __getitem__(self, node: int) -> frozenset:
        return self.inlinks.get(node, frozenset())


def wlm_counts(size_a: int, size_b: int, overlap: int, total: int) -> float:
    """Link-based measure from set sizes, natural logs, clamped to [0, 1]."""
    if total < 2:
        raise ValueError("need at least 2 entities")
    if overlap == 0 or size_a == 0 or size_b == 0:
        return 0.0
    big, small = max(size_a, size_b), min(size_a, size_b)
    num = math.log(big) - math.log(overlap)
    den = math.log(total) - math.log(small)
    if num == 0.0:
        return 1.0
    if den <= 0.0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - num / den))


def wlm(a: int, b: int, index: InLinkIndex) -> float:
    """Symmetric relatedness from shared in-links; 0 if either has none."""
    A, B = index[a], index[b]
    if not A or not B:
        logger.debug("entity without in-links in wlm(%s, %s)", a, b)
        return 0.0
    return wlm_counts(len(A), len(B), len(A & B), index.num_entities)


def deepwalk_relatedness(embedding: GraphEmbedding, a: int, b: int) -> float | None:
    """Cosine of node vectors; ``None`` if either node is not embedded."""
    if a not in embedding.index or b not in embedding.index:
        return None
    return cosine(embedding.vector(a), embedding.vector(b))


def _ranked(source, period, scored: Iterable[tuple[int, float]]) -> RankedList:
    items = sorted(scored, key=lambda cs: (-cs[1], cs[0]))
    return RankedList(source, period, items)


def rank_by_wlm(index: InLinkIndex, source: int, candidates: Sequence[int], period: int = 0) -> RankedList:
    return _ranked(source, period, [(c, wlm(source, c, index)) for c in dict.fromkeys(candidates)])


def rank_by_deepwalk(embedding: GraphEmbedding, source: int, candidates: Sequence[int],
                     period: int = 0) -> RankedList:
    """Candidates missing from the embedding are placed last with score -1."""
    scored = []
    for c in dict.fromkeys(candidates):
        v = deepwalk_relatedness(embedding, source, c)
        scored.append((c, -1.0 if v is None else v))
    return _ranked(source, period, scored)
