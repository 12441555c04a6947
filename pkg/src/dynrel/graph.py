"""Graph channel: link graph, random-walk skip-gram embeddings, matching histograms."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .nn import Parameter, Sequential, mlp, sigmoid

logger = logging.getLogger(__name__)

DEFAULT_BINS = 30
EXACT_MATCH_TOL = 1e-12


class LinkGraph:
    """Directed graph over entity ids; out-edges are the link profiles."""

    def __init__(self, nodes: Iterable[int], edges: Iterable[tuple[int, int]]):
        self.nodes: list[int] = sorted(set(nodes))
        known = set(self.nodes)
        out: dict[int, list[int]] = {n: [] for n in self.nodes}
        seen = set()
        for a, b in edges:
            if a == b or (a, b) in seen or a not in known or b not in known:
                continue
            seen.add((a, b))
            out[a].append(b)
        self.out_links = out
        self.in_links: dict[int, list[int]] = {n: [] for n in self.nodes}
        for a in self.nodes:
            for b in out[a]:
                self.in_links[b].append(a)

    @classmethod
    def from_corpus(cls, corpus) -> "LinkGraph":
        return cls(corpus.ids(), ((e, t) for e in corpus.ids() for t in corpus[e].links))

    @property
    def num_edges(self) -> int:
        return sum(len(v) for v in self.out_links.values())

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.out_links.get(a, ())

    def bag(self, node: int, direction: str = "in") -> list[int]:
        if direction == "in":
            return self.in_links.get(node, [])
        if direction == "out":
            return self.out_links.get(node, [])
        raise ValueError(f"unknown bag direction {direction!r}")


def _walk(graph: LinkGraph, start: int, length: int, rng: np.random.Generator) -> list[int]:
    walk = [start]
    while len(walk) < length:
        nbrs = graph.out_links[walk[-1]]
        if not nbrs:
            break
        walk.append(nbrs[int(rng.integers(len(nbrs)))])
    return walk


def random_walks(graph: LinkGraph, walks_per_node: int = 10, walk_length: int = 40,
                 seed: int = 0, threads: int = 1) -> list[list[int]]:
    """Uniform random walks; a walk that reaches a sink stops early.

    Each start node gets its own rng stream, so the corpus is identical for
    any thread count. Walks are ordered round by round, nodes by id.
    """
    if not graph.nodes:
        raise ValueError("graph is empty")
    streams = np.random.SeedSequence(seed).spawn(len(graph.nodes))

    def node_walks(i: int) -> list[list[int]]:
        rng = np.random.default_rng(streams[i])
        return [_walk(graph, graph.nodes[i], walk_length, rng) for _ in range(walks_per_node)]

    idx = range(len(graph.nodes))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_node = list(pool.map(node_walks, idx))
    else:
        per_node = [node_walks(i) for i in idx]
    return [per_node[i][r] for r in range(walks_per_node) for i in idx]


@dataclass
class GraphEmbedding:
    ids: list[int]
    vectors: np.ndarray
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.index = {n: i for i, n in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, node) -> bool:
        return node in self.index

    def vector(self, node: int) -> np.ndarray:
        return self.vectors[self.index[node]]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{len(self.ids)} {self.dim}\n")
            for n, row in zip(self.ids, self.vectors):
                fh.write(str(n) + " " + " ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "GraphEmbedding":
        with open(path, encoding="utf-8") as fh:
            n, d = map(int, fh.readline().split())
            ids, rows = [], []
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != d + 1:
                    raise ValueError(f"embedding row for {parts[0]} has {len(parts) - 1} values, expected {d}")
                ids.append(int(parts[0]))
                rows.append([float(v) for v in parts[1:]])
        if len(ids) != n:
            raise ValueError(f"embedding header says {n} rows, found {len(ids)}")
        return cls(ids, np.asarray(rows, dtype=np.float64).reshape(n, d))


def _scatter_add(target: np.ndarray, idx: np.ndarray, values: np.ndarray) -> None:
    m = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))),
                      shape=(target.shape[0], idx.size))
    target += m @ values


def _context_pairs(walks: Sequence[Sequence[int]], index: Mapping[int, int],
                   window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for walk in walks:
        w = np.fromiter((index[n] for n in walk), dtype=np.int64, count=len(walk))
        for off in range(1, window + 1):
            if off >= len(w):
                break
            centers += [w[:-off], w[off:]]
            contexts += [w[off:], w[:-off]]
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_skipgram(walks: Sequence[Sequence[int]], dim: int = 128, window: int = 5,
                   negatives: int = 5, epochs: int = 1, lr: float = 0.025, seed: int = 0,
                   batch_size: int = 256, nodes: Sequence[int] | None = None) -> GraphEmbedding:
    """Skip-gram with negative sampling over walk windows.

    Mini-batch SGD with a linearly decaying learning rate and the usual
    unigram^0.75 noise distribution. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    ids = sorted(set(nodes) if nodes is not None else {n for w in walks for n in w})
    index = {n: i for i, n in enumerate(ids)}
    V = len(ids)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    centers, contexts = _context_pairs(walks, index, window)
    emb = GraphEmbedding(ids, w_in)
    if centers.size == 0 or V < 2:
        return emb
    freq = np.bincount(np.concatenate([np.fromiter((index[n] for n in w), np.int64) for w in walks]),
                       minlength=V).astype(np.float64) ** 0.75
    noise = freq / freq.sum()
    cdf = np.cumsum(noise)
    P = centers.size
    total_steps = epochs * ((P + batch_size - 1) // batch_size)
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(P)
        epoch_loss = 0.0
        for start in range(0, P, batch_size):
            b = perm[start:start + batch_size]
            c, o = centers[b], contexts[b]
            neg = np.minimum(np.searchsorted(cdf, rng.random((b.size, negatives))), V - 1)
            alpha = lr * max(1.0 - step / total_steps, 1e-4)
            step += 1
            vc, uo, un = w_in[c], w_out[o], w_out[neg]
            s_pos = sigmoid(np.einsum("bd,bd->b", vc, uo))
            s_neg = sigmoid(np.einsum("bkd,bd->bk", un, vc))
            epoch_loss -= np.sum(np.log(s_pos + 1e-12)) + np.sum(np.log(1.0 - s_neg + 1e-12))
            g_pos = s_pos - 1.0
            g_vc = g_pos[:, None] * uo + np.einsum("bk,bkd->bd", s_neg, un)
            _scatter_add(w_out, o, -alpha * g_pos[:, None] * vc)
            _scatter_add(w_out, neg.ravel(), -alpha * (s_neg[:, :, None] * vc[:, None, :]).reshape(-1, dim))
            _scatter_add(w_in, c, -alpha * g_vc)
        emb.losses.append(epoch_loss / P)
        logger.debug("skip-gram epoch loss %.4f", emb.losses[-1])
    return emb


def deepwalk(graph: LinkGraph, dim: int = 128, walks_per_node: int = 10, walk_length: int = 40,
             window: int = 5, negatives: int = 5, epochs: int = 1, lr: float = 0.025,
             seed: int = 0, threads: int = 1) -> GraphEmbedding:
    walks = random_walks(graph, walks_per_node, walk_length, seed, threads)
    return train_skipgram(walks, dim, window, negatives, epochs, lr, seed, nodes=graph.nodes)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


# -- matching histograms ----------------------------------------------------

@dataclass
class MatchingHistogram:
    values: np.ndarray  # log(1 + count) per bin; last bin is the exact match
    empty: bool = False

    @property
    def counts(self) -> np.ndarray:
        return np.expm1(self.values)


def histogram_bin(cos: float | np.ndarray, bins: int) -> np.ndarray:
    """Bins 0..B-2 split [-1, 1) evenly; bin B-1 holds exact matches (cos = 1)."""
    cos = np.clip(np.asarray(cos, dtype=np.float64), -1.0, 1.0)
    idx = np.floor((cos + 1.0) / 2.0 * (bins - 1)).astype(np.int64)
    idx = np.minimum(idx, bins - 2)
    return np.where(cos >= 1.0 - EXACT_MATCH_TOL, bins - 1, idx)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def matching_histogram(embedding: GraphEmbedding, bag_s: Sequence[int], bag_t: Sequence[int],
                       bins: int = DEFAULT_BINS) -> MatchingHistogram:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    bs = [n for n in bag_s if n in embedding]
    bt = [n for n in bag_t if n in embedding]
    if not bs or not bt:
        return MatchingHistogram(np.zeros(bins), empty=True)
    a = _unit_rows(embedding.vectors[[embedding.index[n] for n in bs]])
    b = _unit_rows(embedding.vectors[[embedding.index[n] for n in bt]])
    cos = np.clip(a @ b.T, -1.0, 1.0)
    idx = histogram_bin(cos, bins)
    same = np.asarray(bs)[:, None] == np.asarray(bt)[None, :]
    idx[same] = bins - 1
    counts = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    return MatchingHistogram(np.log1p(counts))


class GraphFeatures:
    """Cached matching histograms between a source bag and target bags."""

    def __init__(self, graph: LinkGraph, embedding: GraphEmbedding, bins: int = DEFAULT_BINS,
                 direction: str = "in"):
        self.graph, self.embedding = graph, embedding
        self.bins, self.direction = bins, direction
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def histogram(self, s: int, t: int) -> np.ndarray:
        key = (s, t)
        h = self._cache.get(key)
        if h is None:
            h = matching_histogram(self.embedding, self.graph.bag(s, self.direction),
                                   self.graph.bag(t, self.direction), self.bins).values
            self._cache[key] = h
        return h

    def batch(self, sources: Sequence, pos: Sequence, neg: Sequence) -> tuple[np.ndarray, np.ndarray]:
        hp = np.stack([self.histogram(s, p) for s, p in zip(sources, pos)])
        hn = np.stack([self.histogram(s, n) for s, n in zip(sources, neg)])
        return hp, hn


class GraphNet:
    """phi_graph: MLP over the ordered pair of histograms [h(s,+); h(s,-)]."""

    def __init__(self, bins: int = DEFAULT_BINS, hidden: Sequence[int] = (128, 128),
                 dropout: float = 0.0, rng: np.random.Generator | None = None, dtype=np.float64):
        self.bins = bins
        self.scorer: Sequential = mlp(2 * bins, hidden, dropout, rng, dtype, name="graph.mlp")

    def forward(self, h_pos: np.ndarray, h_neg: np.ndarray) -> np.ndarray:
        return self.scorer.forward(np.concatenate([h_pos, h_neg], axis=1))[:, 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.scorer.backward(grad[:, None])
        return g[:, :self.bins], g[:, self.bins:]

    def parameters(self) -> list[Parameter]:
        return self.scorer.parameters()

    def buffers(self) -> dict:
        return self.scorer.buffers()

    def train(self, mode: bool = True) -> None:
        self.scorer.train(mode)

    def output_head(self):
        return self.scorer.layers[-1]
