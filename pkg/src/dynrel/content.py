"""Content channel: trigraph word hashing, weighted bag encoder, triple scorer."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .nn import Layer, Parameter, Sequential, glorot_uniform, mlp

BOUNDARY = "#"
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def hash_term(term: str) -> list[str]:
    """Boundary-marked character trigraphs: ``cat`` -> ``#ca, cat, at#``."""
    if not term:
        return []
    s = f"{BOUNDARY}{term}{BOUNDARY}"
    return [s[i:i + 3] for i in range(len(s) - 2)]


def trigraphs(tokens: Iterable[str]) -> list[str]:
    return [g for tok in tokens for g in hash_term(tok)]


class TrigraphVocabulary:
    def __init__(self, grams: Sequence[str] = ()):
        self.index: dict[str, int] = {}
        for g in grams:
            self.index.setdefault(g, len(self.index))

    @classmethod
    def build(cls, texts: Iterable[str]) -> "TrigraphVocabulary":
        grams = set()
        for text in texts:
            grams.update(trigraphs(tokenize(text)))
        return cls(sorted(grams))

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, g: str) -> bool:
        return g in self.index

    def lookup(self, grams: Iterable[str]) -> list[int]:
        return [self.index[g] for g in grams if g in self.index]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for g, i in sorted(self.index.items(), key=lambda kv: kv[1]):
                fh.write(f"{g}\t{i}\n")

    @classmethod
    def load(cls, path) -> "TrigraphVocabulary":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                g, i = line.rstrip("\n").split("\t")
                pairs.append((int(i), g))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError("vocabulary indices must be 0..n-1")
        return cls([g for _, g in pairs])


def bag_of_trigraphs(text: str, vocab: TrigraphVocabulary) -> Counter:
    return Counter(vocab.lookup(trigraphs(tokenize(text))))


def idf_weights(vocab: TrigraphVocabulary, documents: Iterable[str]) -> np.ndarray:
    docs = list(documents)
    df = np.zeros(len(vocab))
    for d in docs:
        for idx in set(vocab.lookup(trigraphs(tokenize(d)))):
            df[idx] += 1
    return np.log((1 + len(docs)) / (1 + df)) + 1.0


class ContentEncoder(Layer):
    """Weighted element-wise sum of trigraph embeddings.

    A batch of bags is a sparse ``(n, |V|)`` count matrix ``S``; the encoding
    is ``(S * w) @ E``, so the term weights ``w`` and the table ``E`` both get
    scatter-added gradients.
    """

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator | None = None,
                 term_weights: np.ndarray | None = None, dtype=np.float64, name: str = "content.encoder"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.table = Parameter(glorot_uniform((vocab_size, dim), rng, dtype=dtype), f"{name}.table")
        w = np.ones(vocab_size, dtype=dtype) if term_weights is None else np.asarray(term_weights, dtype=dtype)
        self.term_weight = Parameter(w.copy(), f"{name}.term_weight")

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    def forward(self, counts: sp.spmatrix) -> np.ndarray:
        coo = sp.coo_matrix(counts)
        self._cache = coo
        weighted = sp.csr_matrix((coo.data * self.term_weight.value[coo.col], (coo.row, coo.col)),
                                 shape=coo.shape)
        return np.asarray(weighted @ self.table.value)

    def backward(self, grad: np.ndarray) -> None:
        coo = self._cache
        weighted = sp.csr_matrix((coo.data * self.term_weight.value[coo.col], (coo.row, coo.col)),
                                 shape=coo.shape)
        self.table.grad += np.asarray(weighted.T @ grad)
        per_entry = coo.data * np.einsum("ij,ij->i", grad[coo.row], self.table.value[coo.col])
        self.term_weight.grad += np.bincount(coo.col, weights=per_entry, minlength=self.vocab_size)
        return None

    def parameters(self):
        return [self.table, self.term_weight]


def counts_matrix(bags: Sequence[Mapping[int, float]], vocab_size: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, bag in enumerate(bags):
        for c, v in sorted(bag.items()):
            rows.append(r)
            cols.append(c)
            vals.append(v)
    return sp.csr_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)),
                         shape=(len(bags), vocab_size))


def encode_text(encoder: ContentEncoder, vocab: TrigraphVocabulary,
                tokens: Sequence[str]) -> tuple[np.ndarray, bool]:
    """Encode one token list; returns ``(vector, all_oov)``."""
    bag = Counter(vocab.lookup(trigraphs(tokens)))
    if not bag:
        return np.zeros(encoder.dim), True
    return encoder.forward(counts_matrix([bag], encoder.vocab_size))[0], False


def link_text(entity, titles: Mapping[int, str]) -> str:
    """Surface forms of the linked entities, as words."""
    return " ".join(titles[t].replace("_", " ") for t in entity.links if t in titles)


def encode_entity_content(encoder: ContentEncoder, vocab: TrigraphVocabulary, entity,
                          titles: Mapping[int, str]) -> np.ndarray:
    """Concatenation of the abstract encoding and the linked-titles encoding."""
    word, _ = encode_text(encoder, vocab, tokenize(entity.abstract))
    ent, _ = encode_text(encoder, vocab, tokenize(link_text(entity, titles)))
    return np.concatenate([word, ent])


class ContentFeatures:
    """Precomputed trigraph count rows per entity for both channels."""

    def __init__(self, corpus, vocab: TrigraphVocabulary):
        titles = {eid: corpus[eid].title for eid in corpus.ids()}
        ids = corpus.ids()
        self.row = {eid: i for i, eid in enumerate(ids)}
        self.vocab_size = len(vocab)
        self.words = counts_matrix([bag_of_trigraphs(corpus[e].abstract, vocab) for e in ids],
                                   self.vocab_size)
        self.links = counts_matrix([bag_of_trigraphs(link_text(corpus[e], titles), vocab) for e in ids],
                                   self.vocab_size)

    def batch(self, entities: Sequence) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        rows = np.fromiter((self.row[e] for e in entities), dtype=np.int64, count=len(entities))
        return self.words[rows], self.links[rows]


class ContentNet:
    """phi_content: MLP over [repr(e_s); repr(e_+); repr(e_-)], each repr 2m wide."""

    def __init__(self, vocab_size: int, dim: int = 64, hidden: Sequence[int] = (128, 128),
                 dropout: float = 0.0, rng: np.random.Generator | None = None,
                 term_weights: np.ndarray | None = None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        self.encoder = ContentEncoder(vocab_size, dim, rng, term_weights, dtype)
        self.scorer: Sequential = mlp(6 * dim, hidden, dropout, rng, dtype, name="content.mlp")

    @property
    def input_width(self) -> int:
        return 6 * self.dim

    def forward(self, words: sp.spmatrix, links: sp.spmatrix) -> np.ndarray:
        """``words``/``links`` stack the s, +, - rows: shape (3N, |V|)."""
        n = words.shape[0] // 3
        enc = self.encoder.forward(sp.vstack([words, links], format="csr"))
        rep = np.concatenate([enc[:3 * n], enc[3 * n:]], axis=1)  # (3N, 2m)
        z = rep.reshape(3, n, 2 * self.dim).transpose(1, 0, 2).reshape(n, 6 * self.dim)
        return self.scorer.forward(z)[:, 0]

    def backward(self, grad: np.ndarray) -> None:
        n = grad.shape[0]
        gz = self.scorer.backward(grad[:, None])
        grep = gz.reshape(n, 3, 2 * self.dim).transpose(1, 0, 2).reshape(3 * n, 2 * self.dim)
        self.encoder.backward(np.concatenate([grep[:, :self.dim], grep[:, self.dim:]], axis=0))

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.scorer.parameters()

    def buffers(self) -> dict:
        return self.scorer.buffers()

    def train(self, mode: bool = True) -> None:
        self.scorer.train(mode)

    def output_head(self):
        return self.scorer.layers[-1]
