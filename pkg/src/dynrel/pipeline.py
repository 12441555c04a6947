"""Glue: build feature stores and run train / rank / evaluate on in-memory data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .content import ContentFeatures, TrigraphVocabulary, link_text
from .dataio import Corpus, Dataset, PageviewTable
from .evaluation import GroundTruth, MetricReport, evaluate_rankings
from .features import FeatureStore
from .graph import GraphEmbedding, GraphFeatures, LinkGraph, deepwalk
from .ranker import ModelConfig, ModelScorer, RankedList, TrainConfig, TrainReport, TrioModel, \
    rank_candidates, train


@dataclass
class EmbeddingConfig:
    dim: int = 128
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    negatives: int = 5
    epochs: int = 1
    lr: float = 0.025
    threads: int = 1


def corpus_texts(corpus: Corpus) -> list[str]:
    titles = {e: corpus[e].title for e in corpus.ids()}
    out = []
    for e in corpus.ids():
        out.append(corpus[e].abstract)
        out.append(link_text(corpus[e], titles))
    return out


def build_vocabulary(corpus: Corpus) -> TrigraphVocabulary:
    return TrigraphVocabulary.build(corpus_texts(corpus))


def build_embedding(corpus: Corpus, config: EmbeddingConfig | None = None, seed: int = 0) -> GraphEmbedding:
    cfg = config or EmbeddingConfig()
    return deepwalk(LinkGraph.from_corpus(corpus), cfg.dim, cfg.walks_per_node, cfg.walk_length,
                    cfg.window, cfg.negatives, cfg.epochs, cfg.lr, seed, cfg.threads)


def build_feature_store(corpus: Corpus, pageviews: PageviewTable | None, model: ModelConfig,
                        vocab: TrigraphVocabulary | None = None,
                        embedding: GraphEmbedding | None = None,
                        embedding_config: EmbeddingConfig | None = None, seed: int = 0,
                        max_feature_period: int | None = None,
                        bag_direction: str = "in") -> FeatureStore:
    content = graph = None
    if model.use_content:
        vocab = vocab or build_vocabulary(corpus)
        content = ContentFeatures(corpus, vocab)
    if model.use_graph:
        link_graph = LinkGraph.from_corpus(corpus)
        embedding = embedding or build_embedding(corpus, embedding_config, seed)
        graph = GraphFeatures(link_graph, embedding, model.bins, bag_direction)
    return FeatureStore(content, graph, pageviews if model.use_time else None, model.length,
                        max_feature_period, np.dtype(model.dtype))


def fit(dataset: Dataset, features: FeatureStore, model_config: ModelConfig,
        train_config: TrainConfig | None = None, seed: int = 0) -> tuple[TrioModel, TrainReport]:
    model = TrioModel(model_config, seed=seed)
    report = train(model, features, dataset.train, dataset.dev, train_config)
    return model, report


def rank_sources(model: TrioModel, features: FeatureStore, candidates: dict, period: int,
                 opponents: int = 20, seed: int = 0, round_robin: bool = False) -> list[RankedList]:
    scorer = ModelScorer(model, features)
    return [rank_candidates(scorer, s, candidates[s], period, opponents, seed + i, round_robin)
            for i, s in enumerate(sorted(candidates))]


def evaluate_lists(lists: list[RankedList], truth: GroundTruth, **kw) -> MetricReport:
    return evaluate_rankings({rl.source: rl.items for rl in lists}, truth, **kw)
