"""Synthetic worlds with planted relatedness signals.

Navigation counts are ``round(scale * exp(h))`` for a hidden score ``h``, so
the pairwise supervision of two candidates is ``sigmoid(h_a - h_b)`` up to
rounding. The score is a fixed linear function of quantities the model can
observe: hot words in the abstract (content), shared in-linkers with the
seed (graph) and the last months of the normalized pageview series (time).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .dataio import (Corpus, Entity, NavigationRecord, PageviewTable, build_time_series,
                     feature_end_period, format_clickstream, month_index, period_label,
                     write_corpus)

HOT_WORDS = ("quasar", "nebula", "pulsar", "magnetar", "supernova")
FILLER_WORDS = ("table", "chair", "window", "garden", "pencil", "river", "bottle", "carpet",
                "ladder", "basket", "mirror", "button", "candle", "pillow", "bucket", "wallet")


@dataclass
class SyntheticConfig:
    num_entities: int = 200
    num_seeds: int = 30
    num_linkers: int = 30
    candidates_per_seed: int = 30
    seed_inlinks: int = 8
    candidate_inlinks: int = 5
    abstract_words: int = 8
    max_hot: int = 4
    content_weight: float = 0.5
    graph_weight: float = 1.0
    time_weight: float = 0.6
    time_lags: tuple = (1.0, 1.0, 1.0)  # weight of the last, second-last, ... month
    early_noise: float = 0.3
    recent_shift: float = 1.0  # std of the per-entity level change over the recent months
    recent_noise: float = 0.3
    scale: float = 12.0
    length: int = 27
    studied_period: int = month_index(2016, 6)
    seed_traffic: int = 5000

    @property
    def num_candidates(self) -> int:
        return self.num_entities - self.num_seeds - self.num_linkers


@dataclass
class SyntheticWorld:
    config: SyntheticConfig
    corpus: Corpus
    pageviews: PageviewTable
    records: list[NavigationRecord]
    seeds: list[int]
    candidates: dict[int, list[int]]
    hidden: dict = field(default_factory=dict)  # (seed, candidate, period) -> h
    parts: dict = field(default_factory=dict)  # (seed, candidate, period) -> (content, graph, time)

    @property
    def studied_period(self) -> int:
        return self.config.studied_period

    def hidden_scores(self, seed: int, period: int) -> dict[int, float]:
        return {c: self.hidden[(seed, c, period)] for c in self.candidates[seed]}

    def write_raw(self, directory) -> dict[str, str]:
        """Write abstracts, links, two monthly clickstream dumps and pageviews."""
        os.makedirs(directory, exist_ok=True)
        paths = {"abstracts": os.path.join(directory, "abstracts.tsv"),
                 "links": os.path.join(directory, "links.tsv"),
                 "pageviews": os.path.join(directory, "pageviews.tsv")}
        write_corpus(self.corpus, paths["abstracts"], paths["links"])
        titles = {e: self.corpus[e].title for e in self.corpus.ids()}
        for p in (self.studied_period - 1, self.studied_period):
            label = period_label(p)
            path = os.path.join(directory, f"clickstream-{label}.tsv")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(format_clickstream([r for r in self.records if r.period == p], titles))
            paths[f"clickstream-{label}"] = path
        with open(paths["pageviews"], "w", encoding="utf-8", newline="\n") as fh:
            for e, p, _, v in self.pageviews.iter_rows():
                fh.write(f"{titles[e]}\t{period_label(p)}\t{int(v)}\n")
        return paths


def _abstract(rng: np.random.Generator, hot: int, words: int) -> str:
    chosen = list(rng.choice(HOT_WORDS, size=hot)) + list(rng.choice(FILLER_WORDS, size=words - hot))
    rng.shuffle(chosen)
    return " ".join(chosen)


def _recent(z: np.ndarray, lags) -> float:
    return float(sum(w * z[0, -1 - j] for j, w in enumerate(lags)))


def generate(config: SyntheticConfig | None = None, seed: int = 0,
             content: bool = True, graph: bool = True, time: bool = True) -> SyntheticWorld:
    """Build a world; disabled channels contribute nothing to the hidden score."""
    cfg = config or SyntheticConfig()
    if cfg.num_candidates < cfg.candidates_per_seed:
        raise ValueError("not enough candidate entities for the requested candidate sets")
    rng = np.random.default_rng(seed)
    n_s, n_l = cfg.num_seeds, cfg.num_linkers
    seeds = list(range(n_s))
    linkers = list(range(n_s, n_s + n_l))
    cands = list(range(n_s + n_l, cfg.num_entities))

    hot = {e: 0 for e in range(cfg.num_entities)}
    for c in cands:
        hot[c] = int(rng.integers(0, cfg.max_hot + 1))
    inlinks: dict[int, set] = {e: set() for e in range(cfg.num_entities)}
    for s in seeds:
        inlinks[s] = set(rng.choice(linkers, size=cfg.seed_inlinks, replace=False).tolist())
    for c in cands:
        inlinks[c] = set(rng.choice(linkers, size=cfg.candidate_inlinks, replace=False).tolist())
    links: dict[int, list[int]] = {e: [] for e in range(cfg.num_entities)}
    for tgt, srcs in inlinks.items():
        for src in srcs:
            links[src].append(tgt)
    for e in seeds + cands:
        links[e].append(int(rng.choice(linkers)))

    corpus = Corpus(Entity(e, f"Entity_{e:03d}", _abstract(rng, hot[e], cfg.abstract_words),
                           sorted(links[e])) for e in range(cfg.num_entities))

    # pageviews for every month the two supervision periods can see
    t_n = cfg.studied_period
    first = t_n - 1 - cfg.length - 2
    months = np.arange(first, t_n + 1)
    table = PageviewTable()
    recent_span = len(cfg.time_lags) + 1
    for e in range(cfg.num_entities):
        base = rng.uniform(4.0, 7.0)
        noise = rng.normal(0.0, cfg.early_noise, size=months.size)
        recent = months >= t_n - 1 - recent_span
        noise[recent] = (rng.normal(0.0, cfg.recent_shift)
                         + rng.normal(0.0, cfg.recent_noise, size=int(recent.sum())))
        for p, v in zip(months, np.exp(base + noise)):
            table.add(e, int(p), float(np.round(v)))

    candidates = {s: sorted(rng.choice(cands, size=cfg.candidates_per_seed, replace=False).tolist())
                  for s in seeds}
    world = SyntheticWorld(cfg, corpus, table, [], seeds, candidates)
    records = []
    for p in (t_n - 1, t_n):
        end = feature_end_period(p)
        for s in seeds:
            records.append(NavigationRecord("other-google", s, p, cfg.seed_traffic + 10 * (n_s - s)))
            for c in candidates[s]:
                hc = cfg.content_weight * hot[c] if content else 0.0
                hg = cfg.graph_weight * np.log1p(len(inlinks[s] & inlinks[c])) if graph else 0.0
                ht = 0.0
                if time:
                    z = build_time_series(table, c, end, cfg.length).values
                    ht = cfg.time_weight * _recent(z, cfg.time_lags)
                world.parts[(s, c, p)] = (hc, hg, ht)
                world.hidden[(s, c, p)] = hc + hg + ht
        # shift so every count clears the candidate threshold
        low = min(world.hidden[(s, c, p)] for s in seeds for c in candidates[s])
        for s in seeds:
            for c in candidates[s]:
                h = world.hidden[(s, c, p)] - low
                world.hidden[(s, c, p)] = h
                records.append(NavigationRecord(s, c, p, int(np.round(cfg.scale * np.exp(h)))))
    world.records = records
    return world


def time_only_config(**overrides) -> SyntheticConfig:
    """Only the most recent months carry signal, with decaying lag weights;
    older months are loud, uninformative noise."""
    base = dict(content_weight=0.0, graph_weight=0.0, time_weight=1.0,
                time_lags=(1.0, 0.5, 0.25), early_noise=2.0, recent_shift=0.0, recent_noise=1.0)
    base.update(overrides)
    return SyntheticConfig(**base)
