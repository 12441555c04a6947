"""Clickstream / pageview ingestion and training-set construction.

Periods are integer month indices: ``(year - 2001) * 12 + (month - 1)``.
"""

from __future__ import annotations

import io
import itertools
import logging
import math
import os
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

EntityId = Union[int, str]

EXTERNAL_PREFIX = "other-"
DEFAULT_SEARCH_ENGINES = ("other-google", "other-bing")
DEFAULT_MIN_COUNT = 10
DEFAULT_TOP_N = 100
ALL_PAIRS_LIMIT = 50
PAIR_SAMPLE_SIZE = 2000


class FormatError(ValueError):
    """Input file does not follow the documented layout."""


class ConfigError(ValueError):
    pass


class LeakageError(ValueError):
    """Training or development data reaches into the studied period."""


# -- periods ----------------------------------------------------------------

def month_index(year: int, month: int) -> int:
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    return (year - 2001) * 12 + (month - 1)


def period_label(period: int) -> str:
    year, month = divmod(period, 12)
    return f"{year + 2001:04d}-{month + 1:02d}"


_PERIOD_RE = re.compile(r"^(\d{4})-?(\d{2})(?:-?(\d{2}))?$")


def parse_period(text: str | int) -> int:
    """Accept ``YYYY-MM``, ``YYYYMM``, ``YYYY-MM-DD``, ``YYYYMMDD`` or a bare index."""
    if isinstance(text, (int, np.integer)):
        return int(text)
    text = text.strip()
    m = _PERIOD_RE.match(text)
    if m:
        return month_index(int(m.group(1)), int(m.group(2)))
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    raise ValueError(f"cannot parse period {text!r}")


def period_from_filename(path: str) -> int:
    m = re.search(r"(\d{4})[-_](\d{2})", os.path.basename(path))
    if not m:
        raise ValueError(f"no YYYY-MM period in file name {path!r}")
    return month_index(int(m.group(1)), int(m.group(2)))


# -- domain types -----------------------------------------------------------

@dataclass
class Entity:
    id: int
    title: str
    abstract: str = ""
    links: list[int] = field(default_factory=list)


def canonical_title(title: str) -> str:
    return title.strip().replace(" ", "_")


@dataclass(frozen=True)
class NavigationRecord:
    source: EntityId
    target: EntityId
    period: int
    count: int

    @property
    def external(self) -> bool:
        return isinstance(self.source, str) and self.source.startswith(EXTERNAL_PREFIX)


@dataclass
class TimeSeries:
    values: np.ndarray  # (D, T)
    end_period: int
    missing: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class TrainingTriple:
    source: EntityId
    pos: EntityId
    neg: EntityId
    prob: float
    period: int

    def swapped(self) -> "TrainingTriple":
        return TrainingTriple(self.source, self.neg, self.pos, 1.0 - self.prob, self.period)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    dev: tuple
    test: tuple

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)


# -- corpus files -----------------------------------------------------------

class Corpus:
    """Entities keyed by integer id, with a canonical-title index."""

    def __init__(self, entities: Iterable[Entity] = ()):
        self.entities: dict[int, Entity] = {}
        self.by_title: dict[str, int] = {}
        for e in entities:
            self.add(e)

    def add(self, entity: Entity) -> None:
        key = canonical_title(entity.title)
        if entity.id in self.entities:
            raise FormatError(f"duplicate entity id {entity.id}")
        if key in self.by_title:
            raise FormatError(f"duplicate title {entity.title!r}")
        entity.links = [t for t in dict.fromkeys(entity.links) if t != entity.id]
        self.entities[entity.id] = entity
        self.by_title[key] = entity.id

    def __len__(self) -> int:
        return len(self.entities)

    def __contains__(self, eid) -> bool:
        return eid in self.entities

    def __getitem__(self, eid: int) -> Entity:
        return self.entities[eid]

    def ids(self) -> list[int]:
        return sorted(self.entities)

    def resolve(self, title: str) -> int | None:
        return self.by_title.get(canonical_title(title))


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def read_abstracts(source) -> list[Entity]:
    """``id<TAB>title<TAB>abstract`` per line."""
    out = []
    with _open_text(source) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise FormatError(f"abstracts line {lineno}: expected 3 columns")
            try:
                eid = int(parts[0])
            except ValueError:
                raise FormatError(f"abstracts line {lineno}: bad id {parts[0]!r}") from None
            out.append(Entity(eid, parts[1], parts[2] if len(parts) == 3 else ""))
    return out


def read_links(source) -> dict[int, list[int]]:
    """``id<TAB>space-separated target ids`` per line."""
    out: dict[int, list[int]] = {}
    with _open_text(source) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            head, _, tail = line.partition("\t")
            try:
                out[int(head)] = [int(t) for t in tail.split()]
            except ValueError:
                raise FormatError(f"links line {lineno}: non-integer id") from None
    return out


def load_corpus(abstracts, links=None) -> Corpus:
    entities = read_abstracts(abstracts)
    profile = read_links(links) if links is not None else {}
    known = {e.id for e in entities}
    for e in entities:
        e.links = [t for t in profile.get(e.id, []) if t in known]
    return Corpus(entities)


def write_corpus(corpus: Corpus, abstracts_path, links_path) -> None:
    with open(abstracts_path, "w", encoding="utf-8", newline="\n") as fh:
        for eid in corpus.ids():
            e = corpus[eid]
            fh.write(f"{e.id}\t{e.title}\t{e.abstract}\n")
    with open(links_path, "w", encoding="utf-8", newline="\n") as fh:
        for eid in corpus.ids():
            fh.write(f"{eid}\t{' '.join(map(str, corpus[eid].links))}\n")


# -- clickstream ------------------------------------------------------------

@dataclass
class ClickstreamParse:
    records: list[NavigationRecord]
    malformed: int = 0
    unresolved: int = 0
    ignored: int = 0
    samples: list[str] = field(default_factory=list)

    def __iter__(self) -> Iterator[NavigationRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def parse_clickstream(stream, period: int, titles: Mapping[str, int] | None = None,
                      max_bad_fraction: float = 0.01, grace_lines: int = 100) -> ClickstreamParse:
    """Parse ``prev<TAB>curr<TAB>type<TAB>count`` lines of one monthly dump.

    ``link`` rows become entity-to-entity navigations; rows whose ``prev``
    starts with ``other-`` become external navigations. Anything else is
    ignored. With ``titles`` the page titles are mapped to entity ids and rows
    naming unknown pages are dropped as unresolved.

    Malformed lines are skipped and counted. If more than ``max_bad_fraction``
    of the lines are malformed (judged only once ``grace_lines`` lines have
    been read) a ``FormatError`` carrying sample lines is raised.
    """
    result = ClickstreamParse(records=[])
    total = 0
    if isinstance(stream, (str, os.PathLike)):
        fh = open(stream, "rb")
        close = True
    else:
        fh, close = stream, False
    try:
        for raw in fh:
            if isinstance(raw, bytes):
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError:
                    line = None
            else:
                line = raw
            if line is not None:
                line = line.rstrip("\r\n")
                if not line:
                    continue
            total += 1
            rec = _parse_click_line(line, period, titles, result)
            if rec is not None:
                result.records.append(rec)
    finally:
        if close:
            fh.close()
    if total >= grace_lines and result.malformed > max_bad_fraction * total:
        raise FormatError(
            f"{result.malformed} of {total} clickstream lines malformed; samples: {result.samples}")
    if result.malformed:
        logger.warning("skipped %d malformed clickstream lines", result.malformed)
    return result


def _parse_click_line(line, period, titles, result: ClickstreamParse):
    def bad():
        result.malformed += 1
        if len(result.samples) < 5:
            result.samples.append(repr(line))
        return None

    if line is None:
        return bad()
    parts = line.split("\t")
    if len(parts) != 4:
        return bad()
    prev, curr, kind, count = parts
    try:
        n = int(count)
    except ValueError:
        return bad()
    if n < 0 or not prev or not curr:
        return bad()
    external = prev.startswith(EXTERNAL_PREFIX)
    if not external and kind != "link":
        result.ignored += 1
        return None
    if titles is not None:
        tgt = titles.get(canonical_title(curr))
        src = prev if external else titles.get(canonical_title(prev))
        if tgt is None or src is None:
            result.unresolved += 1
            return None
        return NavigationRecord(src, tgt, period, n)
    return NavigationRecord(prev, curr, period, n)


def format_clickstream(records: Iterable[NavigationRecord],
                       id_to_title: Mapping | None = None) -> str:
    """Serialize records back into the four-column dump layout."""
    def name(x):
        if id_to_title is not None and not (isinstance(x, str) and x.startswith(EXTERNAL_PREFIX)):
            return id_to_title[x]
        return str(x)

    lines = []
    for r in records:
        kind = "external" if r.external else "link"
        lines.append(f"{name(r.source)}\t{name(r.target)}\t{kind}\t{r.count}\n")
    return "".join(lines)


def write_navigation(records: Iterable[NavigationRecord], path) -> None:
    """Normalized navigation file: ``source<TAB>target<TAB>period<TAB>count``."""
    rows = sorted(records, key=_record_key)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(f"{r.source}\t{r.target}\t{r.period}\t{r.count}\n")


def _record_key(r: NavigationRecord):
    return (r.period, str(r.source), str(r.target))


def read_navigation(path) -> list[NavigationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise FormatError(f"navigation line {lineno}: expected 4 columns")
            src = parts[0] if parts[0].startswith(EXTERNAL_PREFIX) else int(parts[0])
            out.append(NavigationRecord(src, int(parts[1]), int(parts[2]), int(parts[3])))
    return out


def records_at(records: Iterable[NavigationRecord], period: int) -> list[NavigationRecord]:
    return [r for r in records if r.period == period]


def link_counts(records: Iterable[NavigationRecord], period: int | None = None
                ) -> dict[EntityId, dict[EntityId, int]]:
    """source -> target -> summed link navigation count."""
    out: dict = defaultdict(lambda: defaultdict(int))
    for r in records:
        if r.external or (period is not None and r.period != period):
            continue
        out[r.source][r.target] += r.count
    return out


# -- seeds, candidates, supervision ----------------------------------------

def select_seeds(records: Iterable[NavigationRecord], k: int,
                 engines: Sequence[str] = DEFAULT_SEARCH_ENGINES) -> list:
    """Top-k entities by summed search-engine navigations; ties by id."""
    engines = set(engines)
    totals: dict = defaultdict(int)
    for r in records:
        if r.external and r.source in engines:
            totals[r.target] += r.count
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) < k:
        warnings.warn(f"only {len(ranked)} entities receive search-engine traffic; wanted {k}")
    return [e for e, _ in ranked[:k]]


def ranked_targets(seed, records: Iterable[NavigationRecord], min_count: int = DEFAULT_MIN_COUNT,
                   top_n: int = DEFAULT_TOP_N, period: int | None = None) -> list[tuple]:
    """(target, count) pairs navigated from ``seed``, by count desc then id."""
    counts = link_counts((r for r in records if r.source == seed), period)
    targets = counts.get(seed, {})
    kept = [(t, c) for t, c in targets.items() if c >= min_count]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    return kept[:top_n]


def candidate_set(seed, records: Iterable[NavigationRecord], min_count: int = DEFAULT_MIN_COUNT,
                  top_n: int = DEFAULT_TOP_N) -> list:
    return [t for t, _ in ranked_targets(seed, records, min_count, top_n)]


def supervision_probability(y_pos: float, y_neg: float) -> float:
    if y_pos < 0 or y_neg < 0:
        raise ValueError("navigation counts must be non-negative")
    if y_pos + y_neg == 0:
        raise ValueError("preference probability undefined when both counts are zero")
    return y_pos / (y_pos + y_neg)


def _seed_pairs(cands: list[tuple], rng: np.random.Generator | None,
                all_pairs_limit: int, sample_size: int) -> list[tuple]:
    pairs = [(a, b) if ca > cb else (b, a)
             for (a, ca), (b, cb) in itertools.combinations(cands, 2)
             if ca != cb and ca > 0 and cb > 0]
    if len(cands) <= all_pairs_limit or len(pairs) <= sample_size:
        return pairs
    if rng is None:
        raise ConfigError("an rng is required to sample pairs from large candidate sets")
    pick = np.sort(rng.choice(len(pairs), size=sample_size, replace=False))
    return [pairs[i] for i in pick]


def build_triples(seeds: Iterable, records: Sequence[NavigationRecord], period: int,
                  rng: np.random.Generator | None = None, min_count: int = DEFAULT_MIN_COUNT,
                  top_n: int = DEFAULT_TOP_N, all_pairs_limit: int = ALL_PAIRS_LIMIT,
                  sample_size: int = PAIR_SAMPLE_SIZE) -> list[TrainingTriple]:
    """Pairwise supervision from each seed's candidate set at ``period``.

    Every emitted triple has the higher-count candidate in ``pos``. Pairs with
    equal counts, or where either count is zero, are dropped.
    """
    counts = link_counts(records, period)
    out = []
    for seed in seeds:
        targets = counts.get(seed, {})
        cands = sorted(((t, c) for t, c in targets.items() if c >= min_count),
                       key=lambda tc: (-tc[1], tc[0]))[:top_n]
        if len(cands) < 2:
            continue
        y = dict(cands)
        for a, b in _seed_pairs(cands, rng, all_pairs_limit, sample_size):
            out.append(TrainingTriple(seed, a, b, supervision_probability(y[a], y[b]), period))
    return out


def write_triples(triples: Iterable[TrainingTriple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in triples:
            fh.write(f"{t.source}\t{t.pos}\t{t.neg}\t{t.prob!r}\t{t.period}\n")


def read_triples(path) -> list[TrainingTriple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s, p, n, prob, period = line.rstrip("\n").split("\t")
            out.append(TrainingTriple(int(s), int(p), int(n), float(prob), int(period)))
    return out


# -- pageviews and time series ---------------------------------------------

class PageviewTable:
    """Monthly counts per entity and signal: ``{entity: {period: [D values]}}``."""

    def __init__(self, signals: Sequence[str] = ("views",)):
        self.signals = list(signals)
        self.data: dict[int, dict[int, np.ndarray]] = defaultdict(dict)

    def add(self, entity: int, period: int, count: float, signal: str = "views") -> None:
        if count < 0:
            raise FormatError("negative pageview count")
        try:
            d = self.signals.index(signal)
        except ValueError:
            return
        row = self.data[entity].get(period)
        if row is None:
            row = self.data[entity][period] = np.zeros(len(self.signals))
        row[d] += count

    def __contains__(self, entity) -> bool:
        return entity in self.data

    def periods(self) -> list[int]:
        return sorted({p for rows in self.data.values() for p in rows})

    def iter_rows(self) -> Iterator[tuple[int, int, str, float]]:
        for e in sorted(self.data):
            for p in sorted(self.data[e]):
                for d, name in enumerate(self.signals):
                    yield e, p, name, float(self.data[e][p][d])


def read_pageviews(source, titles: Mapping[str, int] | None = None,
                   signals: Sequence[str] = ("views",)) -> PageviewTable:
    """``title, period, count[, signal]`` lines, tab or comma separated.

    Daily periods (``YYYY-MM-DD``) are summed into their month.
    """
    table = PageviewTable(signals)
    with _open_text(source) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t") if "\t" in line else line.split(",")
            if len(parts) not in (3, 4):
                raise FormatError(f"pageviews line {lineno}: expected 3 or 4 columns")
            name = parts[0]
            try:
                period = parse_period(parts[1])
                count = float(parts[2])
            except ValueError as exc:
                raise FormatError(f"pageviews line {lineno}: {exc}") from None
            signal = parts[3].strip() if len(parts) == 4 else "views"
            if titles is not None:
                eid = titles.get(canonical_title(name))
                if eid is None:
                    continue
            else:
                eid = int(name)
            table.add(eid, period, count, signal)
    return table


def write_pageviews(table: PageviewTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e, p, name, v in table.iter_rows():
            fh.write(f"{e}\t{period_label(p)}\t{v:g}\t{name}\n")


def normalize_series(raw: np.ndarray) -> np.ndarray:
    """log1p, then z-score each signal over the window; flat signals become 0."""
    x = np.log1p(np.asarray(raw, dtype=np.float64))
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (x - mean) / safe, 0.0)


def build_time_series(source: PageviewTable, entity: int, end_period: int, T: int = 27,
                      normalize: bool = True) -> TimeSeries:
    """D x T matrix of the T months ending at ``end_period`` (inclusive)."""
    D = len(source.signals)
    raw = np.zeros((D, T))
    rows = source.data.get(entity)
    missing = not rows
    if rows:
        start = end_period - T + 1
        for p, vec in rows.items():
            if start <= p <= end_period:
                raw[:, p - start] = vec
    values = normalize_series(raw) if normalize else raw
    return TimeSeries(values, end_period, missing)


# -- splits and dataset assembly --------------------------------------------

def split_seeds(seeds: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                seed: int = 0) -> DatasetSplit:
    """Deterministic shuffled partition; sizes by largest remainder."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    n = len(seeds)
    exact = [r * n for r in ratios]
    sizes = [math.floor(x) for x in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [seeds[i] for i in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(tuple(shuffled[:a]), tuple(shuffled[a:b]), tuple(shuffled[b:]))


@dataclass
class Dataset:
    studied_period: int
    train_period: int
    seeds: list
    split: DatasetSplit
    train: list[TrainingTriple]
    dev: list[TrainingTriple]
    test: list[TrainingTriple]

    def validate(self) -> None:
        check_leakage(self.train + self.dev, self.studied_period)


def feature_end_period(period: int) -> int:
    """Features for supervision observed at ``period`` stop the month before."""
    return period - 1


def check_leakage(triples: Iterable[TrainingTriple], studied_period: int,
                  feature_periods: Iterable[int] = ()) -> None:
    """Reject train/dev supervision or features dated at or after the studied period."""
    for t in triples:
        if t.period >= studied_period:
            raise LeakageError(
                f"supervision for seed {t.source} dated {period_label(t.period)} "
                f"is not before the studied period {period_label(studied_period)}")
    for p in feature_periods:
        if p >= studied_period:
            raise LeakageError(f"feature dated {period_label(p)} is not before the studied period")


def build_dataset(records: Sequence[NavigationRecord], studied_period: int, num_seeds: int = 10000,
                  ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0,
                  train_period: int | None = None, engines: Sequence[str] = DEFAULT_SEARCH_ENGINES,
                  min_count: int = DEFAULT_MIN_COUNT, top_n: int = DEFAULT_TOP_N,
                  all_pairs_limit: int = ALL_PAIRS_LIMIT,
                  sample_size: int = PAIR_SAMPLE_SIZE) -> Dataset:
    """Seeds at the studied month, 80/10/10 split, triples per split.

    Train and dev supervision comes from ``train_period`` (default: the month
    before the studied one); test supervision comes from the studied month.
    """
    if train_period is None:
        train_period = studied_period - 1
    if train_period >= studied_period:
        raise LeakageError("train/dev supervision must predate the studied period")
    current = records_at(records, studied_period)
    previous = records_at(records, train_period)
    seeds = select_seeds(current, num_seeds, engines)
    split = split_seeds(seeds, ratios, seed)
    rng = np.random.default_rng(seed)
    kw = dict(min_count=min_count, top_n=top_n, all_pairs_limit=all_pairs_limit,
              sample_size=sample_size)
    ds = Dataset(
        studied_period=studied_period,
        train_period=train_period,
        seeds=seeds,
        split=split,
        train=build_triples(split.train, previous, train_period, rng, **kw),
        dev=build_triples(split.dev, previous, train_period, rng, **kw),
        test=build_triples(split.test, current, studied_period, rng, **kw),
    )
    ds.validate()
    return ds
