"""Sectioned key-value run configuration.

Every key has a typed default; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass
from typing import Any

from .dataio import ConfigError, parse_period, period_label


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    default: Any
    kind: str  # str, int, float, bool, ints, floats, period
    help: str


KEYS: tuple[Key, ...] = (
    Key("paths", "abstracts", "", "str", "entity abstracts, id<TAB>title<TAB>text"),
    Key("paths", "links", "", "str", "link profiles, id<TAB>space-separated ids"),
    Key("paths", "clickstream", "", "str", "monthly clickstream dumps, comma-separated; month from file name"),
    Key("paths", "pageviews", "", "str", "monthly pageviews, title<TAB>YYYY-MM<TAB>count[<TAB>signal]"),
    Key("paths", "output_dir", "out", "str", "directory for all derived artifacts"),
    Key("paths", "embedding", "", "str", "pretrained node embedding; trained with DeepWalk when empty"),
    Key("data", "studied_period", "", "period", "month to rank at, YYYY-MM"),
    Key("data", "num_seeds", 10000, "int", "seed entities by search-engine traffic"),
    Key("data", "split", (0.8, 0.1, 0.1), "floats", "train/dev/test seed fractions"),
    Key("data", "min_count", 10, "int", "minimum navigations for a candidate"),
    Key("data", "top_n", 100, "int", "candidates kept per seed"),
    Key("data", "search_engines", "other-google,other-bing", "str", "referrers that count as search traffic"),
    Key("data", "signals", "views", "str", "pageview signals forming the D series channels"),
    Key("data", "bag_direction", "in", "str", "entity bags for matching histograms: in or out"),
    Key("model", "use_content", True, "bool", "enable the content channel"),
    Key("model", "use_graph", True, "bool", "enable the graph channel"),
    Key("model", "use_time", True, "bool", "enable the time-series channel"),
    Key("model", "content_dim", 64, "int", "trigraph embedding width"),
    Key("model", "hidden_layers", 2, "int", "hidden layers in each channel scorer"),
    Key("model", "hidden_units", 128, "int", "units per hidden layer"),
    Key("model", "dropout", 0.2, "float", "dropout rate in the scorers"),
    Key("model", "bins", 30, "int", "matching histogram bins, last one is exact match"),
    Key("model", "length", 27, "int", "months per time series (T)"),
    Key("model", "filters", (20, 25), "ints", "filters per conv layer"),
    Key("model", "windows", (5, 4), "ints", "window per conv layer"),
    Key("model", "alpha", 2.0, "float", "attention decay rate"),
    Key("model", "time_dim", 64, "int", "time embedding width"),
    Key("model", "attention", True, "bool", "apply decay attention to the last feature map"),
    Key("model", "decay_convention", "standard", "str", "distance measure for attention: standard or window_end"),
    Key("model", "dtype", "float64", "str", "float32 or float64"),
    Key("train", "lr", 1e-3, "float", "Adam learning rate"),
    Key("train", "batch_size", 100, "int", "triples per mini-batch"),
    Key("train", "epochs", 25, "int", "maximum epochs"),
    Key("train", "patience", 5, "int", "epochs without dev improvement before stopping"),
    Key("train", "l2", 1e-6, "float", "L2 coefficient on all parameters"),
    Key("train", "augment_swapped", True, "bool", "also train on each triple with pos and neg swapped"),
    Key("embedding", "dim", 128, "int", "node embedding width"),
    Key("embedding", "walks_per_node", 10, "int", "random walks started per node"),
    Key("embedding", "walk_length", 40, "int", "nodes per walk"),
    Key("embedding", "window", 5, "int", "skip-gram context window"),
    Key("embedding", "negatives", 5, "int", "negative samples per pair"),
    Key("embedding", "epochs", 1, "int", "skip-gram passes"),
    Key("embedding", "lr", 0.025, "float", "initial skip-gram learning rate"),
    Key("rank", "opponents", 20, "int", "sampled opponents per candidate"),
    Key("rank", "round_robin", False, "bool", "compare every candidate with every other"),
    Key("rank", "sources", "", "str", "comma-separated source ids to rank; all test seeds when empty"),
    Key("evaluate", "gain", "exp", "str", "NDCG gain: exp or linear"),
    Key("evaluate", "grade_cap", 0, "float", "cap grades before the gain; 0 disables"),
    Key("run", "seed", 0, "int", "master random seed"),
    Key("run", "threads", 0, "int", "worker threads; 0 means all cores"),
)

_BY_NAME = {(k.section, k.name): k for k in KEYS}
SECTIONS = tuple(dict.fromkeys(k.section for k in KEYS))


def _parse(key: Key, text: str):
    text = text.strip()
    try:
        if key.kind == "str":
            return text
        if key.kind == "int":
            return int(text)
        if key.kind == "float":
            return float(text)
        if key.kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if key.kind == "ints":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if key.kind == "floats":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if key.kind == "period":
            return "" if not text else period_label(parse_period(text))
    except ValueError as exc:
        raise ConfigError(f"[{key.section}] {key.name}: {exc}") from None
    raise AssertionError(key.kind)


def _format(key: Key, value) -> str:
    if key.kind in ("ints", "floats"):
        return ",".join(repr(v) for v in value)
    if key.kind == "bool":
        return "true" if value else "false"
    if key.kind == "float":
        return repr(float(value))
    return str(value)


class RunConfig:
    def __init__(self):
        self.values: dict[tuple[str, str], Any] = {(k.section, k.name): k.default for k in KEYS}

    def __getitem__(self, item: str):
        section, _, name = item.partition(".")
        return self.values[(section, name)]

    def set(self, dotted: str, text: str) -> None:
        section, _, name = dotted.partition(".")
        key = _BY_NAME.get((section, name))
        if key is None:
            raise ConfigError(f"unknown config key {dotted!r}")
        self.values[(section, name)] = _parse(key, text)

    def section(self, name: str) -> dict:
        return {k: v for (s, k), v in self.values.items() if s == name}

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for name, value in parser.items(section):
                cfg.set(f"{section}.{name}", value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def dumps(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for k in KEYS:
            if not parser.has_section(k.section):
                parser.add_section(k.section)
            parser.set(k.section, k.name, _format(k, self.values[(k.section, k.name)]))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    def validate(self) -> None:
        split = self["data.split"]
        if len(split) != 3 or any(v < 0 for v in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError("data.split must be three non-negative fractions summing to 1")
        if not (self["model.use_content"] or self["model.use_graph"] or self["model.use_time"]):
            raise ConfigError("at least one of model.use_content/use_graph/use_time must be true")
        if len(self["model.filters"]) != len(self["model.windows"]) or not self["model.filters"]:
            raise ConfigError("model.filters and model.windows need the same non-zero length")
        if self["model.alpha"] <= 0:
            raise ConfigError("model.alpha must be positive")
        if self["model.decay_convention"] not in ("standard", "window_end"):
            raise ConfigError("model.decay_convention must be standard or window_end")
        if self["model.dtype"] not in ("float32", "float64"):
            raise ConfigError("model.dtype must be float32 or float64")
        if self["data.bag_direction"] not in ("in", "out"):
            raise ConfigError("data.bag_direction must be in or out")
        if self["evaluate.gain"] not in ("exp", "linear"):
            raise ConfigError("evaluate.gain must be exp or linear")
        if not 0.0 <= self["model.dropout"] < 1.0:
            raise ConfigError("model.dropout must be in [0, 1)")
        for name in ("data.num_seeds", "data.top_n", "train.batch_size", "train.epochs",
                     "model.bins", "model.length", "embedding.dim", "rank.opponents"):
            if self[name] < 1:
                raise ConfigError(f"{name} must be positive")
        if self["model.bins"] < 2:
            raise ConfigError("model.bins must be at least 2")
        if self["run.threads"] < 0:
            raise ConfigError("run.threads must be >= 0")

    @property
    def threads(self) -> int:
        return self["run.threads"] or (os.cpu_count() or 1)


def describe_keys() -> str:
    lines = ["configuration keys (section.key = default: description):"]
    for k in KEYS:
        default = _format(k, k.default)
        lines.append(f"  {k.section}.{k.name} = {default or '<empty>'}: {k.help}")
    return "\n".join(lines)
