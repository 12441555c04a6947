"""Trio model: summed channel scores, pairwise cross-entropy training, ranking."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .content import ContentNet
from .dataio import TrainingTriple
from .features import FeatureStore, TripleBatch
from .graph import GraphNet
from .nn import Adam, BatchNorm, GradCheckReport, Parameter, grad_check, load_checkpoint, \
    save_checkpoint, sigmoid
from .temporal import TimeEncoder, TimeNet

logger = logging.getLogger(__name__)

CLAMP = 1e-12
CHANNELS = ("content", "graph", "time")


class InputError(ValueError):
    """A batch lacks the inputs of an enabled channel."""


class DivergenceError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    use_content: bool = True
    use_graph: bool = True
    use_time: bool = True
    vocab_size: int = 0
    content_dim: int = 64
    hidden_layers: int = 2
    hidden_units: int = 128
    dropout: float = 0.2
    bins: int = 30
    channels: int = 1
    length: int = 27
    filters: tuple = (20, 25)
    windows: tuple = (5, 4)
    alpha: float = 2.0
    time_dim: int = 64
    attention: bool = True
    decay_convention: str = "standard"
    dtype: str = "float64"

    def __post_init__(self):
        self.filters = tuple(self.filters)
        self.windows = tuple(self.windows)
        if not (self.use_content or self.use_graph or self.use_time):
            raise ValueError("at least one channel must be enabled")
        if self.use_content and self.vocab_size < 1:
            raise ValueError("content channel needs a non-empty trigraph vocabulary")

    @property
    def hidden(self) -> tuple[int, ...]:
        return (self.hidden_units,) * self.hidden_layers

    @property
    def enabled(self) -> tuple[str, ...]:
        flags = (self.use_content, self.use_graph, self.use_time)
        return tuple(c for c, on in zip(CHANNELS, flags) if on)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 100
    epochs: int = 25
    patience: int = 5
    l2: float = 1e-6
    augment_swapped: bool = True
    seed: int = 0


class TrioModel:
    def __init__(self, config: ModelConfig, seed: int = 0, term_weights: np.ndarray | None = None):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        hidden, drop = config.hidden, config.dropout
        self.content = ContentNet(config.vocab_size, config.content_dim, hidden, drop, rng,
                                  term_weights, dtype) if config.use_content else None
        self.graph = GraphNet(config.bins, hidden, drop, rng, dtype) if config.use_graph else None
        if config.use_time:
            enc = TimeEncoder(config.channels, config.length, config.filters, config.windows,
                              config.alpha, config.time_dim, config.attention,
                              config.decay_convention, rng, dtype)
            self.time = TimeNet(enc, hidden, drop, rng, dtype)
        else:
            self.time = None
        self._phi: dict[str, np.ndarray] = {}
        self.input_grads: dict[str, np.ndarray] = {}

    # -- structure ----------------------------------------------------------

    def nets(self) -> dict:
        return {name: net for name, net in
                (("content", self.content), ("graph", self.graph), ("time", self.time))
                if net is not None}

    def parameters(self) -> list[Parameter]:
        return [p for net in self.nets().values() for p in net.parameters()]

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for net in self.nets().values():
            out.update(net.buffers())
        return out

    def batchnorms(self) -> list[BatchNorm]:
        return self.time.encoder.batchnorms() if self.time is not None else []

    def train(self, mode: bool = True) -> "TrioModel":
        for net in self.nets().values():
            net.train(mode)
        return self

    def eval(self) -> "TrioModel":
        return self.train(False)

    def state(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value.copy() for p in self.parameters()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value[...] = state[p.name]
        for bn in self.batchnorms():
            bn.load_buffers(state)

    # -- forward / backward -------------------------------------------------

    def phi(self, batch: TripleBatch) -> np.ndarray:
        """Summed raw score over the enabled channels."""
        total = np.zeros(len(batch), dtype=np.dtype(self.config.dtype))
        self._phi = {}
        if self.content is not None:
            if batch.words is None or batch.links is None:
                raise InputError("content channel enabled but batch has no content inputs")
            self._phi["content"] = self.content.forward(batch.words, batch.links)
        if self.graph is not None:
            if batch.h_pos is None or batch.h_neg is None:
                raise InputError("graph channel enabled but batch has no histograms")
            self._phi["graph"] = self.graph.forward(batch.h_pos, batch.h_neg)
        if self.time is not None:
            if batch.series is None:
                raise InputError("time channel enabled but batch has no series")
            self._phi["time"] = self.time.forward(batch.series)
        for v in self._phi.values():
            total = total + v
        return total

    def forward(self, batch: TripleBatch) -> np.ndarray:
        """Preference probability that ``pos`` outranks ``neg``."""
        return sigmoid(self.phi(batch))

    def backward_phi(self, grad: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate ``dL/dphi``; returns gradients w.r.t. the dense inputs."""
        out = {}
        for name, net in self.nets().items():
            g = net.backward(grad)
            if name == "graph":
                out["h_pos"], out["h_neg"] = g
            elif name == "time":
                out["series"] = g
        self.input_grads = out
        return out

    def l2_penalty(self) -> float:
        return float(sum(np.sum(p.value.astype(np.float64) ** 2) for p in self.parameters()))

    def loss(self, batch: TripleBatch, l2: float = 0.0, backward: bool = False) -> float:
        """Mean binary cross-entropy against ``batch.prob`` plus ``l2 * ||theta||^2``."""
        if batch.prob is None:
            raise InputError("loss needs supervision probabilities")
        y = self.forward(batch)
        yc = np.clip(y, CLAMP, 1.0 - CLAMP)
        p = batch.prob
        n = len(batch)
        data = -np.mean(p * np.log(yc) + (1.0 - p) * np.log(1.0 - yc))
        value = float(data) + l2 * self.l2_penalty()
        if backward:
            inside = (y > CLAMP) & (y < 1.0 - CLAMP)
            self.backward_phi(((y - p) / n * inside).astype(y.dtype))
            if l2:
                for prm in self.parameters():
                    prm.grad += 2.0 * l2 * prm.value
        return value

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.state(), {"model": asdict(self.config)})

    @classmethod
    def load(cls, path) -> "TrioModel":
        arrays, cfg = load_checkpoint(path)
        model = cls(ModelConfig(**cfg["model"]))
        model.load_state(arrays)
        return model


def model_config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]


# -- training ---------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def best(self) -> EpochRecord | None:
        for rec in self.epochs:
            if rec.epoch == self.best_epoch:
                return rec
        return None

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs], "best_epoch": self.best_epoch,
                "stopped_early": self.stopped_early}


def _augment(triples: Sequence[TrainingTriple]) -> list[TrainingTriple]:
    out = []
    for t in triples:
        out.append(t)
        out.append(t.swapped())
    return out


def evaluate_triples(model: TrioModel, features: FeatureStore, triples: Sequence[TrainingTriple],
                     l2: float = 0.0, batch_size: int = 1000) -> tuple[float, float]:
    """(loss, pairwise accuracy) in inference mode."""
    model.eval()
    total, correct = 0.0, 0
    for i in range(0, len(triples), batch_size):
        chunk = triples[i:i + batch_size]
        batch = features.triples(chunk, model.config.enabled)
        y = model.forward(batch)
        p = batch.prob
        yc = np.clip(y, CLAMP, 1 - CLAMP)
        total += float(-np.sum(p * np.log(yc) + (1 - p) * np.log(1 - yc)))
        correct += int(np.sum((y > 0.5) == (p > 0.5)))
    n = max(len(triples), 1)
    return total / n + l2 * model.l2_penalty(), correct / n


def train(model: TrioModel, features: FeatureStore, train_triples: Sequence[TrainingTriple],
          dev_triples: Sequence[TrainingTriple], config: TrainConfig | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainReport:
    """Mini-batch Adam with per-epoch dev evaluation and early stopping.

    The model is left holding the parameters of the best dev-loss epoch.
    """
    config = config or TrainConfig()
    if not train_triples or not dev_triples:
        raise ValueError("training and development sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    data = _augment(train_triples) if config.augment_swapped else list(train_triples)
    opt = Adam(model.parameters(), lr=config.lr)
    report = TrainReport()
    best_loss, best_state, wait = np.inf, model.state(), 0
    channels = model.config.enabled
    for epoch in range(config.epochs):
        model.train()
        perm = rng.permutation(len(data))
        seen, running = 0, 0.0
        for start in range(0, len(data), config.batch_size):
            idx = perm[start:start + config.batch_size]
            if idx.size < 2:
                continue
            batch = features.triples([data[i] for i in idx], channels)
            loss = model.loss(batch, config.l2, backward=True)
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became {loss} at epoch {epoch}, step {start // config.batch_size}")
            opt.step()
            running += loss * idx.size
            seen += idx.size
        dev_loss, dev_acc = evaluate_triples(model, features, dev_triples, config.l2)
        if not np.isfinite(dev_loss):
            raise DivergenceError(f"dev loss became {dev_loss} at epoch {epoch}")
        rec = EpochRecord(epoch, running / max(seen, 1), dev_loss, dev_acc)
        report.epochs.append(rec)
        logger.info("epoch %d train %.5f dev %.5f acc %.4f", epoch, rec.train_loss, dev_loss, dev_acc)
        if on_epoch is not None:
            on_epoch(rec)
        if dev_loss < best_loss:
            best_loss, best_state, wait = dev_loss, model.state(), 0
            report.best_epoch = epoch
        else:
            wait += 1
            if wait >= config.patience:
                report.stopped_early = True
                break
    model.load_state(best_state)
    model.eval()
    return report


# -- gradient verification --------------------------------------------------

def check_model_gradients(model: TrioModel, batch: TripleBatch, l2: float = 0.0,
                          eps: float = 1e-5, max_entries: int | None = None,
                          seed: int = 0) -> GradCheckReport:
    """Finite-difference check of the full loss w.r.t. every parameter and
    the dense inputs (histograms, series).

    Dropout must be disabled (rate 0) for the comparison to be meaningful.
    """
    keys = []
    if batch.h_pos is not None and model.graph is not None:
        keys += ["h_pos", "h_neg"]
    if batch.series is not None and model.time is not None:
        keys.append("series")
    inputs = [getattr(batch, k) for k in keys]
    names = [f"input.{k}" for k in keys]

    def forward():
        return np.asarray(model.loss(batch, l2))

    def backward(upstream):
        model.loss(batch, l2, backward=True)
        scale = float(upstream)
        for p in model.parameters():
            p.grad *= scale
        return [model.input_grads[k] * scale for k in keys]

    return grad_check(forward, backward, model.parameters(), inputs, names, eps=eps, seed=seed,
                      max_entries=max_entries)


def random_triple_batch(config: ModelConfig, n: int = 4, seed: int = 0) -> TripleBatch:
    """Random inputs shaped for ``config``; content rows are random sparse bags."""
    rng = np.random.default_rng(seed)
    b = TripleBatch(np.arange(n), np.arange(n), np.arange(n), np.zeros(n, dtype=np.int64),
                    prob=rng.uniform(0.55, 0.95, size=n))
    if config.use_content:
        def bags():
            m = sp.random(3 * n, config.vocab_size, density=min(1.0, 8 / config.vocab_size),
                          random_state=rng, format="csr")
            m.data = np.ceil(m.data * 3)
            return m
        b.words, b.links = bags(), bags()
    if config.use_graph:
        b.h_pos = np.log1p(rng.integers(0, 5, size=(n, config.bins))).astype(np.float64)
        b.h_neg = np.log1p(rng.integers(0, 5, size=(n, config.bins))).astype(np.float64)
    if config.use_time:
        b.series = rng.standard_normal((3 * n, config.channels, config.length))
    return b


# -- inference ----------------------------------------------------------------

PairScorer = Callable[[Sequence, Sequence, Sequence, Sequence[int]], np.ndarray]


class ModelScorer:
    """Bind a frozen model to its feature store as a ``PairScorer``."""

    def __init__(self, model: TrioModel, features: FeatureStore, chunk: int = 4096):
        self.model, self.features, self.chunk = model, features, chunk

    def __call__(self, sources, pos, neg, periods) -> np.ndarray:
        self.model.eval()
        out = []
        for i in range(0, len(sources), self.chunk):
            sl = slice(i, i + self.chunk)
            batch = self.features.batch(sources[sl], pos[sl], neg[sl], periods[sl],
                                        channels=self.model.config.enabled)
            out.append(self.model.forward(batch))
        return np.concatenate(out) if out else np.zeros(0)


@dataclass
class RankedList:
    source: object
    period: int
    items: list[tuple[object, float]]

    @property
    def candidates(self) -> list:
        return [c for c, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]


def rank_candidates(scorer: PairScorer, source, candidates: Sequence, period: int,
                    opponents: int = 20, seed: int = 0, round_robin: bool = False) -> RankedList:
    """Score each candidate by its mean preference over sampled opponents.

    With at most ``opponents`` rivals (or ``round_robin``) every other
    candidate is an opponent. Sorted by score desc, then candidate id.
    """
    cands = list(dict.fromkeys(candidates))
    if len(cands) < 2:
        return RankedList(source, period, [(c, 0.5) for c in cands])
    rng = np.random.default_rng(seed)
    pos, neg, owner = [], [], []
    for i, c in enumerate(cands):
        others = [o for o in cands if o != c]
        if not round_robin and len(others) > opponents:
            pick = rng.choice(len(others), size=opponents, replace=False)
            others = [others[j] for j in sorted(pick)]
        pos += [c] * len(others)
        neg += others
        owner += [i] * len(others)
    y = np.asarray(scorer([source] * len(pos), pos, neg, [period] * len(pos)), dtype=np.float64)
    owner = np.asarray(owner)
    sums = np.bincount(owner, weights=y, minlength=len(cands))
    cnt = np.bincount(owner, minlength=len(cands))
    scores = sums / cnt
    items = sorted(zip(cands, scores.tolist()), key=lambda cs: (-cs[1], cs[0]))
    return RankedList(source, period, items)


def write_rankings(lists: Iterable[RankedList], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rl in lists:
            for rank, (c, s) in enumerate(rl.items, 1):
                fh.write(f"{rl.source}\t{rank}\t{c}\t{s!r}\n")


def read_rankings(path) -> dict[int, list[tuple[int, float]]]:
    out: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s, r, c, score = line.rstrip("\n").split("\t")
            out.setdefault(int(s), []).append((int(r), int(c), float(score)))
    return {s: [(c, sc) for _, c, sc in sorted(rows)] for s, rows in out.items()}
