"""Command-line entry points: ingest, build-dataset, train, rank, evaluate, gradcheck, stats."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict

import numpy as np

from . import dataio
from .config import RunConfig, describe_keys
from .content import TrigraphVocabulary
from .dataio import ConfigError, FormatError, LeakageError
from .evaluation import build_proxy_groundtruth, evaluate_rankings
from .features import FeatureStore
from .graph import GraphEmbedding
from .nn import DimensionError
from .pipeline import EmbeddingConfig, build_embedding, build_feature_store, build_vocabulary
from .ranker import (DivergenceError, ModelConfig, ModelScorer, TrainConfig, TrioModel,
                     check_model_gradients, random_triple_batch, rank_candidates, read_rankings,
                     train, write_rankings)

logger = logging.getLogger("dynrel")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

CORPUS, DATASET, MODEL = "corpus", "dataset", "model"


class StaleError(RuntimeError):
    """An upstream artifact is missing or changed since it was consumed."""


# -- artifact bookkeeping ---------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(directory, upstream: dict | None = None) -> None:
    files = sorted(f for f in os.listdir(directory) if f != "manifest.json")
    manifest = {"outputs": {f: _sha256(os.path.join(directory, f)) for f in files},
                "upstream": upstream or {}}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest_digest(directory) -> str:
    return _sha256(os.path.join(directory, "manifest.json"))


def _verify(directory, stage: str) -> None:
    """Check a stage's outputs against its manifest and its own upstream links."""
    mpath = os.path.join(directory, "manifest.json")
    if not os.path.exists(mpath):
        raise StaleError(f"{stage} artifacts missing in {directory}; run the {stage} step first")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for name, digest in manifest["outputs"].items():
        path = os.path.join(directory, name)
        if not os.path.exists(path) or _sha256(path) != digest:
            raise StaleError(f"{stage} artifact {path} is missing or was modified")
    for up_dir, digest in manifest["upstream"].items():
        up = os.path.join(os.path.dirname(os.path.abspath(directory)), up_dir)
        if not os.path.exists(os.path.join(up, "manifest.json")) or _manifest_digest(up) != digest:
            raise StaleError(f"{stage} artifacts in {directory} are stale: {up_dir} changed since")


def _stage_dir(cfg: RunConfig, stage: str) -> str:
    return os.path.join(cfg["paths.output_dir"], stage)


def _publish(tmp: str, final: str) -> None:
    """Replace ``final`` with the finished ``tmp`` directory."""
    old = None
    if os.path.exists(final):
        old = final + ".old"
        if os.path.exists(old):
            shutil.rmtree(old)
        os.replace(final, old)
    os.replace(tmp, final)
    if old:
        shutil.rmtree(old)


def _staging(cfg: RunConfig, stage: str) -> str:
    os.makedirs(cfg["paths.output_dir"], exist_ok=True)
    return tempfile.mkdtemp(prefix=f".{stage}-", dir=cfg["paths.output_dir"])


def _log_config(cfg: RunConfig, command: str) -> None:
    logger.info("%s: seed=%d threads=%d", command, cfg["run.seed"], cfg.threads)
    for line in cfg.dumps().splitlines():
        if line.strip():
            logger.debug("  %s", line)


def _require(cfg: RunConfig, *keys: str) -> None:
    for k in keys:
        if not cfg[k]:
            raise ConfigError(f"{k} must be set")


def _studied(cfg: RunConfig) -> int:
    _require(cfg, "data.studied_period")
    return dataio.parse_period(cfg["data.studied_period"])


def _engines(cfg: RunConfig) -> tuple[str, ...]:
    return tuple(s.strip() for s in cfg["data.search_engines"].split(",") if s.strip())


# -- loading normalized artifacts --------------------------------------------

def _load_corpus(cfg: RunConfig):
    d = _stage_dir(cfg, CORPUS)
    _verify(d, CORPUS)
    corpus = dataio.load_corpus(os.path.join(d, "abstracts.tsv"), os.path.join(d, "links.tsv"))
    records = dataio.read_navigation(os.path.join(d, "navigation.tsv"))
    signals = [s.strip() for s in cfg["data.signals"].split(",") if s.strip()]
    pv_path = os.path.join(d, "pageviews.tsv")
    pageviews = dataio.read_pageviews(pv_path, signals=signals) if os.path.getsize(pv_path) else \
        dataio.PageviewTable(signals)
    return corpus, records, pageviews


def _load_dataset(cfg: RunConfig) -> dict:
    d = _stage_dir(cfg, DATASET)
    _verify(d, DATASET)
    out = {name: dataio.read_triples(os.path.join(d, f"{name}.tsv")) for name in ("train", "dev", "test")}
    with open(os.path.join(d, "seeds.json"), encoding="utf-8") as fh:
        out["meta"] = json.load(fh)
    return out


def _model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    m = cfg.section("model")
    return ModelConfig(vocab_size=vocab_size if m["use_content"] else 0, **m)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(seed=cfg["run.seed"], **cfg.section("train"))


def _embedding_config(cfg: RunConfig) -> EmbeddingConfig:
    return EmbeddingConfig(threads=cfg.threads, **cfg.section("embedding"))


def _feature_store(cfg, corpus, pageviews, model_cfg, vocab, embedding, studied) -> FeatureStore:
    return build_feature_store(corpus, pageviews, model_cfg, vocab, embedding, seed=cfg["run.seed"],
                               max_feature_period=studied - 1,
                               bag_direction=cfg["data.bag_direction"])


# -- commands -------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    _require(cfg, "paths.abstracts", "paths.clickstream")
    for key in ("paths.abstracts", "paths.links", "paths.pageviews"):
        if cfg[key] and not os.path.exists(cfg[key]):
            raise FileNotFoundError(f"{key}: {cfg[key]} not found")
    clicks = [p.strip() for p in cfg["paths.clickstream"].split(",") if p.strip()]
    for p in clicks:
        if not os.path.exists(p):
            raise FileNotFoundError(f"clickstream dump {p} not found")
    corpus = dataio.load_corpus(cfg["paths.abstracts"], cfg["paths.links"] or None)
    titles = dict(corpus.by_title)
    records = []
    for path in clicks:
        period = dataio.period_from_filename(path)
        parsed = dataio.parse_clickstream(path, period, titles)
        logger.info("%s: %d records, %d malformed, %d unresolved, %d ignored", os.path.basename(path),
                    len(parsed), parsed.malformed, parsed.unresolved, parsed.ignored)
        records.extend(parsed.records)
    signals = [s.strip() for s in cfg["data.signals"].split(",") if s.strip()]
    pageviews = dataio.read_pageviews(cfg["paths.pageviews"], titles, signals) if cfg["paths.pageviews"] \
        else dataio.PageviewTable(signals)

    tmp = _staging(cfg, CORPUS)
    try:
        dataio.write_corpus(corpus, os.path.join(tmp, "abstracts.tsv"), os.path.join(tmp, "links.tsv"))
        dataio.write_navigation(records, os.path.join(tmp, "navigation.tsv"))
        dataio.write_pageviews(pageviews, os.path.join(tmp, "pageviews.tsv"))
        cfg.dump(os.path.join(tmp, "config.ini"))
        _write_manifest(tmp)
        _publish(tmp, _stage_dir(cfg, CORPUS))
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(corpus_stats(corpus, records, cfg))
    return EXIT_OK


def corpus_stats(corpus, records, cfg: RunConfig) -> str:
    periods = sorted({r.period for r in records})
    lines = [f"entities: {len(corpus)}",
             f"links: {sum(len(corpus[e].links) for e in corpus.ids())}",
             f"navigation records: {len(records)}",
             f"periods: {', '.join(dataio.period_label(p) for p in periods) or '-'}"]
    if periods:
        studied = dataio.parse_period(cfg["data.studied_period"]) if cfg["data.studied_period"] \
            else periods[-1]
        current = dataio.records_at(records, studied)
        seeds = dataio.select_seeds(current, cfg["data.num_seeds"], _engines(cfg))
        sizes = [len(dataio.candidate_set(s, current, cfg["data.min_count"], cfg["data.top_n"]))
                 for s in seeds]
        lines += [f"studied period: {dataio.period_label(studied)}",
                  f"seeds: {len(seeds)}",
                  f"candidates per seed: {np.mean(sizes) if sizes else 0.0:.2f}"]
    return "\n".join(lines)


def cmd_build_dataset(cfg: RunConfig) -> int:
    studied = _studied(cfg)
    _, records, _ = _load_corpus(cfg)
    ds = dataio.build_dataset(records, studied, cfg["data.num_seeds"], cfg["data.split"],
                              cfg["run.seed"], engines=_engines(cfg), min_count=cfg["data.min_count"],
                              top_n=cfg["data.top_n"])
    tmp = _staging(cfg, DATASET)
    try:
        for name in ("train", "dev", "test"):
            dataio.write_triples(getattr(ds, name), os.path.join(tmp, f"{name}.tsv"))
        meta = {"studied_period": dataio.period_label(studied),
                "train_period": dataio.period_label(ds.train_period),
                "seeds": ds.seeds, "train": list(ds.split.train), "dev": list(ds.split.dev),
                "test": list(ds.split.test)}
        with open(os.path.join(tmp, "seeds.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(meta, fh, indent=1)
            fh.write("\n")
        cfg.dump(os.path.join(tmp, "config.ini"))
        _write_manifest(tmp, {CORPUS: _manifest_digest(_stage_dir(cfg, CORPUS))})
        _publish(tmp, _stage_dir(cfg, DATASET))
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"seeds: {len(ds.seeds)}  split: {'/'.join(map(str, ds.split.sizes()))}  "
          f"triples: {len(ds.train)}/{len(ds.dev)}/{len(ds.test)}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    studied = _studied(cfg)
    corpus, _, pageviews = _load_corpus(cfg)
    data = _load_dataset(cfg)
    if data["meta"]["studied_period"] != dataio.period_label(studied):
        raise StaleError("dataset was built for a different studied period; rerun build-dataset")
    dataio.check_leakage(data["train"] + data["dev"], studied)
    vocab = build_vocabulary(corpus) if cfg["model.use_content"] else None
    embedding = None
    if cfg["model.use_graph"]:
        embedding = GraphEmbedding.load(cfg["paths.embedding"]) if cfg["paths.embedding"] else \
            build_embedding(corpus, _embedding_config(cfg), cfg["run.seed"])
    model_cfg = _model_config(cfg, len(vocab) if vocab else 0)
    features = _feature_store(cfg, corpus, pageviews, model_cfg, vocab, embedding, studied)
    model = TrioModel(model_cfg, seed=cfg["run.seed"])
    report = train(model, features, data["train"], data["dev"], _train_config(cfg))

    tmp = _staging(cfg, MODEL)
    try:
        model.save(os.path.join(tmp, "model.npz"))
        if vocab is not None:
            vocab.save(os.path.join(tmp, "vocab.tsv"))
        if embedding is not None:
            embedding.save(os.path.join(tmp, "embedding.txt"))
        with open(os.path.join(tmp, "train_report.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report.to_dict(), fh, indent=1)
            fh.write("\n")
        cfg.dump(os.path.join(tmp, "config.ini"))
        _write_manifest(tmp, {CORPUS: _manifest_digest(_stage_dir(cfg, CORPUS)),
                              DATASET: _manifest_digest(_stage_dir(cfg, DATASET))})
        _publish(tmp, _stage_dir(cfg, MODEL))
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    best = report.best
    print(f"epochs: {len(report.epochs)}  best epoch: {report.best_epoch}  "
          f"dev loss: {best.dev_loss:.5f}  dev accuracy: {best.dev_accuracy:.4f}")
    return EXIT_OK


def _load_model(cfg: RunConfig):
    d = _stage_dir(cfg, MODEL)
    _verify(d, MODEL)
    model = TrioModel.load(os.path.join(d, "model.npz"))
    vocab = TrigraphVocabulary.load(os.path.join(d, "vocab.tsv")) if model.config.use_content else None
    emb = GraphEmbedding.load(os.path.join(d, "embedding.txt")) if model.config.use_graph else None
    return model, vocab, emb


def cmd_rank(cfg: RunConfig, sources: list[int] | None = None) -> int:
    studied = _studied(cfg)
    corpus, records, pageviews = _load_corpus(cfg)
    model, vocab, emb = _load_model(cfg)
    features = _feature_store(cfg, corpus, pageviews, model.config, vocab, emb, studied)
    if not sources:
        if cfg["rank.sources"]:
            sources = [int(s) for s in cfg["rank.sources"].split(",") if s.strip()]
        else:
            sources = _load_dataset(cfg)["meta"]["test"]
    current = dataio.records_at(records, studied)
    scorer = ModelScorer(model, features)
    lists = []
    for i, s in enumerate(sources):
        if s not in corpus:
            raise ConfigError(f"unknown source entity {s}")
        cands = dataio.candidate_set(s, current, cfg["data.min_count"], cfg["data.top_n"])
        lists.append(rank_candidates(scorer, s, cands, studied, cfg["rank.opponents"],
                                     cfg["run.seed"] + i, cfg["rank.round_robin"]))
    out = os.path.join(cfg["paths.output_dir"], "rankings.tsv")
    write_rankings(lists, out)
    cfg.dump(os.path.join(cfg["paths.output_dir"], "rankings.config.ini"))
    print(f"ranked {len(lists)} sources -> {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    studied = _studied(cfg)
    _, records, _ = _load_corpus(cfg)
    path = os.path.join(cfg["paths.output_dir"], "rankings.tsv")
    if not os.path.exists(path):
        raise StaleError(f"no rankings at {path}; run rank first")
    rankings = read_rankings(path)
    truth = build_proxy_groundtruth(records, sorted(rankings), studied, cfg["data.top_n"],
                                    cfg["data.min_count"])
    cap = cfg["evaluate.grade_cap"] or None
    report = evaluate_rankings(rankings, truth, cfg["evaluate.gain"], cap)
    report.write(os.path.join(cfg["paths.output_dir"], "metrics.tsv"))
    summary = report.summary()
    with open(os.path.join(cfg["paths.output_dir"], "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary)
    cfg.dump(os.path.join(cfg["paths.output_dir"], "metrics.config.ini"))
    print(summary, end="")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, max_entries: int | None = 20, tol: float = 1e-4) -> int:
    m = dict(cfg.section("model"), dropout=0.0, dtype="float64")
    model_cfg = ModelConfig(vocab_size=200 if m["use_content"] else 0, **m)
    model = TrioModel(model_cfg, seed=cfg["run.seed"])
    model.train()
    batch = random_triple_batch(model_cfg, seed=cfg["run.seed"])
    report = check_model_gradients(model, batch, l2=cfg["train.l2"], max_entries=max_entries,
                                   seed=cfg["run.seed"])
    print(report.table(tol))
    ok = report.passed(tol)
    print(f"max relative error {report.max_error:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_stats(cfg: RunConfig) -> int:
    corpus, records, _ = _load_corpus(cfg)
    print(corpus_stats(corpus, records, cfg))
    d = _stage_dir(cfg, DATASET)
    if os.path.exists(os.path.join(d, "manifest.json")):
        data = _load_dataset(cfg)
        meta = data["meta"]
        print(f"split: {len(meta['train'])}/{len(meta['dev'])}/{len(meta['test'])}")
        print(f"triples: {len(data['train'])}/{len(data['dev'])}/{len(data['test'])}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig, directory: str, seed: int) -> int:
    from .synthetic import SyntheticConfig, generate

    world = generate(SyntheticConfig(), seed=seed)
    paths = world.write_raw(directory)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    print(f"studied period: {dataio.period_label(world.studied_period)}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

COMMANDS = ("ingest", "build-dataset", "train", "rank", "evaluate", "gradcheck", "stats", "synth")


def build_parser() -> argparse.ArgumentParser:
    epilog = describe_keys() + "\n\nexit codes: 0 success, 2 input/config error, 3 numeric failure"
    parser = argparse.ArgumentParser(
        prog="dynrel", description="Time-aware entity relatedness ranking from navigation data.",
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI file with [section] key = value entries")
    common.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    common.add_argument("--threads", type=int, help="shorthand for --set run.threads=N")
    common.add_argument("--output-dir", help="shorthand for --set paths.output_dir=DIR")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "normalize raw dumps into the corpus directory",
        "build-dataset": "select seeds, split them and emit training triples",
        "train": "train the ranking model with early stopping",
        "rank": "rank the candidates of source entities",
        "evaluate": "score rankings against navigation-derived ground truth",
        "gradcheck": "finite-difference check of all model gradients",
        "stats": "summary statistics of ingested data",
        "synth": "write a synthetic raw corpus with planted signals",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name], epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "rank":
            p.add_argument("sources", nargs="*", type=int, help="source entity ids")
        if name == "gradcheck":
            p.add_argument("--max-entries", type=int, default=20,
                           help="entries checked per tensor; 0 checks all")
        if name == "synth":
            p.add_argument("directory", help="where to write the raw files")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value)
    if args.seed is not None:
        cfg.set("run.seed", str(args.seed))
    if args.threads is not None:
        cfg.set("run.threads", str(args.threads))
    if args.output_dir is not None:
        cfg.set("paths.output_dir", args.output_dir)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args)
        _log_config(cfg, args.command)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "build-dataset":
            return cmd_build_dataset(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "rank":
            return cmd_rank(cfg, args.sources)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.max_entries or None)
        if args.command == "stats":
            return cmd_stats(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, args.directory, cfg["run.seed"])
    except (DivergenceError, FloatingPointError) as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, LeakageError, StaleError, DimensionError, FileNotFoundError,
            ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
