import os
import shutil

import pytest

from dynrel import cli
from dynrel.config import KEYS, RunConfig
from dynrel.dataio import ConfigError

TINY_MODEL = """
[data]
studied_period = 2016-06
num_seeds = 3
split = 0.34,0.33,0.33
[model]
hidden_units = 8
hidden_layers = 1
content_dim = 4
length = 12
filters = 3
windows = 3
time_dim = 4
bins = 6
[embedding]
dim = 8
walks_per_node = 3
walk_length = 10
[train]
epochs = 3
[run]
threads = 1
"""


def write_config(directory, raw, clickstream=None):
    clicks = clickstream or f"{raw}/clickstream-2016-05.tsv,{raw}/clickstream-2016-06.tsv"
    text = (f"[paths]\nabstracts = {raw}/abstracts.tsv\nlinks = {raw}/links.tsv\n"
            f"clickstream = {clicks}\npageviews = {raw}/pageviews.tsv\n"
            f"output_dir = {directory}/out\n" + TINY_MODEL)
    path = directory / "run.ini"
    path.write_text(text)
    return str(path)


def snapshot(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for f in files:
            p = os.path.join(root, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, directory)] = fh.read()
    return out


# -- configuration -----------------------------------------------------------------

def test_defaults_and_roundtrip():
    cfg = RunConfig()
    assert cfg["train.lr"] == 1e-3 and cfg["model.filters"] == (20, 25)
    cfg.set("model.alpha", "3.5")
    cfg.set("data.studied_period", "201606")
    back = RunConfig.from_text(cfg.dumps())
    assert back.values == cfg.values
    assert back["data.studied_period"] == "2016-06"


def test_unknown_key_and_section_rejected():
    with pytest.raises(ConfigError):
        RunConfig().set("model.bogus", "1")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[extras]\nfoo = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[model]\nalpah = 2\n")


@pytest.mark.parametrize("text", ["[model]\nalpha = fast\n", "[model]\nattention = maybe\n",
                                  "[data]\nstudied_period = June\n"])
def test_bad_values_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


@pytest.mark.parametrize("override", ["data.split=0.5,0.5,0.5", "model.alpha=0", "model.windows=5",
                                      "model.use_content=false"])
def test_validation(override):
    cfg = RunConfig()
    key, value = override.split("=")
    cfg.set(key, value)
    if override.startswith("model.use_content"):
        cfg.validate()  # one channel off is fine
        cfg.set("model.use_graph", "no")
        cfg.set("model.use_time", "0")
    with pytest.raises(ConfigError):
        cfg.validate()


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for k in KEYS:
        assert f"{k.section}.{k.name} =" in text
    assert "exit codes" in text


def test_cli_override_beats_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[model]\nalpha = 4\n")
    args = cli.build_parser().parse_args(["train", "-c", str(path), "-s", "model.alpha=7", "--seed", "3"])
    cfg = cli.resolve_config(args)
    assert cfg["model.alpha"] == 7.0 and cfg["run.seed"] == 3


# -- commands ------------------------------------------------------------------------

def test_unknown_override_exit_code(tmp_path):
    assert cli.main(["stats", "--output-dir", str(tmp_path), "-s", "model.nope=1"]) == cli.EXIT_INPUT


def test_missing_artifacts_exit_code(tmp_path):
    assert cli.main(["stats", "--output-dir", str(tmp_path / "none")]) == cli.EXIT_INPUT


def test_missing_input_file_exit_code(tmp_path, tiny_dir):
    cfg = write_config(tmp_path, tiny_dir, clickstream=str(tmp_path / "clickstream-2016-06.tsv"))
    assert cli.main(["ingest", "-c", cfg]) == cli.EXIT_INPUT


def test_full_pipeline_on_tiny(tmp_path, tiny_dir, capsys):
    cfg = write_config(tmp_path, tiny_dir)
    assert cli.main(["ingest", "-c", cfg]) == 0
    stats = capsys.readouterr().out
    assert "entities: 12" in stats and "seeds: 3" in stats and "candidates per seed: 3.33" in stats
    for cmd in ("build-dataset", "train", "rank", "evaluate", "stats"):
        assert cli.main([cmd, "-c", cfg]) == 0, cmd
    out = tmp_path / "out"
    for stage in ("corpus", "dataset", "model"):
        assert (out / stage / "manifest.json").exists()
        assert RunConfig.load(out / stage / "config.ini")["data.num_seeds"] == 3
    assert (out / "rankings.tsv").read_text().strip()
    assert (out / "metrics.tsv").read_text().startswith("metric\tcutoff\tvalue\tn_defined")
    assert not [p for p in os.listdir(out) if p.startswith(".")]


def test_ingest_idempotent(tmp_path, tiny_dir):
    cfg = write_config(tmp_path, tiny_dir)
    assert cli.main(["ingest", "-c", cfg]) == 0
    first = snapshot(tmp_path / "out")
    assert cli.main(["ingest", "-c", cfg]) == 0
    assert snapshot(tmp_path / "out") == first


def test_corrupt_input_leaves_no_partial_output(tmp_path, tiny_dir):
    raw = tmp_path / "raw"
    shutil.copytree(tiny_dir, raw)
    bad = raw / "clickstream-2016-06.tsv"
    bad.write_text(bad.read_text() + "garbage\n" * 200)
    cfg = write_config(tmp_path, raw)
    assert cli.main(["ingest", "-c", cfg]) == cli.EXIT_INPUT
    out = tmp_path / "out"
    assert not out.exists() or os.listdir(out) == []


def test_failed_rerun_keeps_previous_artifacts(tmp_path, tiny_dir):
    raw = tmp_path / "raw"
    shutil.copytree(tiny_dir, raw)
    cfg = write_config(tmp_path, raw)
    assert cli.main(["ingest", "-c", cfg]) == 0
    before = snapshot(tmp_path / "out")
    bad = raw / "clickstream-2016-06.tsv"
    bad.write_text(bad.read_text() + "garbage\n" * 200)
    assert cli.main(["ingest", "-c", cfg]) == cli.EXIT_INPUT
    assert snapshot(tmp_path / "out") == before


def test_modified_artifact_detected(tmp_path, tiny_dir):
    cfg = write_config(tmp_path, tiny_dir)
    assert cli.main(["ingest", "-c", cfg]) == 0
    assert cli.main(["build-dataset", "-c", cfg]) == 0
    with open(tmp_path / "out" / "corpus" / "navigation.tsv", "a") as fh:
        fh.write("1\t2\t2016-06\t99\n")
    assert cli.main(["train", "-c", cfg]) == cli.EXIT_INPUT


def test_upstream_change_makes_dataset_stale(tmp_path, tiny_dir):
    raw = tmp_path / "raw"
    shutil.copytree(tiny_dir, raw)
    cfg = write_config(tmp_path, raw)
    assert cli.main(["ingest", "-c", cfg]) == 0
    assert cli.main(["build-dataset", "-c", cfg]) == 0
    clicks = raw / "clickstream-2016-06.tsv"
    lines = clicks.read_text().splitlines()
    lines[0] = lines[0].rsplit("\t", 1)[0] + "\t777"
    clicks.write_text("\n".join(lines) + "\n")
    assert cli.main(["ingest", "-c", cfg]) == 0
    assert cli.main(["train", "-c", cfg]) == cli.EXIT_INPUT


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, tiny_dir):
    cfg = write_config(tmp_path, tiny_dir)
    assert cli.main(["ingest", "-c", cfg]) == 0
    assert cli.main(["build-dataset", "-c", cfg]) == 0
    code = cli.main(["train", "-c", cfg, "-s", "train.lr=1e300", "-s", "model.dropout=0"])
    assert code == cli.EXIT_NUMERIC
    assert not (tmp_path / "out" / "model").exists()


def test_gradcheck_command(tmp_path, capsys):
    args = ["gradcheck", "--output-dir", str(tmp_path), "-s", "model.hidden_units=8",
            "-s", "model.content_dim=4", "-s", "model.time_dim=4", "-s", "model.filters=3,4"]
    assert cli.main(args) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "input.series" in out


def test_synth_command(tmp_path, capsys):
    assert cli.main(["synth", str(tmp_path / "raw"), "--seed", "1"]) == 0
    names = os.listdir(tmp_path / "raw")
    assert "abstracts.tsv" in names and any(n.startswith("clickstream-") for n in names)
