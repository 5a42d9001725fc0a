import json
import os
import re
import stat
import subprocess
import sys

import pytest

from sqalab.cli import config_hash, load_config, main
from sqalab.dataset import read_manifest
from sqalab.errors import ConfigError
from sqalab.synthgen import make_noise_corpus, write_class_tree

COMMENT_RE = re.compile(r"^# seed=\d+ config_hash=[0-9a-f]{16}$")


def write_cfg(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    return str(path)


# --- configuration ----------------------------------------------------------

def test_defaults_and_file_overrides(tmp_path):
    cfg = load_config(None, {})
    assert cfg["run"]["seed"] == 0
    assert cfg["train"]["epochs"] == 500
    assert cfg["train"]["lr"] == 1e-4
    assert cfg["train"]["batch_size"] == 32
    path = write_cfg(tmp_path, "[run]\nseed = 9\n[train]\nepochs = 3\n")
    cfg = load_config(path, {})
    assert cfg["run"]["seed"] == 9
    assert cfg["train"]["epochs"] == 3
    assert cfg["train"]["lr"] == 1e-4  # untouched default


def test_flags_beat_config_file(tmp_path):
    path = write_cfg(tmp_path, "[run]\nseed = 9\n")
    cfg = load_config(path, {("run", "seed"): 7, ("train", "lr"): None})
    assert cfg["run"]["seed"] == 7
    assert cfg["train"]["lr"] == 1e-4  # None overrides are ignored


def test_config_rejects_unknown_names(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, "[running]\nseed = 1\n"), {})
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, "[run]\nseeed = 1\n"), {})
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, "[run\nbroken"), {})
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.toml"), {})


def test_config_hash_ignores_paths_and_threads():
    a = load_config(None, {})
    b = load_config(None, {("run", "out_dir"): "/elsewhere",
                           ("run", "threads"): 4})
    c = load_config(None, {("run", "seed"): 1})
    d = load_config(None, {("train", "lr"): 1e-3})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert config_hash(a) != config_hash(d)
    assert re.fullmatch(r"[0-9a-f]{16}", config_hash(a))


# --- exit codes without a run directory --------------------------------------

def test_exit_codes_without_artifacts(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.toml")]) == 2
    # missing manifest is a data error, not a crash
    assert main(["label", "--out-dir", str(tmp_path / "empty")]) == 3


# --- pipeline -----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """synth + label on a 20-utterance corpus, shared by the tests below.

    20 clean clips give every single class exactly two entries and every
    pair class at least three, so the probe's stratified split stays legal.
    """
    root = str(tmp_path_factory.mktemp("run"))
    cfg = tmp_path_factory.mktemp("cfgdir") / "small.toml"
    cfg.write_text(
        "[clean]\ncount = 20\n"
        "[noise]\nper_class = 1\n"
        "[dataset]\nn_train = 14\nn_val = 3\nn_test = 3\n"
        "[train]\nmodel = \"dnsmos\"\nwidth_scale = 0.0625\n"
        "epochs = 2\nbatch_size = 8\nlr = 1e-3\n")
    args = ["--config", str(cfg), "--out-dir", root, "--threads", "1"]
    assert main(["synth"] + args) == 0
    assert main(["label"] + args) == 0
    return root, args


def test_synth_writes_valid_manifest(small_run):
    root, _ = small_run
    manifest = read_manifest(os.path.join(root, "manifest.jsonl"))
    assert len(manifest.entries) == 40
    assert {e.split for e in manifest.entries} == {"train", "val", "test"}
    header = json.loads(open(os.path.join(root, "manifest.jsonl")).readline())
    assert header["seed"] == 0
    assert re.fullmatch(r"[0-9a-f]{16}", header["config_hash"])


def test_label_fills_all_entries_and_skips_done(small_run):
    root, args = small_run
    manifest = read_manifest(os.path.join(root, "manifest.jsonl"))
    for e in manifest.entries:
        assert "proxy" in e.labels
        assert 1.0 <= e.labels["proxy"] <= 5.0
    # second run labels nothing new
    assert main(["label"] + args) == 0
    again = read_manifest(os.path.join(root, "manifest.jsonl"))
    for a, b in zip(manifest.entries, again.entries):
        assert a.labels == b.labels


def test_train_eval_probe_pca(small_run):
    root, args = small_run
    assert main(["train"] + args) == 0
    ckpt = os.path.join(root, "checkpoints", "dnsmos_proxy.ckpt")
    assert os.path.exists(ckpt)

    log = open(os.path.join(root, "reports", "train_dnsmos_proxy.csv")).read()
    lines = log.splitlines()
    assert COMMENT_RE.match(lines[0])
    assert lines[1] == "epoch,train_mse,val_mse,val_pcc"
    assert len(lines) == 4  # two epochs logged

    assert main(["eval", "--checkpoint", ckpt, "--split", "val"] + args) == 0
    report = open(os.path.join(root, "reports", "eval_dnsmos_proxy_val.csv")).read()
    rlines = report.splitlines()
    assert COMMENT_RE.match(rlines[0])
    assert rlines[1] == "model,label_metric,split,mse,pcc,srcc,top1,top3"
    row = rlines[2].split(",")
    assert row[0] == "dnsmos" and row[2] == "val"
    assert float(row[3]) >= 0.0

    assert main(["probe", "--checkpoint", ckpt, "--k", "1"] + args) == 0
    probe_report = os.path.join(root, "reports", "probe_dnsmos.csv")
    assert os.path.exists(probe_report)
    prow = open(probe_report).read().splitlines()[2].split(",")
    assert prow[0] == "dnsmos"
    assert 0.0 <= float(prow[6]) <= 1.0

    assert main(["probe", "--baseline", "mfcc", "--k", "1"] + args) == 0
    assert os.path.exists(os.path.join(root, "reports", "probe_mfcc.csv"))

    assert main(["pca", "--baseline", "random-projection"] + args) == 0
    figures = os.listdir(os.path.join(root, "figures"))
    assert "pca_random_projection.csv" in figures
    assert "pca_random_projection.svg" in figures


def test_config_errors_on_valid_run(small_run):
    root, args = small_run
    # probe has neither a checkpoint nor a baseline
    assert main(["probe"] + args) == 2
    # a non-proxy metric cannot be computed without an external command
    assert main(["label", "--metric", "pesq"] + args) == 2


def test_provider_failure_exit_code(small_run, tmp_path):
    _, args = small_run
    script = tmp_path / "broken.sh"
    script.write_text("#!/bin/sh\nexit 5\n")
    script.chmod(script.stat().st_mode | stat.S_IXUSR)
    code = main(["label", "--metric", "ext",
                 "--label-cmd", f"{script} {{clean}} {{degraded}}"] + args)
    assert code == 4


def test_eval_rejects_missing_checkpoint(small_run, tmp_path):
    _, args = small_run
    assert main(["eval", "--checkpoint", str(tmp_path / "no.ckpt")] + args) == 3


def test_seed_flag_beats_config_seed(tmp_path):
    cfg = write_cfg(tmp_path, "[run]\nseed = 5\n[clean]\ncount = 3\n"
                              "[noise]\nper_class = 1\n"
                              "[dataset]\nn_train = 1\nn_val = 1\nn_test = 1\n")
    root = str(tmp_path / "seeded")
    assert main(["synth", "--config", cfg, "--seed", "7",
                 "--out-dir", root, "--threads", "1"]) == 0
    header = json.loads(open(os.path.join(root, "manifest.jsonl")).readline())
    assert header["seed"] == 7


def test_probe_on_class_tree(tmp_path):
    clips, labels = make_noise_corpus(2, seed=4, duration_s=1.0)
    tree = str(tmp_path / "tree")
    write_class_tree(tree, clips, labels)
    root = str(tmp_path / "out")
    assert main(["probe", "--wav-dir", tree, "--baseline", "mfcc",
                 "--k", "1", "--out-dir", root, "--threads", "1"]) == 0
    report = open(os.path.join(root, "reports", "probe_mfcc.csv")).read()
    assert 0.0 <= float(report.splitlines()[2].split(",")[6]) <= 1.0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sqalab.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("synth", "label", "train", "probe", "pca", "eval"):
        assert name in proc.stdout
