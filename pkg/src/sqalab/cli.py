"""Pipeline orchestration: synth | label | train | probe | eval | pca.

Configuration comes from a TOML file with command-line overrides (flags
win). Every artifact embeds the run seed and a hash of the effective
config; with --threads 1 a rerun of the same config and seed reproduces
manifests, checkpoints and reports byte for byte.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import dataset as ds
from . import labeling, probe, synthgen
from .audio_io import ingest_wav, read_wav
from .dsp import mel_spectrogram, stft_log_magnitude
from .errors import (
    AudioFormatError,
    CheckpointError,
    ConfigError,
    DegenerateInput,
    InvalidInput,
    ProviderError,
    SqaError,
)
from .metrics import mse, pcc, srcc
from .neural import TrainConfig, load_checkpoint, save_checkpoint, train_model
from .neural.model import BUILDERS
from .neural.train import EpochStats, predict_batched

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PROVIDER = 4

DEFAULTS = {
    "run": {"seed": 0, "out_dir": "runs/default", "threads": 0},
    "clean": {"kind": "synthetic", "dir": "", "count": 320,
              "duration_s": 10.0},
    "noise": {"kind": "synthetic", "dir": "", "per_class": 2,
              "duration_s": 10.0},
    "dataset": {"n_train": 0, "n_val": 0, "n_test": 0},
    "label": {"metric": "proxy", "command": ""},
    "train": {"model": "dnsmos_plus", "width_scale": 1.0, "epochs": 500,
              "batch_size": 32, "lr": 1e-4, "metric": "proxy",
              "best_val": False},
    "probe": {"k": 15, "train_frac": 0.7, "rp_dim": 128,
              "mfcc_aggregate": "flatten"},
}

REPORT_HEADER = "model,label_metric,split,mse,pcc,srcc,top1,top3\n"


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} not found")
        with open(path, "rb") as f:
            try:
                user = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"cannot parse {path}: {e}") from e
        for sec, vals in user.items():
            if sec not in cfg:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, value in vals.items():
                if key not in cfg[sec]:
                    raise ConfigError(f"unknown config key {sec}.{key}")
                cfg[sec][key] = value
    for (sec, key), value in overrides.items():
        if value is not None:
            cfg[sec][key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects artifact content (not paths/threads)."""
    hashed = {sec: {k: v for k, v in vals.items()}
              for sec, vals in cfg.items()}
    hashed["run"] = {"seed": cfg["run"]["seed"]}
    blob = json.dumps(hashed, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _limit_threads(n: int):
    if n and n > 0:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)


def _run_paths(cfg: dict) -> dict:
    root = cfg["run"]["out_dir"]
    paths = {"root": root,
             "manifest": os.path.join(root, "manifest.jsonl"),
             "checkpoints": os.path.join(root, "checkpoints"),
             "reports": os.path.join(root, "reports"),
             "figures": os.path.join(root, "figures")}
    return paths


def _artifact_comment(cfg: dict) -> str:
    return f"# seed={cfg['run']['seed']} config_hash={config_hash(cfg)}\n"


# --- corpora --------------------------------------------------------------

def _load_dir_corpus(directory: str, duration_s: float | None) -> list:
    files = sorted(glob.glob(os.path.join(directory, "**", "*.wav"),
                             recursive=True))
    if not files:
        raise ConfigError(f"no .wav files under {directory}")
    clips = []
    for path in files:
        cid = os.path.splitext(os.path.relpath(path, directory))[0]
        cid = cid.replace(os.sep, "_")
        clip = ingest_wav(path, target_seconds=duration_s)
        clip.source_id = cid
        clips.append(clip)
    return clips


def _clean_corpus(cfg: dict) -> list:
    sec = cfg["clean"]
    if sec["kind"] == "synthetic":
        return synthgen.make_speech_corpus(int(sec["count"]),
                                           cfg["run"]["seed"],
                                           float(sec["duration_s"]))
    if sec["kind"] == "dir":
        if not sec["dir"] or not os.path.isdir(sec["dir"]):
            raise ConfigError(f"clean.dir {sec['dir']!r} is not a directory")
        return _load_dir_corpus(sec["dir"], float(sec["duration_s"]))
    raise ConfigError(f"clean.kind must be synthetic|dir, got {sec['kind']!r}")


def _noise_corpus(cfg: dict) -> list:
    sec = cfg["noise"]
    if sec["kind"] == "synthetic":
        clips, _ = synthgen.make_noise_corpus(int(sec["per_class"]),
                                              cfg["run"]["seed"],
                                              float(sec["duration_s"]))
        return clips
    if sec["kind"] == "dir":
        if not sec["dir"] or not os.path.isdir(sec["dir"]):
            raise ConfigError(f"noise.dir {sec['dir']!r} is not a directory")
        return _load_dir_corpus(sec["dir"], None)
    raise ConfigError(f"noise.kind must be synthetic|dir, got {sec['kind']!r}")


def _split_counts(cfg: dict, n_clean: int) -> dict:
    sec = cfg["dataset"]
    n_train, n_val = int(sec["n_train"]), int(sec["n_val"])
    n_test = int(sec["n_test"])
    if n_train + n_val + n_test == 0:
        n_val = max(1, int(round(0.15 * n_clean)))
        n_test = max(1, int(round(0.15 * n_clean)))
        n_train = n_clean - n_val - n_test
    if n_train <= 0:
        raise ConfigError("train split is empty; check dataset sizes")
    return {"train": n_train, "val": n_val, "test": n_test}


# --- subcommands ----------------------------------------------------------

def cmd_synth(cfg: dict, args) -> int:
    clean = _clean_corpus(cfg)
    noise = _noise_corpus(cfg)
    counts = _split_counts(cfg, len(clean))
    paths = _run_paths(cfg)
    os.makedirs(paths["root"], exist_ok=True)
    manifest = ds.synthesize_dataset(
        clean, noise, cfg["run"]["seed"], counts, paths["root"],
        config_hash=config_hash(cfg),
        codec_command=args.external_codec or None)
    problems = ds.validate_manifest(manifest, root=paths["root"])
    if problems:
        for p in problems:
            print(f"invariant violation: {p}", file=sys.stderr)
        raise InvalidInput(f"{len(problems)} manifest invariant violations")
    print(f"synthesized {len(manifest.entries)} clips "
          f"({counts['train']}/{counts['val']}/{counts['test']} clean "
          f"train/val/test) -> {paths['manifest']}")
    return EXIT_OK


def cmd_label(cfg: dict, args) -> int:
    paths = _run_paths(cfg)
    manifest = ds.read_manifest(paths["manifest"])
    metric = cfg["label"]["metric"]
    command = cfg["label"]["command"]
    if metric != "proxy" and not command:
        raise ConfigError(f"metric {metric!r} needs label.command")
    labeler = None
    if command:
        labeler = labeling.ExternalLabeler(command, metric_name=metric)
    fresh = 0
    for entry in manifest.entries:
        if metric in entry.labels:
            continue
        clean, degraded = ds.load_entry_audio(entry, paths["root"])
        if labeler is not None:
            score = labeler.score(clean, degraded, entry.clip_id)
        else:
            score = labeling.proxy_label(clean, degraded)
        entry.labels[metric] = float(score)
        fresh += 1
    ds.write_manifest(manifest, paths["manifest"])
    print(f"labeled {fresh} entries with {metric} "
          f"({len(manifest.entries) - fresh} cached)")
    return EXIT_OK


def _featurize_entries(entries, root: str, input_kind: str) -> np.ndarray:
    feats = []
    for e in entries:
        clip = read_wav(os.path.join(root, e.degraded_path))
        if input_kind == "LogMel":
            f = mel_spectrogram(clip).values
        else:
            f = stft_log_magnitude(clip).values
        feats.append(f.astype(np.float32))
    return np.stack(feats)


def _labels_of(entries, metric: str) -> np.ndarray:
    missing = [e.clip_id for e in entries if metric not in e.labels]
    if missing:
        raise InvalidInput(
            f"{len(missing)} entries lack {metric!r} labels "
            f"(run the label step first); first: {missing[0]}")
    return np.array([e.labels[metric] for e in entries])


def cmd_train(cfg: dict, args) -> int:
    paths = _run_paths(cfg)
    manifest = ds.read_manifest(paths["manifest"])
    tsec = cfg["train"]
    model_name, metric = tsec["model"], tsec["metric"]
    if model_name not in BUILDERS:
        raise ConfigError(f"train.model must be one of {sorted(BUILDERS)}")
    train_e = manifest.by_split("train")
    val_e = manifest.by_split("val")
    if not train_e or not val_e:
        raise InvalidInput("manifest needs non-empty train and val splits")
    train_y = _labels_of(train_e, metric)
    val_y = _labels_of(val_e, metric)

    model = BUILDERS[model_name](width_scale=float(tsec["width_scale"]),
                                 seed=cfg["run"]["seed"])
    train_x = _featurize_entries(train_e, paths["root"], model.input_kind)
    val_x = _featurize_entries(val_e, paths["root"], model.input_kind)

    os.makedirs(paths["reports"], exist_ok=True)
    os.makedirs(paths["checkpoints"], exist_ok=True)
    log_path = os.path.join(paths["reports"],
                            f"train_{model_name}_{metric}.csv")
    tc = TrainConfig(epochs=int(tsec["epochs"]),
                     batch_size=int(tsec["batch_size"]),
                     lr=float(tsec["lr"]), seed=cfg["run"]["seed"],
                     best_val=bool(tsec["best_val"]))
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(_artifact_comment(cfg))
        log.write("epoch,train_mse,val_mse,val_pcc\n")

        def on_epoch(st: EpochStats):
            log.write(f"{st.epoch},{st.train_mse:.8g},{st.val_mse:.8g},"
                      f"{st.val_pcc:.8g}\n")
            log.flush()
            print(f"epoch {st.epoch}: train {st.train_mse:.4f} "
                  f"val {st.val_mse:.4f} pcc {st.val_pcc:.3f}")

        result = train_model(model, train_x, train_y, val_x, val_y, tc,
                             on_epoch=on_epoch)

    meta = {"seed": cfg["run"]["seed"], "config_hash": config_hash(cfg),
            "label_metric": metric, "epochs": int(tsec["epochs"]),
            "best_epoch": result.best_epoch,
            "selected": "best_val" if tc.best_val else "last"}
    ckpt = os.path.join(paths["checkpoints"], f"{model_name}_{metric}.ckpt")
    save_checkpoint(model, ckpt, meta=meta)
    print(f"wrote {ckpt} (val MSE {result.history[-1].val_mse:.4f})")
    return EXIT_OK


def _load_probe_clips(cfg: dict, args):
    """(clips, labels): from the manifest (class = composite name) or from
    a class-subdirectory tree (class = directory name)."""
    if args.wav_dir:
        files = sorted(glob.glob(os.path.join(args.wav_dir, "*", "*.wav")))
        if not files:
            raise ConfigError(f"no <class>/<clip>.wav files in {args.wav_dir}")
        clips, labels = [], []
        for path in files:
            label = os.path.basename(os.path.dirname(path))
            cid = f"{label}/{os.path.splitext(os.path.basename(path))[0]}"
            clip = read_wav(path)
            clip.source_id = cid
            clips.append(clip)
            labels.append(label)
        return clips, labels
    paths = _run_paths(cfg)
    manifest = ds.read_manifest(paths["manifest"])
    clips, labels = [], []
    for e in manifest.entries:
        clip = read_wav(os.path.join(paths["root"], e.degraded_path))
        clip.source_id = e.clip_id
        clips.append(clip)
        labels.append(e.class_name)
    return clips, labels


def _probe_embeddings(cfg: dict, args) -> probe.EmbeddingSet:
    clips, labels = _load_probe_clips(cfg, args)
    psec = cfg["probe"]
    if args.baseline == "random-projection":
        return probe.random_projection_features(
            clips, labels, out_dim=int(psec["rp_dim"]),
            seed=cfg["run"]["seed"])
    if args.baseline == "mfcc":
        return probe.mfcc_features(clips, labels,
                                   aggregate=psec["mfcc_aggregate"])
    if not args.checkpoint:
        raise ConfigError("probe needs --checkpoint or --baseline")
    model, _ = load_checkpoint(args.checkpoint)
    return probe.extract_latents(model, clips, labels)


def _write_probe_report(cfg: dict, path: str, source: str, acc: dict):
    with open(path, "w", encoding="utf-8") as f:
        f.write(_artifact_comment(cfg))
        f.write(REPORT_HEADER)
        f.write(f"{source},,probe,,,,{acc['top1']:.6g},{acc['top3']:.6g}\n")


def _pca_export(cfg: dict, emb: probe.EmbeddingSet, tag: str):
    paths = _run_paths(cfg)
    os.makedirs(paths["figures"], exist_ok=True)
    coords, ratios = probe.pca_2d(emb)
    csv_path = os.path.join(paths["figures"], f"pca_{tag}.csv")
    svg_path = os.path.join(paths["figures"], f"pca_{tag}.svg")
    probe.export_pca_csv(csv_path, emb, coords)
    probe.render_pca_svg(svg_path, emb, coords, ratios)
    print(f"wrote {csv_path} and {svg_path} "
          f"(explained variance {ratios[0]:.1%}/{ratios[1]:.1%})")


def cmd_probe(cfg: dict, args) -> int:
    psec = cfg["probe"]
    emb = _probe_embeddings(cfg, args)
    train, test = probe.stratified_split(
        emb, train_frac=float(psec["train_frac"]), seed=cfg["run"]["seed"])
    acc = probe.probe_accuracy(train, test, k=int(psec["k"]))
    paths = _run_paths(cfg)
    os.makedirs(paths["reports"], exist_ok=True)
    report = os.path.join(paths["reports"], f"probe_{emb.source}.csv")
    _write_probe_report(cfg, report, emb.source, acc)
    print(f"{emb.source}: top-1 {acc['top1']:.4f} top-3 {acc['top3']:.4f} "
          f"({acc['n_train']} train / {acc['n_test']} test) -> {report}")
    if args.pca:
        _pca_export(cfg, test, emb.source)
    return EXIT_OK


def cmd_pca(cfg: dict, args) -> int:
    emb = _probe_embeddings(cfg, args)
    _pca_export(cfg, emb, emb.source)
    return EXIT_OK


def cmd_eval(cfg: dict, args) -> int:
    paths = _run_paths(cfg)
    manifest = ds.read_manifest(paths["manifest"])
    metric = cfg["train"]["metric"]
    entries = manifest.by_split(args.split)
    if not entries:
        raise InvalidInput(f"manifest has no {args.split} entries")
    y = _labels_of(entries, metric)
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    model, meta = load_checkpoint(args.checkpoint)
    x = _featurize_entries(entries, paths["root"], model.input_kind)
    preds = predict_batched(model, x)
    row_mse = mse(preds, y)
    try:
        row_pcc = pcc(preds, y)
        row_srcc = srcc(preds, y)
    except DegenerateInput:
        row_pcc = row_srcc = float("nan")
    os.makedirs(paths["reports"], exist_ok=True)
    report = os.path.join(paths["reports"],
                          f"eval_{model.name}_{metric}_{args.split}.csv")
    with open(report, "w", encoding="utf-8") as f:
        f.write(_artifact_comment(cfg))
        f.write(REPORT_HEADER)
        f.write(f"{model.name},{metric},{args.split},{row_mse:.6g},"
                f"{row_pcc:.6g},{row_srcc:.6g},,\n")
    print(f"{model.name} on {args.split}: MSE {row_mse:.4f} "
          f"PCC {row_pcc:.4f} SRCC {row_srcc:.4f} -> {report}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="root RNG seed")
    common.add_argument("--out-dir", help="run directory")
    common.add_argument("--threads", type=int,
                        help="cap numeric library threads (1 = reproducible)")

    parser = argparse.ArgumentParser(
        prog="sqalab",
        description="Deterministic speech-quality lab: synthesize an "
                    "impairment corpus, train quality nets, probe latents.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="synthesize the degraded corpus + manifest")
    p.add_argument("--external-codec", default="",
                   help="codec command template with {in} {out} {bitrate}")

    p = sub.add_parser("label", parents=[common],
                       help="attach quality labels to manifest entries")
    p.add_argument("--metric", help="label metric name (default proxy)")
    p.add_argument("--label-cmd",
                   help="external scorer template with {clean} {degraded}")

    p = sub.add_parser("train", parents=[common],
                       help="train a quality model on labeled entries")
    p.add_argument("--model", choices=sorted(BUILDERS))
    p.add_argument("--metric")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--width-scale", type=float)
    p.add_argument("--best-val", action="store_true", default=None)

    for name in ("probe", "pca"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--checkpoint", help="trained model checkpoint")
        p.add_argument("--baseline",
                       choices=["random-projection", "mfcc"])
        p.add_argument("--wav-dir",
                       help="class-subdirectory corpus instead of manifest")
        p.add_argument("--k", type=int)
        p.add_argument("--train-frac", type=float)
        if name == "probe":
            p.add_argument("--pca", action="store_true",
                           help="also export PCA CSV + SVG of the test side")

    p = sub.add_parser("eval", parents=[common],
                       help="MSE/PCC/SRCC of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test",
                   choices=["train", "val", "test"])
    p.add_argument("--metric")
    return parser


def _overrides(args) -> dict:
    out = {
        ("run", "seed"): getattr(args, "seed", None),
        ("run", "out_dir"): getattr(args, "out_dir", None),
        ("run", "threads"): getattr(args, "threads", None),
        ("label", "metric"): getattr(args, "metric", None),
        ("label", "command"): getattr(args, "label_cmd", None),
        ("train", "model"): getattr(args, "model", None),
        ("train", "epochs"): getattr(args, "epochs", None),
        ("train", "batch_size"): getattr(args, "batch_size", None),
        ("train", "lr"): getattr(args, "lr", None),
        ("train", "width_scale"): getattr(args, "width_scale", None),
        ("train", "best_val"): getattr(args, "best_val", None),
        ("probe", "k"): getattr(args, "k", None),
        ("probe", "train_frac"): getattr(args, "train_frac", None),
    }
    if getattr(args, "command", "") in ("train", "eval"):
        out[("train", "metric")] = getattr(args, "metric", None)
    return out


_COMMANDS = {"synth": cmd_synth, "label": cmd_label, "train": cmd_train,
             "probe": cmd_probe, "pca": cmd_pca, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        _limit_threads(int(cfg["run"]["threads"]))
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except (InvalidInput, DegenerateInput, AudioFormatError,
            CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
