"""Corpus synthesis: split discipline, per-clip seeding, manifest I/O.

Every clean utterance is fixed to 10 s, assigned to exactly one of
train/val/test, and degraded twice: once in the one-impairment half and
once in the two-impairment half. Class assignment within a half is a
seeded balanced draw (each single class near ratio 0.1, each pair near
1/6). All per-clip randomness derives from (seed, clip_id, half), so
the result does not depend on iteration order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .audio_io import fix_duration, read_wav, write_wav
from .errors import InvalidInput
from .impairments import (
    ADD_BACKGROUND_NOISE,
    PAIR_CLASSES,
    PARAM_RANGES,
    SINGLE_CLASSES,
    CompositeLabel,
    ImpairmentSpec,
    apply_composite,
    composite_class_names,
    measure_snr_db,
    rms,
    sample_composite,
)
from .seeds import derive_seed, stream_rng

SCHEMA_VERSION = 1
CLIP_SECONDS = 10.0
CLIP_SAMPLES = 160000
HALF_ONE = "one_impairment"
HALF_TWO = "two_impairment"
SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    clip_id: str
    clean_id: str
    clean_path: str
    degraded_path: str
    split: str
    half: str
    class_name: str
    specs: list
    labels: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "clean_id": self.clean_id,
            "clean_path": self.clean_path,
            "degraded_path": self.degraded_path,
            "split": self.split,
            "half": self.half,
            "class_name": self.class_name,
            "specs": [
                {"class_id": s.class_id, "params": s.params,
                 "noise_source_id": s.noise_source_id}
                for s in self.specs
            ],
            "labels": self.labels,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        specs = [ImpairmentSpec(s["class_id"], dict(s["params"]),
                                s.get("noise_source_id"))
                 for s in d["specs"]]
        return cls(d["clip_id"], d["clean_id"], d["clean_path"],
                   d["degraded_path"], d["split"], d["half"],
                   d["class_name"], specs, dict(d.get("labels", {})))

    def composite(self) -> CompositeLabel:
        return CompositeLabel(self.specs)


@dataclass
class DatasetManifest:
    seed: int
    config_hash: str
    entries: list
    schema_version: int = SCHEMA_VERSION

    def by_split(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    header = {"kind": "sqalab-manifest", "schema_version": manifest.schema_version,
              "seed": manifest.seed, "config_hash": manifest.config_hash}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for e in manifest.entries:
            f.write(json.dumps(e.to_json(), sort_keys=True,
                               separators=(",", ":")) + "\n")


def read_manifest(path: str) -> DatasetManifest:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise InvalidInput(f"empty manifest {path}")
    header = json.loads(lines[0])
    if header.get("kind") != "sqalab-manifest":
        raise InvalidInput(f"{path} is not a dataset manifest")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise InvalidInput(
            f"unsupported manifest schema {header.get('schema_version')}")
    entries = [ManifestEntry.from_json(json.loads(ln)) for ln in lines[1:]]
    return DatasetManifest(header["seed"], header.get("config_hash", ""),
                           entries)


def _balanced_assignment(ids: list, classes: list, rng) -> dict:
    """Each id gets a class; counts differ by at most one across classes."""
    template = [classes[i % len(classes)] for i in range(len(ids))]
    perm = rng.permutation(len(ids))
    return {cid: template[perm[i]] for i, cid in enumerate(ids)}


def assign_splits(clean_ids: list, counts: dict, seed: int) -> dict:
    """Disjoint train/val/test assignment of clean utterances."""
    ids = sorted(clean_ids)
    need = sum(counts.get(s, 0) for s in SPLITS)
    if need > len(ids):
        raise InvalidInput(
            f"split sizes {counts} exceed corpus size {len(ids)}")
    rng = stream_rng(seed, "split_assignment")
    order = [ids[i] for i in rng.permutation(len(ids))]
    out, at = {}, 0
    for split in SPLITS:
        n = counts.get(split, 0)
        for cid in order[at:at + n]:
            out[cid] = split
        at += n
    return out


def synthesize_dataset(clean_corpus: list, noise_corpus: list, seed: int,
                       counts: dict, out_dir: str, config_hash: str = "",
                       codec_command: str | None = None) -> DatasetManifest:
    """Degrade every selected clean clip once per half and write the tree.

    counts maps split name -> number of clean utterances. Returns the
    manifest (also written to out_dir/manifest.jsonl).
    """
    if not clean_corpus:
        raise InvalidInput("clean corpus is empty")
    if not noise_corpus:
        raise InvalidInput("noise corpus is empty")
    clips = {c.source_id: fix_duration(c, CLIP_SECONDS) for c in clean_corpus}
    if len(clips) != len(clean_corpus):
        raise InvalidInput("duplicate clean clip ids")
    noise = {c.source_id: c for c in noise_corpus}
    noise_ids = sorted(noise)

    split_of = assign_splits(list(clips), counts, seed)
    used_ids = sorted(split_of)

    singles = list(SINGLE_CLASSES)
    pairs = [f"{a}+{b}" for a, b in PAIR_CLASSES]
    assign_one = _balanced_assignment(used_ids, singles,
                                      stream_rng(seed, "classes", HALF_ONE))
    assign_two = _balanced_assignment(used_ids, pairs,
                                      stream_rng(seed, "classes", HALF_TWO))

    os.makedirs(os.path.join(out_dir, "clean"), exist_ok=True)
    for split in SPLITS:
        os.makedirs(os.path.join(out_dir, "audio", split), exist_ok=True)

    entries = []
    for cid in used_ids:
        clean = clips[cid]
        clean_rel = os.path.join("clean", f"{cid}.wav")
        write_wav(clean, os.path.join(out_dir, clean_rel))
        for half, class_name in ((HALF_ONE, assign_one[cid]),
                                 (HALF_TWO, assign_two[cid])):
            rng = stream_rng(seed, cid, half)
            label = sample_composite(class_name, rng, noise_ids)
            degraded = apply_composite(
                clean, label, derive_seed(seed, cid, half, "apply"),
                noise_lookup=noise, codec_command=codec_command)
            degraded = fix_duration(degraded, CLIP_SECONDS)
            clip_id = f"{cid}.{'one' if half == HALF_ONE else 'two'}"
            rel = os.path.join("audio", split_of[cid], f"{clip_id}.wav")
            write_wav(degraded, os.path.join(out_dir, rel))
            entries.append(ManifestEntry(
                clip_id=clip_id, clean_id=cid, clean_path=clean_rel,
                degraded_path=rel, split=split_of[cid], half=half,
                class_name=label.class_name, specs=label.specs))

    entries.sort(key=lambda e: e.clip_id)
    manifest = DatasetManifest(seed=seed, config_hash=config_hash,
                               entries=entries)
    write_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def load_entry_audio(entry: ManifestEntry, root: str):
    clean = read_wav(os.path.join(root, entry.clean_path))
    degraded = read_wav(os.path.join(root, entry.degraded_path))
    return clean, degraded


def validate_manifest(manifest: DatasetManifest, root: str | None = None,
                      snr_tol_db: float = 0.01) -> list:
    """Check the published invariants; returns a list of violation strings."""
    problems = []
    universe = set(composite_class_names())

    split_of: dict = {}
    halves: dict = {}
    for e in manifest.entries:
        if e.split not in SPLITS:
            problems.append(f"{e.clip_id}: unknown split {e.split}")
        if e.clean_id in split_of and split_of[e.clean_id] != e.split:
            problems.append(f"{e.clean_id}: appears in two splits")
        split_of[e.clean_id] = e.split
        halves.setdefault(e.clean_id, []).append(e.half)
        if e.class_name not in universe:
            problems.append(f"{e.clip_id}: unknown class {e.class_name}")
        for spec in e.specs:
            for name, value in spec.params.items():
                rng = PARAM_RANGES.get(spec.class_id, {}).get(name)
                if rng is not None and not (rng[0] <= value <= rng[1]):
                    problems.append(
                        f"{e.clip_id}: {spec.class_id}.{name}={value} "
                        f"outside {rng}")

    for cid, hs in halves.items():
        if sorted(hs) != [HALF_ONE, HALF_TWO]:
            problems.append(f"{cid}: halves are {hs}, want one of each")

    for half, classes in ((HALF_ONE, list(SINGLE_CLASSES)),
                          (HALF_TWO, [f"{a}+{b}" for a, b in PAIR_CLASSES])):
        sub = [e for e in manifest.entries if e.half == half]
        if not sub:
            continue
        per = {c: 0 for c in classes}
        for e in sub:
            if e.class_name in per:
                per[e.class_name] += 1
        ideal = len(sub) / len(classes)
        for c, n in per.items():
            if abs(n - ideal) > 1.0:
                problems.append(
                    f"{half}/{c}: count {n} deviates from ideal {ideal:.2f} "
                    "by more than 1")

    if root is not None:
        for e in manifest.entries:
            path = os.path.join(root, e.degraded_path)
            if not os.path.exists(path):
                problems.append(f"{e.clip_id}: missing file {e.degraded_path}")
                continue
            degraded = read_wav(path)
            if len(degraded) != CLIP_SAMPLES:
                problems.append(
                    f"{e.clip_id}: {len(degraded)} samples, want {CLIP_SAMPLES}")
            if (len(e.specs) == 1
                    and e.specs[0].class_id == ADD_BACKGROUND_NOISE):
                clean = read_wav(os.path.join(root, e.clean_path))
                resid = degraded.samples - clean.samples
                if rms(resid) > 0:
                    measured = measure_snr_db(clean.samples, resid)
                    want = e.specs[0].params["snr_db"]
                    if abs(measured - want) > snr_tol_db:
                        problems.append(
                            f"{e.clip_id}: measured SNR {measured:.4f} dB vs "
                            f"recorded {want:.4f} dB")
    return problems
