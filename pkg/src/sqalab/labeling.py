"""Quality labels for degraded clips.

The built-in proxy label maps the mean absolute log-mel difference
between a clean clip and its degraded version onto a 1..5 opinion
scale through a logistic squashing. An external scorer (e.g. a real
intrusive metric binary) can be plugged in via a command template;
its outputs are cached keyed by (metric, clip, half) so reruns never
re-invoke the provider.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
import tempfile

import numpy as np

from .audio_io import AudioClip, write_wav
from .dsp import mel_spectrogram
from .errors import InvalidInput, ProviderError

PROXY_ALPHA = 2.0
PROXY_BETA = 1.5
SCORE_MIN = 1.0
SCORE_MAX = 5.0


def proxy_distance(clean: AudioClip, degraded: AudioClip) -> float:
    """Mean absolute difference of the two clips' log-mel features."""
    if len(clean) != len(degraded):
        raise InvalidInput("clean and degraded clips must have equal length")
    a = mel_spectrogram(clean).values
    b = mel_spectrogram(degraded).values
    return float(np.mean(np.abs(a - b)))


def distance_to_score(distance: float) -> float:
    """Logistic map from feature distance to the 1..5 scale (monotone decreasing)."""
    z = min(PROXY_ALPHA * (distance - PROXY_BETA), 700.0)  # exp() overflows past ~709
    return SCORE_MIN + (SCORE_MAX - SCORE_MIN) / (1.0 + math.exp(z))


def proxy_label(clean: AudioClip, degraded: AudioClip) -> float:
    return distance_to_score(proxy_distance(clean, degraded))


class LabelCache:
    """Score cache keyed by (metric, clip_id).

    The manifest itself is the persistent cache (labels live on each
    entry); this wrapper just gives the external labeler a uniform
    lookup, optionally backed by a standalone JSON file.
    """

    def __init__(self, path: str | None = None):
        self.path = path
        self._data: dict[str, float] = {}
        if path is not None and os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                self._data = json.load(f)

    @staticmethod
    def key(metric: str, clip_id: str) -> str:
        return f"{metric}\x1f{clip_id}"

    def get(self, metric: str, clip_id: str):
        return self._data.get(self.key(metric, clip_id))

    def put(self, metric: str, clip_id: str, score: float) -> None:
        self._data[self.key(metric, clip_id)] = float(score)

    def save(self) -> None:
        if self.path is None:
            return
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(self._data, f, sort_keys=True, indent=0)
            f.write("\n")


class ExternalLabeler:
    """Runs a scorer command with {clean} and {degraded} placeholders.

    The command must print a number; the last whitespace-separated
    token of stdout that parses as a float is taken as the score.
    """

    def __init__(self, command: str, metric_name: str = "external",
                 cache: LabelCache | None = None):
        if "{clean}" not in command or "{degraded}" not in command:
            raise InvalidInput("label command needs {clean} and {degraded} placeholders")
        self.command = command
        self.metric_name = metric_name
        self.cache = cache if cache is not None else LabelCache()

    def score(self, clean: AudioClip, degraded: AudioClip,
              clip_id: str) -> float:
        cached = self.cache.get(self.metric_name, clip_id)
        if cached is not None:
            return cached
        with tempfile.TemporaryDirectory(prefix="sqalab_label_") as tmp:
            clean_path = os.path.join(tmp, "clean.wav")
            degraded_path = os.path.join(tmp, "degraded.wav")
            write_wav(clean, clean_path, fmt="int16")
            write_wav(degraded, degraded_path, fmt="int16")
            cmd = self.command.format(clean=clean_path, degraded=degraded_path)
            proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
        if proc.returncode != 0:
            raise ProviderError(
                f"label command failed ({proc.returncode}): {proc.stderr.strip()}")
        value = None
        for token in reversed(proc.stdout.split()):
            try:
                value = float(token)
                break
            except ValueError:
                continue
        if value is None or not math.isfinite(value):
            raise ProviderError(f"label command printed no score: {proc.stdout!r}")
        self.cache.put(self.metric_name, clip_id, value)
        return value
