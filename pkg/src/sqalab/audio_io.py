"""Mono WAV input/output, resampling, and duration normalization.

Everything downstream works on 16 kHz mono clips with samples in
[-1, 1]. This module owns the conversion from arbitrary PCM16/float32
WAV files into that canonical form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import AudioFormatError, InvalidInput

TARGET_RATE = 16000

# Resampler design: windowed sinc evaluated at fractional positions.
# 64 input samples contribute to each output sample; the Kaiser window
# (beta 8.6) gives ~87 dB stopband. The cutoff sits at 0.85 of the
# smaller Nyquist so the transition band clears the new Nyquist when
# downsampling (e.g. content at 8 kHz must be gone after 44.1k -> 16k).
_SINC_TAPS = 64
_KAISER_BETA = 8.6
_CUTOFF_ROLLOFF = 0.85


@dataclass
class AudioClip:
    """A mono signal plus its sample rate and provenance."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInput(f"AudioClip samples must be 1-D, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def replace(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.source_id)


def read_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file as a mono clip with samples in [-1, 1].

    Accepts PCM 16/32-bit integer and 32/64-bit float, mono or
    multichannel (channels are averaged). The sample rate is preserved
    as read; resample separately.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises bare ValueError on bad containers
        raise AudioFormatError(f"cannot read WAV file {path}: {exc}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioFormatError(f"unsupported WAV sample format {data.dtype} in {path}")

    if x.ndim == 2:
        x = x.mean(axis=1)

    import os

    return AudioClip(x, int(rate), source_id=os.path.splitext(os.path.basename(str(path)))[0])


def write_wav(clip: AudioClip, path, fmt: str = "float32") -> None:
    """Write a mono WAV.

    float32 (default) stores samples losslessly, including values past
    full scale, so a hot noise mix survives a write/read round trip
    bit-exactly. int16 is for exchange with external tools: samples are
    hard-clipped to [-1, 1], scaled by 2^15 and rounded half away from
    zero, so a round trip agrees within one quantization step (2^-15).
    """
    if clip.sample_rate <= 0:
        raise InvalidInput("sample_rate must be set before writing")
    if fmt == "float32":
        wavfile.write(str(path), int(clip.sample_rate),
                      clip.samples.astype("<f4"))
    elif fmt == "int16":
        x = np.clip(clip.samples, -1.0, 1.0)
        q = np.sign(x) * np.floor(np.abs(x) * 32768.0 + 0.5)
        q = np.clip(q, -32768, 32767).astype(np.int16)
        wavfile.write(str(path), int(clip.sample_rate), q)
    else:
        raise InvalidInput(f"unknown wav format {fmt!r}")


def fix_duration(clip: AudioClip, target_seconds: float) -> AudioClip:
    """Crop to, or repetitively pad up to, an exact duration.

    Long clips keep their first ``target_seconds``; short clips are
    tiled (``out[i] = in[i mod len]``) until the target length.
    """
    if len(clip) == 0:
        raise InvalidInput("cannot fix duration of an empty clip")
    n_target = int(round(target_seconds * clip.sample_rate))
    x = clip.samples
    if len(x) >= n_target:
        return clip.replace(x[:n_target])
    reps = -(-n_target // len(x))
    return clip.replace(np.tile(x, reps)[:n_target])


def _kaiser(u: np.ndarray) -> np.ndarray:
    # u in [-1, 1]; zero outside
    inside = np.abs(u) <= 1.0
    w = np.zeros_like(u)
    w[inside] = np.i0(_KAISER_BETA * np.sqrt(1.0 - u[inside] ** 2)) / np.i0(_KAISER_BETA)
    return w


def resample_ratio(x: np.ndarray, ratio: float) -> np.ndarray:
    """Resample by an arbitrary rate ratio (out_rate / in_rate).

    Windowed-sinc interpolation: each output sample is a dot product of
    64 input samples with a Kaiser-windowed sinc evaluated at the exact
    fractional position, which is the direct (phase-free) form of a
    64-tap-per-phase polyphase resampler and works for irrational
    ratios too.
    """
    x = np.asarray(x, dtype=np.float64)
    if ratio == 1.0:
        return x.copy()
    n_out = int(math.floor(len(x) * ratio + 0.5))
    if n_out <= 0:
        return np.zeros(0)

    half = _SINC_TAPS // 2
    # Anti-alias cutoff in cycles per *input* sample; the support stays
    # at 64 input samples (64 taps per phase) for every ratio.
    scale = min(1.0, ratio)
    f_c = 0.5 * _CUTOFF_ROLLOFF * scale
    support = float(half)

    pos = np.arange(n_out, dtype=np.float64) / ratio
    i0 = np.floor(pos).astype(np.int64)
    span = int(math.ceil(support))
    offsets = np.arange(-span + 1, span + 1)

    pad = span + 1
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + 1)])
    idx = i0[:, None] + offsets[None, :] + pad
    tau = pos[:, None] - (i0[:, None] + offsets[None, :])  # in input samples

    h = 2.0 * f_c * np.sinc(2.0 * f_c * tau) * _kaiser(tau / support)
    # Unit DC gain per output sample (corrects the window's sinc-sum error)
    h /= np.sum(h, axis=1, keepdims=True)
    return np.einsum("ij,ij->i", xp[idx], h)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample a clip to a new rate; identical rates pass through bit-exactly."""
    if clip.sample_rate <= 0 or target_rate <= 0:
        raise InvalidInput("sample rates must be positive")
    if target_rate == clip.sample_rate:
        return clip
    y = resample_ratio(clip.samples, target_rate / clip.sample_rate)
    return AudioClip(y, target_rate, clip.source_id)


def ingest_wav(path, target_rate: int = TARGET_RATE, target_seconds: float | None = None) -> AudioClip:
    """read_wav -> resample -> (optionally) fix_duration, the standard pipeline."""
    clip = read_wav(path)
    clip = resample(clip, target_rate)
    if target_seconds is not None:
        clip = fix_duration(clip, target_seconds)
    return clip
