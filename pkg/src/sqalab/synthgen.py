"""Bundled synthetic corpora.

`make_speech_corpus` produces harmonic speech-like clips: per-clip
"speaker" pitch and formants, voiced segments with vibrato and
declination, consonant-like noise bursts, and pauses. `make_noise_corpus`
produces ten acoustically distinct ambient-noise classes. Both are pure
functions of their seeds, so synthesized datasets stay reproducible.
"""

from __future__ import annotations

import os

import numpy as np

from .audio_io import AudioClip, TARGET_RATE, write_wav
from .errors import InvalidInput
from .seeds import stream_rng


def _fft_shaped_noise(rng, n, gain_fn, sample_rate):
    """White noise spectrally reshaped by gain_fn(freq_hz)."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    out = np.fft.irfft(spec * gain_fn(freqs), n=n)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def _envelope(n, attack, release):
    env = np.ones(n)
    a = min(attack, n // 2)
    r = min(release, n // 2)
    if a > 0:
        env[:a] = np.linspace(0.0, 1.0, a, endpoint=False)
    if r > 0:
        env[n - r:] = np.linspace(1.0, 0.0, r + 1)[1:]
    return env


def _voiced_segment(rng, n, f0, formants, bandwidths, sample_rate):
    t = np.arange(n) / sample_rate
    vibrato = rng.uniform(4.0, 7.0)
    decline = t / t[-1] if n > 1 else np.zeros(n)
    contour = f0 * (1.0 + 0.035 * np.sin(2 * np.pi * vibrato * t
                                         + rng.uniform(0, 2 * np.pi))
                    - 0.06 * decline)
    contour = np.maximum(contour, 40.0)
    base_phase = 2.0 * np.pi * np.cumsum(contour) / sample_rate

    n_harm = max(3, int(6000.0 / f0))
    k = np.arange(1, n_harm + 1)
    fk = k * f0
    weights = np.zeros(n_harm)
    for fc, bw in zip(formants, bandwidths):
        weights += 1.0 / (1.0 + ((fk - fc) / bw) ** 2)
    weights = (weights + 0.05) / np.sqrt(k)

    seg = (weights[:, None] * np.sin(k[:, None] * base_phase[None, :])).sum(axis=0)
    seg += 0.02 * rng.standard_normal(n) * np.abs(seg).mean()
    seg *= _envelope(n, int(0.015 * sample_rate), int(0.02 * sample_rate))
    peak = np.max(np.abs(seg))
    return seg / peak if peak > 0 else seg


def _burst_segment(rng, n, sample_rate):
    noise = rng.standard_normal(n + 1)
    hp = np.diff(noise)
    decay = np.exp(-np.arange(n) / (0.02 * sample_rate))
    seg = hp * decay
    peak = np.max(np.abs(seg))
    return seg / peak if peak > 0 else seg


def speech_clip(seed: int, duration_s: float = 10.0,
                sample_rate: int = TARGET_RATE,
                source_id: str = "") -> AudioClip:
    """One synthetic utterance: a random speaker speaking random syllables."""
    rng = stream_rng(seed, "speech_clip")
    n_total = int(round(duration_s * sample_rate))
    f0 = rng.uniform(85.0, 255.0)
    formants = [rng.uniform(250.0, 850.0), rng.uniform(900.0, 2300.0),
                rng.uniform(2400.0, 3600.0)]
    bandwidths = [rng.uniform(70.0, 110.0), rng.uniform(110.0, 170.0),
                  rng.uniform(170.0, 260.0)]

    out = np.zeros(n_total)
    cursor = 0
    while cursor < n_total:
        kind = rng.random()
        if kind < 0.62:
            dur = int(rng.uniform(0.10, 0.35) * sample_rate)
            dur = min(dur, n_total - cursor)
            if dur > int(0.03 * sample_rate):
                seg = _voiced_segment(rng, dur, f0 * rng.uniform(0.9, 1.15),
                                      formants, bandwidths, sample_rate)
                out[cursor:cursor + dur] = seg * rng.uniform(0.5, 1.0)
            cursor += dur
        elif kind < 0.82:
            dur = int(rng.uniform(0.03, 0.10) * sample_rate)
            dur = min(dur, n_total - cursor)
            if dur > 8:
                out[cursor:cursor + dur] = (_burst_segment(rng, dur, sample_rate)
                                            * rng.uniform(0.15, 0.45))
            cursor += dur
        else:
            cursor += int(rng.uniform(0.03, 0.15) * sample_rate)
        cursor += int(rng.uniform(0.01, 0.05) * sample_rate)

    peak = np.max(np.abs(out))
    if peak > 0:
        out *= rng.uniform(0.35, 0.6) / peak
    return AudioClip(out, sample_rate, source_id or f"speech{seed:05d}")


def make_speech_corpus(n_clips: int, seed: int, duration_s: float = 10.0,
                       sample_rate: int = TARGET_RATE) -> list:
    return [speech_clip(int(stream_rng(seed, "speech", i).integers(2 ** 31)),
                        duration_s, sample_rate, source_id=f"utt{i:05d}")
            for i in range(n_clips)]


NOISE_CLASSES = (
    "white_hiss", "pink_rumble", "brown_roar", "mains_hum", "rain_patter",
    "wind_gusts", "cricket_chirps", "sea_waves", "engine_idle", "metal_clinks",
)


def _noise_white(rng, n, fs):
    return rng.standard_normal(n)


def _noise_pink(rng, n, fs):
    return _fft_shaped_noise(rng, n, lambda f: 1.0 / np.sqrt(np.maximum(f, 20.0)), fs)


def _noise_brown(rng, n, fs):
    return _fft_shaped_noise(rng, n, lambda f: 1.0 / np.maximum(f, 20.0), fs)


def _noise_hum(rng, n, fs):
    t = np.arange(n) / fs
    out = np.zeros(n)
    for i, h in enumerate((50.0, 150.0, 250.0, 350.0)):
        wobble = 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.2, 0.7) * t
                                    + rng.uniform(0, 2 * np.pi))
        out += (0.5 ** i) * wobble * np.sin(2 * np.pi * h * t
                                            + rng.uniform(0, 2 * np.pi))
    return out + 0.02 * rng.standard_normal(n)


def _noise_rain(rng, n, fs):
    drops = (rng.random(n) < (400.0 / fs)) * rng.standard_normal(n)
    kernel = np.diff(np.exp(-np.arange(33) / 4.0))
    out = np.convolve(drops, kernel, mode="same")
    return out + 0.05 * rng.standard_normal(n)


def _noise_wind(rng, n, fs):
    base = _fft_shaped_noise(rng, n, lambda f: 1.0 / (1.0 + (f / 300.0) ** 2), fs)
    t = np.arange(n) / fs
    gust = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(0.08, 0.4) * t
                                + rng.uniform(0, 2 * np.pi))
    return base * gust


def _noise_crickets(rng, n, fs):
    t = np.arange(n) / fs
    carrier = np.sin(2 * np.pi * rng.uniform(4200.0, 5200.0) * t)
    rep = rng.uniform(18.0, 30.0)
    pulse = (np.sin(2 * np.pi * rep * t) > 0.6).astype(np.float64)
    group = (np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * t
                    + rng.uniform(0, 2 * np.pi)) > -0.2)
    return carrier * pulse * group + 0.01 * rng.standard_normal(n)


def _noise_waves(rng, n, fs):
    base = _fft_shaped_noise(
        rng, n, lambda f: np.exp(-0.5 * ((f - 700.0) / 500.0) ** 2) + 0.02, fs)
    t = np.arange(n) / fs
    swell = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.07, 0.16) * t
                               + rng.uniform(0, 2 * np.pi))
    return base * swell ** 2


def _noise_engine(rng, n, fs):
    t = np.arange(n) / fs
    out = np.zeros(n)
    for _ in range(4):
        out += rng.uniform(0.4, 1.0) * np.sin(
            2 * np.pi * rng.uniform(40.0, 120.0) * t + rng.uniform(0, 2 * np.pi))
    am = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(8.0, 13.0) * t)
    return out * am + 0.15 * _noise_pink(rng, n, fs)


def _noise_clinks(rng, n, fs):
    out = 0.01 * rng.standard_normal(n)
    for _ in range(int(rng.integers(4, 9))):
        start = int(rng.uniform(0, 0.92) * n)
        dur = min(int(0.25 * fs), n - start)
        t = np.arange(dur) / fs
        f = rng.uniform(2000.0, 6000.0)
        strike = (np.sin(2 * np.pi * f * t) + 0.5 * np.sin(2 * np.pi * 2.76 * f * t)
                  ) * np.exp(-t / 0.04)
        out[start:start + dur] += strike
    return out


_NOISE_MAKERS = {
    "white_hiss": _noise_white,
    "pink_rumble": _noise_pink,
    "brown_roar": _noise_brown,
    "mains_hum": _noise_hum,
    "rain_patter": _noise_rain,
    "wind_gusts": _noise_wind,
    "cricket_chirps": _noise_crickets,
    "sea_waves": _noise_waves,
    "engine_idle": _noise_engine,
    "metal_clinks": _noise_clinks,
}


def noise_clip(class_name: str, seed: int, duration_s: float = 10.0,
               sample_rate: int = TARGET_RATE,
               source_id: str = "") -> AudioClip:
    if class_name not in _NOISE_MAKERS:
        raise InvalidInput(f"unknown noise class {class_name!r}")
    rng = stream_rng(seed, "noise_clip", class_name)
    n = int(round(duration_s * sample_rate))
    x = _NOISE_MAKERS[class_name](rng, n, sample_rate)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.5 * x / peak
    return AudioClip(x, sample_rate,
                     source_id or f"{class_name}_{seed:04d}")


def make_noise_corpus(n_per_class: int, seed: int, duration_s: float = 10.0,
                      sample_rate: int = TARGET_RATE,
                      classes=NOISE_CLASSES):
    """Returns (clips, labels) over all classes."""
    clips, labels = [], []
    for cname in classes:
        for i in range(n_per_class):
            clip_seed = int(stream_rng(seed, "noise", cname, i).integers(2 ** 31))
            clips.append(noise_clip(cname, clip_seed, duration_s, sample_rate,
                                    source_id=f"{cname}_{i:03d}"))
            labels.append(cname)
    return clips, labels


def write_class_tree(out_dir: str, clips: list, labels: list) -> None:
    """ESC-50-style layout: <out_dir>/<class>/<clip_id>.wav"""
    for clip, label in zip(clips, labels):
        d = os.path.join(out_dir, label)
        os.makedirs(d, exist_ok=True)
        write_wav(clip, os.path.join(d, f"{clip.source_id}.wav"))
