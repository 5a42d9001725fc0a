"""The impairment family used to corrupt clean speech.

Ten single impairment classes (including the identity) plus six fixed
double-impairment composites; each clip's parameters are sampled from
the published ranges with a seeded generator, so synthesis is a pure
function of (clip, class, seed).
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .audio_io import AudioClip, read_wav, resample_ratio, write_wav
from .dsp import hann_window
from .errors import InvalidInput, ProviderError
from .seeds import derive_seed

IDENTITY = "Identity"
ADD_BACKGROUND_NOISE = "AddBackgroundNoise"
CLIPPING = "ClippingImpairment"
GAIN_TRANSITION = "GainTransition"
LOW_PASS = "LowPassFilter"
CODEC = "CodecCompression"
PITCH_SHIFT = "PitchShift"
ROOM = "RoomSimulator"
TIME_MASK = "TimeMask"
TIME_STRETCH = "TimeStretch"

SINGLE_CLASSES = (
    IDENTITY, ADD_BACKGROUND_NOISE, CLIPPING, GAIN_TRANSITION, LOW_PASS,
    CODEC, PITCH_SHIFT, ROOM, TIME_MASK, TIME_STRETCH,
)

PAIR_CLASSES = (
    (ADD_BACKGROUND_NOISE, ROOM),
    (ADD_BACKGROUND_NOISE, LOW_PASS),
    (ADD_BACKGROUND_NOISE, TIME_STRETCH),
    (ROOM, CODEC),
    (PITCH_SHIFT, LOW_PASS),
    (GAIN_TRANSITION, TIME_MASK),
)

PARAM_RANGES = {
    ADD_BACKGROUND_NOISE: {"snr_db": (-10.0, 15.0)},
    CLIPPING: {"percentile": (10.0, 40.0)},
    GAIN_TRANSITION: {"gain_db": (-60.0, 20.0)},
    LOW_PASS: {"cutoff_hz": (500.0, 1000.0)},
    CODEC: {"bit_rate": (8.0, 14.0)},
    PITCH_SHIFT: {"semitones": (-4.0, 4.0)},
    ROOM: {"rt60_s": (0.8, 1.5)},
    TIME_MASK: {"band_part": (0.2, 0.5)},
    TIME_STRETCH: {"rate": (0.5, 2.0)},
}

FADE_MS = 10.0


def composite_class_names() -> list[str]:
    """The 16-class universe: 10 singles then the 6 pairs, canonical order."""
    return list(SINGLE_CLASSES) + [f"{a}+{b}" for a, b in PAIR_CLASSES]


@dataclass
class ImpairmentSpec:
    """One impairment with its sampled parameters."""

    class_id: str
    params: dict = field(default_factory=dict)
    noise_source_id: str | None = None

    def __post_init__(self):
        if self.class_id not in SINGLE_CLASSES:
            raise InvalidInput(f"unknown impairment class {self.class_id!r}")
        for name, value in self.params.items():
            rng = PARAM_RANGES.get(self.class_id, {}).get(name)
            if rng is not None and not (rng[0] <= value <= rng[1]):
                raise InvalidInput(
                    f"{self.class_id}.{name}={value} outside range {rng}")


@dataclass
class CompositeLabel:
    """One or two ordered impairments; the classification class."""

    specs: list

    def __post_init__(self):
        ids = tuple(s.class_id for s in self.specs)
        if len(ids) == 1:
            if ids[0] not in SINGLE_CLASSES:
                raise InvalidInput(f"unknown single class {ids[0]!r}")
        elif len(ids) == 2:
            if ids not in PAIR_CLASSES:
                raise InvalidInput(f"{'+'.join(ids)} is not one of the 6 composite classes")
        else:
            raise InvalidInput("a composite holds 1 or 2 impairments")

    @property
    def class_name(self) -> str:
        return "+".join(s.class_id for s in self.specs)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(np.asarray(x, dtype=np.float64)))))


def measure_snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return 20.0 * math.log10(rms(signal) / rms(noise))


def loop_to_length(x: np.ndarray, n: int) -> np.ndarray:
    """Tile then crop a signal to exactly n samples."""
    if len(x) == 0:
        raise InvalidInput("cannot loop an empty signal")
    if len(x) >= n:
        return x[:n]
    return np.tile(x, -(-n // len(x)))[:n]


# --- single impairments -------------------------------------------------

def add_background_noise(clip: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Mix noise at an exact SNR relative to the clip's RMS."""
    if clip.sample_rate != noise.sample_rate:
        raise InvalidInput("clip and noise must share a sample rate")
    fitted = loop_to_length(noise.samples, len(clip))
    noise_rms = rms(fitted)
    if noise_rms <= 1e-6:
        raise InvalidInput("noise source is silent")
    gain = rms(clip.samples) / (noise_rms * 10.0 ** (snr_db / 20.0))
    return clip.replace(clip.samples + gain * fitted)


def clip_percentile(clip: AudioClip, percentile: float) -> AudioClip:
    """Saturate roughly `percentile` percent of samples.

    The threshold is the (100 - percentile)-th linear-interpolated
    percentile of |samples|.
    """
    if not (0.0 <= percentile < 100.0):
        raise InvalidInput("percentile must lie in [0, 100)")
    t = np.percentile(np.abs(clip.samples), 100.0 - percentile)
    return clip.replace(np.clip(clip.samples, -t, t))


def gain_transition(clip: AudioClip, gain_db: float,
                    ramp_start_frac: float, ramp_len_frac: float) -> AudioClip:
    """Ramp the gain linearly in dB from 0 to gain_db over a clip region."""
    if ramp_start_frac < 0.0 or ramp_start_frac + ramp_len_frac > 1.0:
        raise InvalidInput("ramp region must lie within the clip")
    n = len(clip)
    start = ramp_start_frac * n
    length = ramp_len_frac * n
    i = np.arange(n, dtype=np.float64)
    if length > 0:
        frac = np.clip((i - start) / length, 0.0, 1.0)
    else:
        frac = (i >= start).astype(np.float64)
    return clip.replace(clip.samples * 10.0 ** (gain_db * frac / 20.0))


def low_pass_filter(clip: AudioClip, cutoff_hz: float) -> AudioClip:
    """2nd-order Butterworth low-pass, causal, zero initial state."""
    nyquist = clip.sample_rate / 2.0
    if not (0.0 < cutoff_hz < nyquist):
        raise InvalidInput(f"cutoff must lie in (0, {nyquist}) Hz")
    b, a = scipy.signal.butter(2, cutoff_hz, btype="low", fs=clip.sample_rate)
    return clip.replace(scipy.signal.lfilter(b, a, clip.samples))


def _ola_frames(x: np.ndarray, win: np.ndarray, hop: int):
    """Pad so interior coverage is complete, return (frames, pad, n)."""
    n = len(x)
    n_frames = -(-n // hop) + 1
    padded_len = (n_frames - 1) * hop + len(win)
    xp = np.concatenate([np.zeros(hop), x, np.zeros(padded_len - n - hop)])
    idx = np.arange(len(win))[None, :] + hop * np.arange(n_frames)[:, None]
    return xp[idx] * win[None, :], hop, n


def codec_bandwidth_hz(bit_rate: float) -> float:
    return 2000.0 + 250.0 * (bit_rate - 8.0)


def codec_quant_step(bit_rate: float) -> float:
    return 0.5 * (15.0 - bit_rate) / 7.0


def codec_compress(clip: AudioClip, bit_rate: float,
                   external_command: str | None = None) -> AudioClip:
    """Deterministic lossy-codec surrogate.

    Band-limits to a bit-rate-dependent bandwidth, then quantizes the
    per-frame log STFT magnitudes (phase preserved) and resynthesizes
    by overlap-add. With `external_command` set, delegates to a real
    encoder instead ({in} {out} {bitrate} placeholders).
    """
    if not (8.0 <= bit_rate <= 14.0):
        raise InvalidInput("bit_rate must lie in [8, 14]")
    if external_command is not None:
        return _external_codec(clip, bit_rate, external_command)

    peak_in = float(np.max(np.abs(clip.samples)))
    limited = low_pass_filter(clip, codec_bandwidth_hz(bit_rate))

    win = hann_window(320)
    frames, hop, n = _ola_frames(limited.samples, win, 160)
    spec = np.fft.rfft(frames, axis=1)
    mag = np.abs(spec)
    phase = np.angle(spec)
    step = codec_quant_step(bit_rate)
    qmag = np.exp(np.round(np.log(mag + 1e-12) / step) * step)
    rec = np.fft.irfft(qmag * np.exp(1j * phase), n=320, axis=1)

    y = np.zeros((frames.shape[0] - 1) * hop + 320)
    for m in range(frames.shape[0]):
        y[m * hop:m * hop + 320] += rec[m]
    y = y[hop:hop + n]

    peak_out = float(np.max(np.abs(y)))
    if peak_out > 0 and peak_in > 0:
        y *= peak_in / peak_out
    return clip.replace(y)


def _external_codec(clip: AudioClip, bit_rate: float, command: str) -> AudioClip:
    with tempfile.TemporaryDirectory(prefix="sqalab_codec_") as tmp:
        in_path = os.path.join(tmp, "in.wav")
        out_path = os.path.join(tmp, "out.wav")
        write_wav(clip, in_path, fmt="int16")
        cmd = command.format(**{"in": in_path, "out": out_path,
                                "bitrate": f"{bit_rate:g}"})
        proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True)
        if proc.returncode != 0:
            raise ProviderError(
                f"external codec failed ({proc.returncode}): {proc.stderr.strip()}")
        if not os.path.exists(out_path):
            raise ProviderError("external codec produced no output file")
        out = read_wav(out_path)
    y = loop_to_length(np.concatenate([out.samples, np.zeros(max(0, len(clip) - len(out)))]),
                       len(clip))
    return clip.replace(y)


# --- phase vocoder ------------------------------------------------------

_PV_FFT = 1024
_PV_HOP = 256


def phase_vocoder_stretch(x: np.ndarray, rate: float) -> np.ndarray:
    """Stretch a signal by a speed factor, preserving pitch.

    Output has round(len/rate) samples. Standard magnitude-interpolating
    phase vocoder: analysis frames at a fixed hop, fractional frame
    indexing at step `rate`, accumulated instantaneous phase, windowed
    overlap-add with window-square normalization.
    """
    x = np.asarray(x, dtype=np.float64)
    if rate <= 0:
        raise InvalidInput("stretch rate must be positive")
    n = len(x)
    win = hann_window(_PV_FFT)
    pad = _PV_FFT // 2
    n_frames = 1 + n // _PV_HOP
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + _PV_FFT)])
    idx = np.arange(_PV_FFT)[None, :] + _PV_HOP * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(xp[idx] * win[None, :], axis=1)

    steps = np.arange(0, n_frames, rate)
    lo = np.floor(steps).astype(np.int64)
    hi = np.minimum(lo + 1, n_frames - 1)
    frac = (steps - lo)[:, None]

    mag_all = np.abs(spec)
    ph = np.angle(spec)
    mag = (1.0 - frac) * mag_all[lo] + frac * mag_all[hi]

    omega = 2.0 * np.pi * np.arange(_PV_FFT // 2 + 1) * _PV_HOP / _PV_FFT
    dphi = ph[hi] - ph[lo] - omega[None, :]
    dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
    increments = omega[None, :] + dphi
    phase = ph[0][None, :] + np.vstack(
        [np.zeros_like(omega), np.cumsum(increments[:-1], axis=0)])

    frames_t = np.fft.irfft(mag * np.exp(1j * phase), n=_PV_FFT, axis=1) * win[None, :]
    out_raw = _PV_HOP * (len(steps) - 1) + _PV_FFT
    y = np.zeros(out_raw)
    wsq = np.zeros(out_raw)
    w2 = win * win
    for m in range(len(steps)):
        o = m * _PV_HOP
        y[o:o + _PV_FFT] += frames_t[m]
        wsq[o:o + _PV_FFT] += w2
    y = y / np.maximum(wsq, 1e-12)
    y = y[pad:]

    target = int(round(n / rate))
    if len(y) >= target:
        return y[:target]
    return np.concatenate([y, np.zeros(target - len(y))])


def _enforce_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    return np.tile(x, -(-n // len(x)))[:n]


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Shift pitch without changing duration (stretch + resample)."""
    if not (-12.0 <= semitones <= 12.0):
        raise InvalidInput("semitones must lie in [-12, 12]")
    r = 2.0 ** (semitones / 12.0)
    stretched = phase_vocoder_stretch(clip.samples, 1.0 / r)
    shifted = resample_ratio(stretched, 1.0 / r)
    return clip.replace(_enforce_length(shifted, len(clip)))


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Change speed without changing pitch; output renormalized to the input duration."""
    if not (0.25 <= rate <= 4.0):
        raise InvalidInput("rate must lie in [0.25, 4]")
    stretched = phase_vocoder_stretch(clip.samples, rate)
    return clip.replace(_enforce_length(stretched, len(clip)))


# --- reverberation and masking ------------------------------------------

def synthesize_rir(rt60_s: float, sample_rate: int, rng_seed: int) -> np.ndarray:
    """Exponentially decaying white-noise room impulse response.

    The decay constant makes the energy envelope fall 60 dB after
    exactly rt60 seconds; length is 1.5 * rt60 so the Schroeder curve
    is clean down to -60 dB.
    """
    if rt60_s <= 0:
        raise InvalidInput("rt60 must be positive")
    length = int(round(1.5 * rt60_s * sample_rate))
    rng = np.random.default_rng(rng_seed)
    h = rng.standard_normal(length)
    n = np.arange(length, dtype=np.float64)
    h *= np.exp(-n * (3.0 * math.log(10.0)) / (rt60_s * sample_rate))
    h[0] = 1.0
    return h / np.max(np.abs(h))


def room_simulate(clip: AudioClip, rt60_s: float, rng_seed: int) -> AudioClip:
    """Convolve with a synthetic RIR; output peak matched to the input peak."""
    h = synthesize_rir(rt60_s, clip.sample_rate, rng_seed)
    y = scipy.signal.fftconvolve(clip.samples, h)[:len(clip)]
    peak_in = float(np.max(np.abs(clip.samples)))
    peak_out = float(np.max(np.abs(y)))
    if peak_out > 0 and peak_in > 0:
        y *= peak_in / peak_out
    return clip.replace(y)


def time_mask(clip: AudioClip, band_part: float, start_frac: float) -> AudioClip:
    """Zero out a contiguous region with 10 ms linear fades inside it."""
    if not (0.0 < band_part < 1.0):
        raise InvalidInput("band_part must lie in (0, 1)")
    if start_frac < 0.0 or start_frac + band_part > 1.0:
        raise InvalidInput("masked region must lie within the clip")
    n = len(clip)
    m = int(round(band_part * n))
    start = int(round(start_frac * n))
    fade = min(int(round(FADE_MS * clip.sample_rate / 1000.0)), m // 2)

    mult = np.zeros(m)
    if fade > 0:
        mult[:fade] = np.linspace(1.0, 0.0, fade + 1)[1:]
        mult[m - fade:] = np.linspace(0.0, 1.0, fade + 1)[:-1]
    y = clip.samples.copy()
    y[start:start + m] *= mult
    return clip.replace(y)


# --- parameter sampling and composites ----------------------------------

def sample_spec(class_id: str, rng: np.random.Generator,
                noise_source_ids=None) -> ImpairmentSpec:
    """Draw one impairment's parameters from the published ranges."""
    params = {}
    for name, (lo, hi) in PARAM_RANGES.get(class_id, {}).items():
        params[name] = float(rng.uniform(lo, hi))
    noise_id = None
    if class_id == ADD_BACKGROUND_NOISE:
        if not noise_source_ids:
            raise InvalidInput("AddBackgroundNoise requires a noise corpus")
        noise_id = noise_source_ids[int(rng.integers(len(noise_source_ids)))]
        params["noise_offset_frac"] = float(rng.uniform(0.0, 1.0))
    elif class_id == GAIN_TRANSITION:
        params["ramp_start_frac"] = float(rng.uniform(0.0, 0.5))
        params["ramp_len_frac"] = float(rng.uniform(0.1, 0.5))
    elif class_id == TIME_MASK:
        params["start_frac"] = float(rng.uniform(0.0, 1.0 - params["band_part"]))
    return ImpairmentSpec(class_id, params, noise_id)


def sample_composite(class_name: str, rng: np.random.Generator,
                     noise_source_ids=None) -> CompositeLabel:
    parts = class_name.split("+")
    return CompositeLabel([sample_spec(p, rng, noise_source_ids) for p in parts])


def apply_spec(clip: AudioClip, spec: ImpairmentSpec, rng_seed: int,
               noise_lookup=None, codec_command: str | None = None) -> AudioClip:
    cid, p = spec.class_id, spec.params
    if cid == IDENTITY:
        return clip
    if cid == ADD_BACKGROUND_NOISE:
        if noise_lookup is None:
            raise InvalidInput("AddBackgroundNoise needs a noise_lookup")
        noise = noise_lookup(spec.noise_source_id) if callable(noise_lookup) \
            else noise_lookup[spec.noise_source_id]
        offset = int(p.get("noise_offset_frac", 0.0) * len(noise))
        rolled = noise.replace(np.roll(noise.samples, -offset))
        return add_background_noise(clip, rolled, p["snr_db"])
    if cid == CLIPPING:
        return clip_percentile(clip, p["percentile"])
    if cid == GAIN_TRANSITION:
        return gain_transition(clip, p["gain_db"], p["ramp_start_frac"], p["ramp_len_frac"])
    if cid == LOW_PASS:
        return low_pass_filter(clip, p["cutoff_hz"])
    if cid == CODEC:
        return codec_compress(clip, p["bit_rate"], codec_command)
    if cid == PITCH_SHIFT:
        return pitch_shift(clip, p["semitones"])
    if cid == ROOM:
        return room_simulate(clip, p["rt60_s"], rng_seed)
    if cid == TIME_MASK:
        return time_mask(clip, p["band_part"], p["start_frac"])
    if cid == TIME_STRETCH:
        return time_stretch(clip, p["rate"])
    raise InvalidInput(f"unknown impairment class {cid!r}")


def apply_composite(clip: AudioClip, label: CompositeLabel, rng_seed: int,
                    noise_lookup=None, codec_command: str | None = None) -> AudioClip:
    """Apply the ordered impairments; fully determined by (clip, label, seed)."""
    out = clip
    for i, spec in enumerate(label.specs):
        out = apply_spec(out, spec, derive_seed(rng_seed, i, spec.class_id),
                         noise_lookup, codec_command)
    return out
