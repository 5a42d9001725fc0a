"""Time-frequency features: log-magnitude STFT, log-Mel, and MFCC.

Framing follows the model's preprocessing: 20 ms Hann window, 10 ms
hop, 16 kHz, FFT size 512 (the 320-sample window is zero-padded).
Log values are clamped to [-7, 7]; the log epsilon of 1e-8 puts
silence exactly on the clamp floor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .audio_io import AudioClip
from .errors import InvalidInput

LOG_CLAMP = 7.0
LOG_EPS = 1e-8
DEFAULT_MEL_BANDS = 64
MFCC_COEFFS = 12

KIND_LOG_STFT = "LogSTFT"
KIND_LOG_MEL = "LogMel"
KIND_MFCC = "MFCC"

_KIND_CODES = {KIND_LOG_STFT: 0, KIND_LOG_MEL: 1, KIND_MFCC: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
_FEATURE_MAGIC = b"SQFT"
_FEATURE_VERSION = 1


@dataclass(frozen=True)
class FramingConfig:
    window_ms: float = 20.0
    hop_ms: float = 10.0
    window_kind: str = "hann"
    fft_size: int = 512
    sample_rate: int = 16000

    @property
    def window_length(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    def __post_init__(self):
        if self.window_kind != "hann":
            raise InvalidInput(f"unsupported window kind {self.window_kind!r}")
        if self.window_length > self.fft_size:
            raise InvalidInput("window length exceeds fft_size")
        if self.hop_length > self.window_length:
            raise InvalidInput("hop length exceeds window length")

    def frame_count(self, n_samples: int) -> int:
        return (n_samples - self.window_length) // self.hop_length + 1


@dataclass
class SpectralFeature:
    """A frames x bins array of one feature kind plus its framing."""

    values: np.ndarray
    kind: str
    framing: FramingConfig = field(default_factory=FramingConfig)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (the STFT convention)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def frame_signal(x: np.ndarray, cfg: FramingConfig) -> np.ndarray:
    """Slice a signal into overlapping frames [frames x window_length]."""
    win_len, hop = cfg.window_length, cfg.hop_length
    if len(x) < win_len:
        raise InvalidInput(f"clip of {len(x)} samples is shorter than one {win_len}-sample window")
    n_frames = cfg.frame_count(len(x))
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def stft_magnitude(clip: AudioClip, cfg: FramingConfig | None = None) -> np.ndarray:
    """Raw (un-clamped) magnitude spectrogram [frames x fft_size/2+1]."""
    cfg = cfg or FramingConfig()
    frames = frame_signal(np.asarray(clip.samples, dtype=np.float64), cfg)
    windowed = frames * hann_window(cfg.window_length)[None, :]
    return np.abs(np.fft.rfft(windowed, n=cfg.fft_size, axis=1))


def _log_clamp(mag: np.ndarray) -> np.ndarray:
    return np.clip(np.log(mag + LOG_EPS), -LOG_CLAMP, LOG_CLAMP)


def stft_log_magnitude(clip: AudioClip, cfg: FramingConfig | None = None) -> SpectralFeature:
    """Clamped log-magnitude STFT, the model input for the STFT front end."""
    cfg = cfg or FramingConfig()
    return SpectralFeature(_log_clamp(stft_magnitude(clip, cfg)), KIND_LOG_STFT, cfg)


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, cfg: FramingConfig | None = None,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular mel filters as a [n_bands x fft_bins] weight matrix."""
    cfg = cfg or FramingConfig()
    if n_bands < 1:
        raise InvalidInput("mel_bands must be >= 1")
    f_max = cfg.sample_rate / 2.0 if f_max is None else f_max
    n_bins = cfg.fft_size // 2 + 1
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_bands + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size

    fb = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, ctr, hi = hz_pts[b], hz_pts[b + 1], hz_pts[b + 2]
        rising = (bin_freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - ctr, 1e-12)
        fb[b] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def mel_filter_centers(n_bands: int, cfg: FramingConfig | None = None) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    cfg = cfg or FramingConfig()
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), n_bands + 2)
    return mel_to_hz(mel_pts)[1:-1]


def mel_spectrogram(clip: AudioClip, cfg: FramingConfig | None = None,
                    mel_bands: int = DEFAULT_MEL_BANDS) -> SpectralFeature:
    """Clamped log-mel spectrogram (filterbank applied to the magnitude spectrum)."""
    cfg = cfg or FramingConfig()
    mag = stft_magnitude(clip, cfg)
    fb = mel_filterbank(mel_bands, cfg)
    return SpectralFeature(_log_clamp(mag @ fb.T), KIND_LOG_MEL, cfg)


def dct_ortho(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Orthonormal DCT-II along an axis."""
    return scipy.fft.dct(x, type=2, norm="ortho", axis=axis)


def mfcc_from_log_mel(log_mel: np.ndarray, n_coeffs: int = MFCC_COEFFS) -> np.ndarray:
    """DCT-II of each log-mel frame, keeping the first n_coeffs coefficients."""
    return dct_ortho(log_mel, axis=1)[:, :n_coeffs]


def mfcc(clip: AudioClip, cfg: FramingConfig | None = None,
         mel_bands: int = DEFAULT_MEL_BANDS) -> SpectralFeature:
    """12-coefficient MFCC (c0 retained) of the clamped log-mel spectrogram."""
    cfg = cfg or FramingConfig()
    log_mel = mel_spectrogram(clip, cfg, mel_bands).values
    return SpectralFeature(mfcc_from_log_mel(log_mel), KIND_MFCC, cfg)


def write_feature_file(feature: SpectralFeature, path) -> None:
    """Binary feature dump: magic, version, kind, frames, bins, f32 row-major."""
    vals = np.ascontiguousarray(feature.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<IBII", _FEATURE_VERSION, _KIND_CODES[feature.kind],
                             feature.frames, feature.bins))
        fh.write(vals.tobytes())


def read_feature_file(path) -> SpectralFeature:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FEATURE_MAGIC:
            raise InvalidInput(f"{path} is not a feature dump (bad magic {magic!r})")
        version, kind_code, frames, bins = struct.unpack("<IBII", fh.read(13))
        if version != _FEATURE_VERSION:
            raise InvalidInput(f"unsupported feature dump version {version}")
        data = np.frombuffer(fh.read(frames * bins * 4), dtype="<f4")
    if data.size != frames * bins:
        raise InvalidInput(f"truncated feature dump {path}")
    return SpectralFeature(data.reshape(frames, bins).astype(np.float64),
                           _CODE_KINDS[kind_code])
