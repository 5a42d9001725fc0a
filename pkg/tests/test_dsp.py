import numpy as np
import pytest
import scipy.signal

from sqalab.audio_io import AudioClip
from sqalab.dsp import (
    LOG_CLAMP,
    LOG_EPS,
    FramingConfig,
    SpectralFeature,
    dct_ortho,
    frame_signal,
    hann_window,
    hz_to_mel,
    mel_filter_centers,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    mfcc,
    read_feature_file,
    stft_log_magnitude,
    stft_magnitude,
    write_feature_file,
)
from sqalab.errors import InvalidInput

CFG = FramingConfig()


def test_framing_geometry():
    assert CFG.window_length == 320
    assert CFG.hop_length == 160
    # one second of 16 kHz audio: 99 hops fit after the first window
    assert CFG.frame_count(16000) == 99
    for n in [320, 321, 479, 480, 4800]:
        # brute count: positions p such that p + window fits
        brute = sum(1 for p in range(0, n, 160) if p + 320 <= n)
        assert CFG.frame_count(n) == brute


def test_framing_config_validation():
    with pytest.raises(InvalidInput):
        FramingConfig(window_kind="hamming")
    with pytest.raises(InvalidInput):
        FramingConfig(window_ms=40.0, fft_size=512)  # 640 > 512
    with pytest.raises(InvalidInput):
        FramingConfig(window_ms=10.0, hop_ms=20.0)


def test_hann_window_is_periodic_convention():
    w = hann_window(320)
    ref = scipy.signal.get_window("hann", 320, fftbins=True)
    assert np.allclose(w, ref, atol=1e-12)
    assert w[0] == 0.0
    assert w[-1] > 0.0  # periodic window never touches zero at the right edge


def test_frame_signal_slices():
    x = np.arange(800, dtype=np.float64)
    frames = frame_signal(x, CFG)
    assert frames.shape == (CFG.frame_count(800), 320)
    for i in range(frames.shape[0]):
        assert np.array_equal(frames[i], x[i * 160: i * 160 + 320])
    with pytest.raises(InvalidInput):
        frame_signal(np.zeros(319), CFG)


def test_pure_tone_lands_on_exact_bin_with_exact_peak():
    # 1 kHz at 16 kHz with a 512-point FFT falls exactly on bin 32;
    # 320 samples hold 20 full cycles so there is zero leakage and the
    # peak equals sum(hann)/2 = 80 for a unit-amplitude sine.
    t = np.arange(16000) / 16000.0
    clip = AudioClip(np.sin(2 * np.pi * 1000.0 * t), 16000)
    mag = stft_magnitude(clip)
    assert mag.shape == (99, 257)
    assert np.all(np.argmax(mag, axis=1) == 32)
    assert np.allclose(mag[:, 32], 80.0, atol=1e-9)


def test_log_clamp_floor_and_ceiling():
    silent = stft_log_magnitude(AudioClip(np.zeros(16000), 16000))
    assert np.all(silent.values == np.log(LOG_EPS).clip(-LOG_CLAMP, LOG_CLAMP))
    assert silent.values[0, 0] == -7.0
    loud = stft_log_magnitude(AudioClip(np.full(16000, 1e6), 16000))
    assert loud.values.max() == 7.0
    assert silent.kind == "LogSTFT"


def test_mel_scale_round_trip_and_1khz_anchor():
    f = np.array([0.0, 100.0, 440.0, 1000.0, 4000.0, 8000.0])
    assert np.allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.1)


def test_mel_filterbank_shape_and_coverage():
    fb = mel_filterbank(64)
    assert fb.shape == (64, 257)
    assert np.all(fb >= 0.0)
    assert np.all(fb.sum(axis=1) > 0.0)  # no empty filter at this resolution
    centers = mel_filter_centers(64)
    assert len(centers) == 64
    assert np.all(np.diff(centers) > 0)
    bin_freqs = np.arange(257) * 16000 / 512
    # every bin between the first and last center is covered by some filter
    covered = fb.sum(axis=0) > 0
    inside = (bin_freqs > centers[0]) & (bin_freqs < centers[-1])
    assert np.all(covered[inside])
    # each filter peaks near its own center frequency
    for b in [0, 20, 45, 63]:
        peak_hz = bin_freqs[np.argmax(fb[b])]
        width = centers[min(b + 1, 63)] - centers[max(b - 1, 0)]
        assert abs(peak_hz - centers[b]) <= width
    with pytest.raises(InvalidInput):
        mel_filterbank(0)


def test_mel_spectrogram_matches_manual_composition(rng):
    clip = AudioClip(rng.standard_normal(8000) * 0.1, 16000)
    feat = mel_spectrogram(clip)
    assert feat.kind == "LogMel"
    assert feat.bins == 64
    manual = np.clip(
        np.log(stft_magnitude(clip) @ mel_filterbank(64).T + LOG_EPS),
        -LOG_CLAMP, LOG_CLAMP)
    assert np.array_equal(feat.values, manual)


def test_dct_is_orthonormal_type_two(rng):
    n = 64
    basis = dct_ortho(np.eye(n))
    assert np.allclose(basis @ basis.T, np.eye(n), atol=1e-12)
    # explicit cosine-matrix oracle
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    oracle = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    oracle[0] /= np.sqrt(2.0)
    x = rng.standard_normal((5, n))
    assert np.allclose(dct_ortho(x), x @ oracle.T, atol=1e-10)


def test_mfcc_shape_and_energy_ordering(rng):
    clip = AudioClip(rng.standard_normal(16000) * 0.1, 16000)
    feat = mfcc(clip)
    assert feat.kind == "MFCC"
    assert feat.values.shape == (99, 12)
    full = dct_ortho(mel_spectrogram(clip).values, axis=1)
    assert np.array_equal(feat.values, full[:, :12])


def test_feature_file_round_trip(tmp_path, rng):
    vals = rng.standard_normal((37, 13))
    feat = SpectralFeature(vals, "MFCC")
    path = tmp_path / "x.sqft"
    write_feature_file(feat, path)
    back = read_feature_file(path)
    assert back.kind == "MFCC"
    assert back.values.shape == (37, 13)
    assert np.array_equal(back.values, vals.astype(np.float32).astype(np.float64))


def test_feature_file_rejects_corruption(tmp_path, rng):
    path = tmp_path / "x.sqft"
    write_feature_file(SpectralFeature(rng.standard_normal((4, 4)), "LogMel"), path)
    raw = path.read_bytes()
    bad_magic = tmp_path / "m.sqft"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(InvalidInput):
        read_feature_file(bad_magic)
    truncated = tmp_path / "t.sqft"
    truncated.write_bytes(raw[:-8])
    with pytest.raises(InvalidInput):
        read_feature_file(truncated)
    bad_version = tmp_path / "v.sqft"
    bad_version.write_bytes(raw[:4] + b"\x63\x00\x00\x00" + raw[8:])
    with pytest.raises(InvalidInput):
        read_feature_file(bad_version)
