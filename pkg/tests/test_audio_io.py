import numpy as np
import pytest
from scipy.io import wavfile

from sqalab.audio_io import (
    TARGET_RATE,
    AudioClip,
    fix_duration,
    ingest_wav,
    read_wav,
    resample,
    resample_ratio,
    write_wav,
)
from sqalab.errors import AudioFormatError, InvalidInput


def sine(freq, seconds, rate, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def dominant_freq(x, rate):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.argmax(spec) * rate / len(x)


def test_float32_round_trip_is_lossless_even_past_full_scale(tmp_path, rng):
    x = (rng.standard_normal(4000) * 1.4).astype(np.float32).astype(np.float64)
    clip = AudioClip(x, 16000, "hot")
    path = tmp_path / "f32.wav"
    write_wav(clip, path)
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.array_equal(back.samples, x)


def test_int16_round_trip_within_one_quantization_step(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, 4000)
    clip = AudioClip(x, 16000)
    path = tmp_path / "i16.wav"
    write_wav(clip, path, fmt="int16")
    back = read_wav(path)
    assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768.0


def test_int16_rounding_law_and_clamp(tmp_path):
    clip = AudioClip(np.array([0.5, -0.25, 1.7, -2.0, 1.0]), 8000)
    path = tmp_path / "law.wav"
    write_wav(clip, path, fmt="int16")
    _, raw = wavfile.read(str(path))
    assert raw.tolist() == [16384, -8192, 32767, -32768, 32767]


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(InvalidInput):
        write_wav(AudioClip(np.zeros(4), 8000), tmp_path / "x.wav", fmt="mp3")


def test_multichannel_averaged_and_int32_scaled(tmp_path):
    stereo = np.stack([np.full(100, 0.5), np.full(100, -0.5)], axis=1)
    path = tmp_path / "st.wav"
    wavfile.write(str(path), 16000, stereo.astype(np.float32))
    clip = read_wav(path)
    assert clip.samples.ndim == 1
    assert np.allclose(clip.samples, 0.0)

    path2 = tmp_path / "i32.wav"
    wavfile.write(str(path2), 16000, np.array([2**30, -(2**30)], dtype=np.int32))
    clip2 = read_wav(path2)
    assert np.allclose(clip2.samples, [0.5, -0.5])


def test_read_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a riff container at all")
    with pytest.raises(AudioFormatError):
        read_wav(path)
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "missing.wav")


def test_clip_validation():
    with pytest.raises(InvalidInput):
        AudioClip(np.zeros((2, 2)), 16000)
    clip = AudioClip(np.zeros(16000), 16000)
    assert len(clip) == 16000
    assert clip.duration == pytest.approx(1.0)


def test_fix_duration_crop_and_tile():
    clip = AudioClip(np.arange(5, dtype=np.float64), 10)
    longer = fix_duration(clip, 0.8)
    assert longer.samples.tolist() == [0, 1, 2, 3, 4, 0, 1, 2]
    shorter = fix_duration(clip, 0.3)
    assert shorter.samples.tolist() == [0, 1, 2]
    same = fix_duration(clip, 0.5)
    assert same.samples.tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(InvalidInput):
        fix_duration(AudioClip(np.zeros(0), 10), 1.0)


def test_resample_identity_is_passthrough():
    clip = AudioClip(np.arange(100, dtype=np.float64), 16000)
    assert resample(clip, 16000) is clip


@pytest.mark.parametrize("src_rate", [8000, 44100, 48000])
def test_resample_preserves_tone_frequency(src_rate):
    x = sine(440.0, 1.0, src_rate)
    clip = resample(AudioClip(x, src_rate), TARGET_RATE)
    assert clip.sample_rate == TARGET_RATE
    assert len(clip) == int(round(len(x) * TARGET_RATE / src_rate))
    assert abs(dominant_freq(clip.samples, TARGET_RATE) - 440.0) < 2.0
    # interior amplitude preserved (edges carry filter transients)
    mid = clip.samples[1000:-1000]
    assert np.max(np.abs(mid)) == pytest.approx(0.5, abs=0.02)


def test_downsampling_removes_content_above_new_nyquist():
    # 11 kHz tone cannot exist at a 16 kHz rate; it must be attenuated away
    x = sine(11000.0, 1.0, 44100)
    y = resample_ratio(x, 16000 / 44100)
    assert np.sqrt(np.mean(y[500:-500] ** 2)) < 1e-3


def test_upsampling_tone_snr():
    x = sine(1000.0, 1.0, 8000)
    y = resample_ratio(x, 2.0)
    ref = sine(1000.0, 1.0, 16000)
    n = min(len(y), len(ref))
    err = y[800:n - 800] - ref[800:n - 800]
    snr = 10 * np.log10(np.sum(ref[800:n - 800] ** 2) / np.sum(err ** 2))
    assert snr > 60.0


def test_ingest_pipeline(tmp_path):
    x = sine(300.0, 2.0, 48000)
    path = tmp_path / "in.wav"
    write_wav(AudioClip(x, 48000), path)
    clip = ingest_wav(path, target_seconds=1.0)
    assert clip.sample_rate == TARGET_RATE
    assert len(clip) == TARGET_RATE
