"""Walk one synthetic utterance through the impairment bank and verify the
published invariants on the way: SNR after noise mixing, exact clipping
counts, pitch-shift spectral peaks, and reverb decay time.

Writes the degraded variants as WAV files under demos_out/impairments/.
"""

import os

import numpy as np

from sqalab.audio_io import write_wav
from sqalab.impairments import (
    add_background_noise,
    clip_percentile,
    measure_snr_db,
    pitch_shift,
    room_simulate,
    synthesize_rir,
    time_stretch,
)
from sqalab.synthgen import noise_clip, speech_clip

OUT = os.path.join("demos_out", "impairments")


def dominant_hz(clip):
    spec = np.abs(np.fft.rfft(clip.samples))
    return np.argmax(spec) * clip.sample_rate / len(clip.samples)


def main():
    os.makedirs(OUT, exist_ok=True)
    clean = speech_clip(seed=7, duration_s=4.0)
    write_wav(clean, os.path.join(OUT, "clean.wav"))
    print(f"clean: {len(clean)} samples, peak {np.max(np.abs(clean.samples)):.2f}")

    noise = noise_clip("rain_patter", seed=3, duration_s=4.0)
    noisy = add_background_noise(clean, noise, snr_db=5.0)
    got = measure_snr_db(clean.samples, noisy.samples - clean.samples)
    write_wav(noisy, os.path.join(OUT, "noisy_5db.wav"))
    print(f"background noise at 5 dB SNR -> measured {got:.3f} dB")

    clipped = clip_percentile(clean, percentile=20.0)
    thresh = np.max(np.abs(clipped.samples))
    frac = np.mean(np.abs(clipped.samples) >= thresh)
    write_wav(clipped, os.path.join(OUT, "clipped_20pct.wav"))
    print(f"20% clipping -> {frac:.1%} of samples sit at the rail")

    tone = speech_clip(seed=7, duration_s=4.0)
    before = dominant_hz(tone)
    up = pitch_shift(tone, semitones=7.0)
    write_wav(up, os.path.join(OUT, "pitch_up7.wav"))
    print(f"pitch +7 st: dominant {before:.0f} Hz -> {dominant_hz(up):.0f} Hz "
          f"(x{2 ** (7 / 12):.3f} expected)")

    slow = time_stretch(clean, rate=0.8)
    print(f"time stretch 0.8 -> {len(slow) / clean.sample_rate:.2f} s "
          f"(duration preserved by design: {len(slow) == len(clean)})")

    h = synthesize_rir(rt60_s=1.2, sample_rate=clean.sample_rate, rng_seed=5)
    edc = np.cumsum((h ** 2)[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0])
    i5, i25 = (int(np.argmax(edc_db <= d)) for d in (-5.0, -25.0))
    est = 3.0 * (i25 - i5) / clean.sample_rate
    reverbed = room_simulate(clean, rt60_s=1.2, rng_seed=5)
    write_wav(reverbed, os.path.join(OUT, "reverb_1200ms.wav"))
    print(f"room simulation rt60 1.2 s -> decay-curve estimate {est:.2f} s")

    print(f"wrote WAVs to {OUT}/")


if __name__ == "__main__":
    main()
