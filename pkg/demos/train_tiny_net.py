"""Train a reduced-width quality net from scratch on an SNR ladder.

Eight copies of one utterance are mixed with noise at increasing SNRs and
labeled with the intrusive proxy metric, so the target is a monotone
function of SNR. A quarter-width log-mel net then has to recover that
ordering from audio alone. Takes about half a minute on one CPU.
"""

import numpy as np

from sqalab.audio_io import AudioClip
from sqalab.dsp import mel_spectrogram
from sqalab.impairments import add_background_noise
from sqalab.labeling import proxy_label
from sqalab.metrics import pcc
from sqalab.neural.model import build_dnsmos
from sqalab.neural.train import TrainConfig, predict_batched, train_model
from sqalab.synthgen import speech_clip

SNRS = (-10.0, -5.0, 0.0, 3.0, 6.0, 10.0, 15.0, 25.0)


def main():
    rng = np.random.default_rng(42)
    clean = speech_clip(seed=100, duration_s=1.0)
    clips, targets = [], []
    for snr in SNRS:
        noise = AudioClip(rng.standard_normal(len(clean)) * 0.1,
                          clean.sample_rate)
        degraded = add_background_noise(clean, noise, snr)
        clips.append(degraded)
        targets.append(proxy_label(clean, degraded))
    print("proxy targets by SNR:",
          " ".join(f"{t:.2f}" for t in targets))

    x = np.stack([mel_spectrogram(c).values.astype(np.float32)
                  for c in clips])
    y = np.array(targets)

    model = build_dnsmos(width_scale=0.25, seed=3)
    cfg = TrainConfig(epochs=60, batch_size=8, lr=1e-2, seed=3)

    def show(st):
        if st.epoch % 10 == 0 or st.epoch == cfg.epochs - 1:
            print(f"epoch {st.epoch:3d}  train MSE {st.train_mse:.4f}")

    train_model(model, x, y, x, y, cfg, on_epoch=show)

    preds = predict_batched(model, x)
    print("predictions:        ", " ".join(f"{p:.2f}" for p in preds))
    print(f"prediction/target correlation: {pcc(preds, y):.4f}")


if __name__ == "__main__":
    main()
