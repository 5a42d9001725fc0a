"""Compare two untrained embeddings on the 10-class synthetic noise corpus.

MFCCs carry enough spectral shape to separate the classes; random
projections of the raw waveform are near chance. A kNN over a stratified
70/30 split quantifies the gap, and a 2-D PCA of the MFCC embedding is
exported as CSV + SVG under demos_out/.
"""

import os

from sqalab.probe import (
    export_pca_csv,
    mfcc_features,
    pca_2d,
    probe_accuracy,
    random_projection_features,
    render_pca_svg,
    stratified_split,
)
from sqalab.synthgen import make_noise_corpus

OUT = "demos_out"


def main():
    clips, labels = make_noise_corpus(12, seed=0, duration_s=2.0)
    print(f"{len(clips)} clips across {len(set(labels))} noise classes")

    for emb in (mfcc_features(clips, labels, aggregate="flatten"),
                random_projection_features(clips, labels, out_dim=128,
                                           seed=0)):
        train, test = stratified_split(emb, train_frac=0.7, seed=0)
        acc = probe_accuracy(train, test, k=5)
        print(f"{emb.source:>18}: top-1 {acc['top1']:.3f} "
              f"top-3 {acc['top3']:.3f} (chance 0.100)")

    os.makedirs(OUT, exist_ok=True)
    emb = mfcc_features(clips, labels, aggregate="flatten")
    coords, ratios = pca_2d(emb)
    csv_path = os.path.join(OUT, "noise_pca.csv")
    svg_path = os.path.join(OUT, "noise_pca.svg")
    export_pca_csv(csv_path, emb, coords)
    render_pca_svg(svg_path, emb, coords, ratios)
    print(f"PCA explains {ratios[0]:.1%} + {ratios[1]:.1%} of variance; "
          f"wrote {csv_path} and {svg_path}")


if __name__ == "__main__":
    main()
