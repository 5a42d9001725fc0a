"""Latent-space clustering probe.

Takes per-clip embedding vectors (trained latents, random projections,
or flattened MFCCs), splits them stratified by class, and scores how
well a kNN recovers the impairment class. Also exports 2-component PCA
coordinates with a deterministic SVG scatter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import mel_spectrogram, mfcc, stft_log_magnitude
from .errors import DegenerateInput, InvalidInput
from .metrics import top_k_accuracy
from .seeds import stream_rng

DEFAULT_K = 15
DEFAULT_TRAIN_FRAC = 0.7


@dataclass
class EmbeddingSet:
    """N embedding vectors with aligned class labels and clip ids."""

    vectors: np.ndarray
    labels: list
    ids: list
    source: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise InvalidInput("vectors must be an N x d matrix")
        n = self.vectors.shape[0]
        if len(self.labels) != n or len(self.ids) != n:
            raise InvalidInput("vectors, labels and ids must align")

    def __len__(self):
        return self.vectors.shape[0]

    def take(self, idx) -> "EmbeddingSet":
        return EmbeddingSet(self.vectors[idx],
                            [self.labels[i] for i in idx],
                            [self.ids[i] for i in idx], self.source)


def stratified_split(emb: EmbeddingSet, train_frac: float = DEFAULT_TRAIN_FRAC,
                     seed: int = 0):
    """Per-class split: floor(count * frac) each, then largest fractional
    remainders promoted until the overall train share is within one item
    of floor(N * frac). Shuffling within class is seeded."""
    if not (0.0 < train_frac < 1.0):
        raise InvalidInput("train_frac must lie in (0, 1)")
    classes = sorted(set(emb.labels))
    by_class = {c: [i for i, l in enumerate(emb.labels) if l == c]
                for c in classes}
    for c, members in by_class.items():
        if len(members) < 2:
            raise InvalidInput(f"class {c!r} has fewer than 2 members")

    rng = stream_rng(seed, "stratified_split")
    take = {}
    remainders = []
    for c in classes:
        exact = len(by_class[c]) * train_frac
        take[c] = int(np.floor(exact))
        remainders.append((-(exact - take[c]), c))
    total_target = int(np.floor(len(emb) * train_frac))
    remainders.sort()
    for _, c in remainders:
        if sum(take.values()) >= total_target:
            break
        if take[c] < len(by_class[c]) - 1:
            take[c] += 1

    train_idx, test_idx = [], []
    for c in classes:
        members = np.array(by_class[c])
        members = members[rng.permutation(len(members))]
        train_idx.extend(members[:take[c]].tolist())
        test_idx.extend(members[take[c]:].tolist())
    return emb.take(train_idx), emb.take(test_idx)


def _class_centroids(train: EmbeddingSet):
    classes = sorted(set(train.labels))
    cents = np.stack([train.vectors[[i for i, l in enumerate(train.labels)
                                     if l == c]].mean(axis=0)
                      for c in classes])
    return classes, cents


def knn_rank(train: EmbeddingSet, query: np.ndarray, k: int = DEFAULT_K,
             _centroids=None) -> list:
    """All train classes ranked for one query.

    Classes with votes among the k nearest come first (vote count desc,
    then smaller min distance to the query, then name); voteless classes
    follow in nearest-centroid order.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (train.vectors.shape[1],):
        raise InvalidInput(
            f"query dim {query.shape} does not match train dim "
            f"{train.vectors.shape[1]}")
    if not (1 <= k <= len(train)):
        raise InvalidInput("k must lie in [1, len(train)]")
    dist = np.sqrt(np.sum((train.vectors - query) ** 2, axis=1))
    nearest = np.argsort(dist, kind="stable")[:k]

    votes: dict = {}
    min_dist: dict = {}
    for i in nearest:
        c = train.labels[i]
        votes[c] = votes.get(c, 0) + 1
        if c not in min_dist or dist[i] < min_dist[c]:
            min_dist[c] = dist[i]
    voted = sorted(votes, key=lambda c: (-votes[c], min_dist[c], c))

    classes, cents = _centroids if _centroids is not None \
        else _class_centroids(train)
    rest = [c for c in classes if c not in votes]
    cent_dist = {c: float(np.sqrt(np.sum((cents[classes.index(c)] - query) ** 2)))
                 for c in rest}
    rest.sort(key=lambda c: (cent_dist[c], c))
    return voted + rest


def knn_rank_all(train: EmbeddingSet, queries: np.ndarray,
                 k: int = DEFAULT_K) -> list:
    cents = _class_centroids(train)
    return [knn_rank(train, q, k, _centroids=cents) for q in queries]


def probe_accuracy(train: EmbeddingSet, test: EmbeddingSet,
                   k: int = DEFAULT_K) -> dict:
    """Top-1 and top-3 kNN accuracy of test queries against train."""
    rankings = knn_rank_all(train, test.vectors, k)
    return {
        "top1": top_k_accuracy(rankings, test.labels, 1),
        "top3": top_k_accuracy(rankings, test.labels, 3),
        "n_train": len(train),
        "n_test": len(test),
    }


# --- baseline feature extractors ----------------------------------------

def random_projection_features(clips: list, labels: list, out_dim: int = 128,
                               seed: int = 0) -> EmbeddingSet:
    """out_dim inner products with seeded Gaussian directions.

    Direction entries have variance 1/d (d = clip length), so each
    direction has expected squared norm 1. One matrix serves the whole
    set.
    """
    if not clips:
        raise InvalidInput("empty clip list")
    d = len(clips[0])
    if any(len(c) != d for c in clips):
        raise InvalidInput("all clips must share one length")
    rng = stream_rng(seed, "random_projection")
    directions = rng.standard_normal((out_dim, d)) / np.sqrt(d)
    vectors = np.stack([directions @ c.samples for c in clips])
    return EmbeddingSet(vectors, list(labels), [c.source_id for c in clips],
                        "random_projection")


def mfcc_features(clips: list, labels: list,
                  aggregate: str = "flatten") -> EmbeddingSet:
    """Flattened (frames x 12) MFCC matrices; 'mean' averages over time
    so mixed-duration sets stay comparable."""
    if aggregate not in ("flatten", "mean"):
        raise InvalidInput(f"unknown aggregation {aggregate!r}")
    mats = [mfcc(c).values for c in clips]
    if aggregate == "flatten":
        frames = {m.shape[0] for m in mats}
        if len(frames) != 1:
            raise InvalidInput("flatten aggregation needs equal frame counts")
        vectors = np.stack([m.reshape(-1) for m in mats])
    else:
        vectors = np.stack([m.mean(axis=0) for m in mats])
    return EmbeddingSet(vectors, list(labels), [c.source_id for c in clips],
                        "mfcc")


def extract_latents(model, clips: list, labels: list,
                    batch_size: int = 8) -> EmbeddingSet:
    """One latent per clip via inference-mode forward passes.

    Clips are featurized to the model's input kind; equal-length clips
    are batched, so BatchNorm inference determinism keeps the result
    independent of batch composition.
    """
    feats = []
    for c in clips:
        if model.input_kind == "LogMel":
            feats.append(mel_spectrogram(c).values)
        else:
            feats.append(stft_log_magnitude(c).values)
    return latents_from_features(model, feats,
                                 labels, [c.source_id for c in clips],
                                 batch_size)


def latents_from_features(model, feats: list, labels: list, ids: list,
                          batch_size: int = 8) -> EmbeddingSet:
    shapes = {f.shape for f in feats}
    vectors = np.zeros((len(feats), model.latent_dim))
    if len(shapes) == 1:
        stacked = np.stack(feats)
        for i in range(0, len(feats), batch_size):
            _, lat = model.forward(stacked[i:i + batch_size][:, None, :, :],
                                   training=False, return_latent=True)
            vectors[i:i + batch_size] = lat
    else:
        for i, f in enumerate(feats):
            _, lat = model.forward(f[None, None, :, :], training=False,
                                   return_latent=True)
            vectors[i] = lat[0]
    return EmbeddingSet(vectors, list(labels), list(ids), model.name)


# --- PCA ------------------------------------------------------------------

_PCA_TOL = 1e-10
_PCA_MAX_ITER = 100000


def _power_iteration(cov: np.ndarray, start: np.ndarray):
    v = start / np.linalg.norm(start)
    lam = 0.0
    for _ in range(_PCA_MAX_ITER):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < 1e-30:
            return 0.0, v
        w /= norm
        done = np.linalg.norm(w - v) < _PCA_TOL
        v = w
        if done:
            break
    lam = float(v @ cov @ v)
    return lam, v


def pca_2d(emb: EmbeddingSet):
    """Top-2 principal components by power iteration with deflation.

    Returns (coords [N x 2], explained_variance_ratios [2]). Component
    signs are fixed so each vector's largest-magnitude entry is positive.
    """
    x = emb.vectors
    if x.shape[0] < 3 or x.shape[1] < 2:
        raise InvalidInput("PCA needs at least 3 points of dimension >= 2")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / x.shape[0]
    total = float(np.trace(cov))
    if total <= 0.0 or not np.isfinite(total):
        raise DegenerateInput("embedding set has zero variance")

    d = cov.shape[0]
    start = np.ones(d) + np.arange(d) / max(d - 1, 1)
    comps, lams = [], []
    work = cov.copy()
    for _ in range(2):
        lam, v = _power_iteration(work, start)
        i = int(np.argmax(np.abs(v)))
        if v[i] < 0:
            v = -v
        comps.append(v)
        lams.append(max(lam, 0.0))
        work = work - lam * np.outer(v, v)
    coords = centered @ np.stack(comps).T
    ratios = np.array(lams) / total
    return coords, ratios


# --- exports --------------------------------------------------------------

_PALETTE = [
    "#4363d8", "#e6194b", "#3cb44b", "#ffe119", "#f58231", "#911eb4",
    "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080", "#e6beff",
    "#9a6324", "#fffac8", "#800000", "#aaffc3", "#808000", "#ffd8b1",
    "#000075", "#808080",
]


def export_pca_csv(path: str, emb: EmbeddingSet, coords: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("clip_id,class,pc1,pc2\n")
        for cid, label, (a, b) in zip(emb.ids, emb.labels, coords):
            f.write(f"{cid},{label},{a:.10g},{b:.10g}\n")


def render_pca_svg(path: str, emb: EmbeddingSet, coords: np.ndarray,
                   ratios: np.ndarray) -> None:
    """Self-contained scatter: one color per class, legend, variance axes."""
    classes = sorted(set(emb.labels))
    colors = {c: _PALETTE[i % len(_PALETTE)] for i, c in enumerate(classes)}
    width, height, margin, legend_w = 640, 480, 50, 210
    plot_w, plot_h = width - 2 * margin - legend_w, height - 2 * margin

    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi - lo < 1e-12, 1.0, hi - lo)

    def sx(v):
        return margin + (v - lo[0]) / span[0] * plot_w

    def sy(v):
        return height - margin - (v - lo[1]) / span[1] * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444"/>',
        f'<text x="{margin + plot_w / 2:.1f}" y="{height - 12}" '
        f'text-anchor="middle" font-size="13">PC1 ({100 * ratios[0]:.1f}% var)</text>',
        f'<text x="14" y="{margin + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-size="13" transform="rotate(-90 14 {margin + plot_h / 2:.1f})">'
        f'PC2 ({100 * ratios[1]:.1f}% var)</text>',
    ]
    for (a, b), label in zip(coords, emb.labels):
        parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" '
                     f'fill="{colors[label]}" fill-opacity="0.75"/>')
    ly = margin
    lx = width - legend_w - margin + 16
    for c in classes:
        parts.append(f'<rect x="{lx}" y="{ly}" width="10" height="10" '
                     f'fill="{colors[c]}"/>')
        parts.append(f'<text x="{lx + 15}" y="{ly + 9}" font-size="10">{c}</text>')
        ly += 16
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
