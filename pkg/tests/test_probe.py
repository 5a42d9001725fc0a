import numpy as np
import pytest

from sqalab.audio_io import AudioClip
from sqalab.errors import DegenerateInput, InvalidInput
from sqalab.metrics import pcc
from sqalab.neural import build_dnsmos, build_dnsmos_plus
from sqalab.probe import (
    EmbeddingSet,
    export_pca_csv,
    extract_latents,
    knn_rank,
    latents_from_features,
    mfcc_features,
    pca_2d,
    probe_accuracy,
    random_projection_features,
    render_pca_svg,
    stratified_split,
)

SR = 16000


def blob_set(rng, per_class=40, dim=8, spread=0.5, sep=10.0):
    centers = {"a": np.zeros(dim), "b": np.full(dim, sep / np.sqrt(dim))}
    vecs, labels = [], []
    for name, ctr in centers.items():
        vecs.append(ctr + spread * rng.standard_normal((per_class, dim)))
        labels += [name] * per_class
    ids = [f"p{i}" for i in range(2 * per_class)]
    return EmbeddingSet(np.vstack(vecs), labels, ids, "test")


def test_embedding_set_validation(rng):
    with pytest.raises(InvalidInput):
        EmbeddingSet(rng.standard_normal(5), ["a"] * 5, ["i"] * 5, "s")
    with pytest.raises(InvalidInput):
        EmbeddingSet(rng.standard_normal((5, 2)), ["a"] * 4, ["i"] * 5, "s")
    emb = EmbeddingSet(rng.standard_normal((5, 2)), list("aabbc"),
                       [f"i{k}" for k in range(5)], "s")
    sub = emb.take([0, 3])
    assert len(sub) == 2
    assert sub.labels == ["a", "b"]
    assert sub.ids == ["i0", "i3"]


def test_stratified_split_floor_plus_promotion(rng):
    # 41 items at 0.7: train gets floor(41 * 0.7) = 28, test the other 13
    sizes = {"a": 14, "b": 14, "c": 13}
    labels = [c for c, n in sizes.items() for _ in range(n)]
    emb = EmbeddingSet(rng.standard_normal((41, 4)), labels,
                       [f"i{k}" for k in range(41)], "s")
    train, test = stratified_split(emb, 0.7, seed=5)
    assert len(train) == 28
    assert len(test) == 13
    assert sorted(train.ids + test.ids) == sorted(emb.ids)
    for c in sizes:
        assert train.labels.count(c) >= 9
        assert test.labels.count(c) >= 3  # every class lands in both sides


def test_stratified_split_determinism_and_errors(rng):
    emb = blob_set(rng, per_class=10)
    a1, b1 = stratified_split(emb, 0.7, seed=3)
    a2, b2 = stratified_split(emb, 0.7, seed=3)
    assert a1.ids == a2.ids and b1.ids == b2.ids
    a3, _ = stratified_split(emb, 0.7, seed=4)
    assert a1.ids != a3.ids
    with pytest.raises(InvalidInput):
        stratified_split(emb, 1.0)
    lonely = EmbeddingSet(rng.standard_normal((3, 2)), ["a", "a", "b"],
                          ["1", "2", "3"], "s")
    with pytest.raises(InvalidInput):
        stratified_split(lonely, 0.5)


def test_two_blobs_are_nearly_perfect(rng):
    emb = blob_set(rng)
    train, test = stratified_split(emb, 0.7, seed=1)
    acc = probe_accuracy(train, test, k=5)
    assert acc["top1"] >= 0.99
    assert acc["top3"] == 1.0
    assert acc["n_train"] + acc["n_test"] == len(emb)


def test_knn_rank_contract(rng):
    emb = blob_set(rng, per_class=6, dim=3)
    ranking = knn_rank(emb, emb.vectors[0], k=1)
    assert ranking[0] == emb.labels[0]  # exact self-match wins at k=1
    assert sorted(ranking) == ["a", "b"]  # every class appears exactly once
    with pytest.raises(InvalidInput):
        knn_rank(emb, np.zeros(7), k=1)
    with pytest.raises(InvalidInput):
        knn_rank(emb, emb.vectors[0], k=0)
    with pytest.raises(InvalidInput):
        knn_rank(emb, emb.vectors[0], k=99)


def test_knn_tie_breaks_are_deterministic():
    # one point per class, equidistant from the query: vote counts and
    # min distances tie, so the class name decides
    vecs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    emb = EmbeddingSet(vecs, ["zeta", "beta", "mid", "mid"],
                       ["1", "2", "3", "4"], "s")
    r1 = knn_rank(emb, np.zeros(2), k=2)
    assert r1[:2] == ["beta", "zeta"]
    assert knn_rank(emb, np.zeros(2), k=2) == r1
    # a voteless class ranks behind all voted ones
    assert r1[2] == "mid"


def test_probe_accuracy_invariant_to_test_order(rng):
    emb = blob_set(rng, per_class=15, spread=3.0, sep=4.0)  # overlapping blobs
    train, test = stratified_split(emb, 0.7, seed=2)
    acc = probe_accuracy(train, test, k=5)
    perm = rng.permutation(len(test))
    acc_shuffled = probe_accuracy(train, test.take(perm.tolist()), k=5)
    assert acc["top1"] == acc_shuffled["top1"]
    assert acc["top3"] == acc_shuffled["top3"]


# --- baseline embeddings -----------------------------------------------------

def clips_of(rng, n, length=SR):
    return [AudioClip(rng.standard_normal(length) * 0.2, SR, f"c{i}")
            for i in range(n)]


def test_random_projection_shape_and_determinism(rng):
    clips = clips_of(rng, 5)
    a = random_projection_features(clips, ["x"] * 5, out_dim=16, seed=3)
    b = random_projection_features(clips, ["x"] * 5, out_dim=16, seed=3)
    c = random_projection_features(clips, ["x"] * 5, out_dim=16, seed=4)
    assert a.vectors.shape == (5, 16)
    assert np.array_equal(a.vectors, b.vectors)
    assert not np.array_equal(a.vectors, c.vectors)
    assert a.ids == [f"c{i}" for i in range(5)]
    assert a.source == "random_projection"


def test_random_projection_linearity_and_norm(rng):
    clips = clips_of(rng, 1, length=4000)
    doubled = [AudioClip(clips[0].samples * 2.0, SR, "c0")]
    a = random_projection_features(clips, ["x"], out_dim=256, seed=0)
    b = random_projection_features(doubled, ["x"], out_dim=256, seed=0)
    assert np.allclose(b.vectors, 2.0 * a.vectors, atol=1e-12)
    # direction rows have unit expected norm: Var(r . x) ~ ||x||^2 / d
    expected_var = np.sum(clips[0].samples ** 2) / 4000
    assert np.var(a.vectors) == pytest.approx(expected_var, rel=0.3)


def test_random_projection_errors(rng):
    with pytest.raises(InvalidInput):
        random_projection_features([], [], 8)
    uneven = [AudioClip(np.zeros(100), SR, "a"), AudioClip(np.zeros(99), SR, "b")]
    with pytest.raises(InvalidInput):
        random_projection_features(uneven, ["x", "y"], 8)


def test_mfcc_features_dims(rng):
    clips = clips_of(rng, 3)
    flat = mfcc_features(clips, ["x", "y", "z"])
    assert flat.vectors.shape == (3, 99 * 12)  # one second: 99 frames of 12
    mean = mfcc_features(clips, ["x", "y", "z"], aggregate="mean")
    assert mean.vectors.shape == (3, 12)
    assert np.allclose(mean.vectors[0],
                       flat.vectors[0].reshape(99, 12).mean(axis=0), atol=1e-12)
    with pytest.raises(InvalidInput):
        mfcc_features(clips, ["x"] * 3, aggregate="max")
    uneven = clips_of(rng, 1) + clips_of(rng, 1, length=SR // 2)
    with pytest.raises(InvalidInput):
        mfcc_features(uneven, ["x", "y"])
    assert mfcc_features(uneven, ["x", "y"], aggregate="mean").vectors.shape == (2, 12)


def test_extract_latents_dispatches_on_input_kind(rng):
    clips = clips_of(rng, 3)
    mel_model = build_dnsmos(width_scale=0.125, seed=1)
    stft_model = build_dnsmos_plus(width_scale=0.125, seed=1)
    a = extract_latents(mel_model, clips, ["x", "y", "z"])
    b = extract_latents(stft_model, clips, ["x", "y", "z"])
    assert a.vectors.shape == (3, mel_model.latent_dim)
    assert b.vectors.shape == (3, stft_model.latent_dim)
    assert a.source == "dnsmos"
    assert b.source == "dnsmos_plus"


def test_latents_independent_of_batch_composition(rng):
    model = build_dnsmos(width_scale=0.125, seed=1)
    feats = [rng.standard_normal((50, 64)) for _ in range(6)]
    ids = [f"i{k}" for k in range(6)]
    big = latents_from_features(model, feats, ["x"] * 6, ids, batch_size=6)
    one = latents_from_features(model, feats, ["x"] * 6, ids, batch_size=1)
    assert np.array_equal(big.vectors, one.vectors)
    # mixed shapes fall back to the per-clip path with identical results
    mixed = latents_from_features(model, feats[:5] + [rng.standard_normal((60, 64))],
                                  ["x"] * 6, ids, batch_size=6)
    assert np.array_equal(mixed.vectors[:5], big.vectors[:5])


# --- PCA -----------------------------------------------------------------

def test_pca_rank_one_data(rng):
    t = rng.standard_normal(30)
    v = np.zeros(6)
    v[0], v[1] = 3.0, 1.0
    emb = EmbeddingSet(np.outer(t, v), ["x"] * 30, [str(i) for i in range(30)], "s")
    coords, ratios = pca_2d(emb)
    assert ratios[0] == pytest.approx(1.0, abs=1e-10)
    assert ratios[1] == pytest.approx(0.0, abs=1e-10)
    # first component tracks t (positive sign: largest entry of v direction)
    assert pcc(coords[:, 0], t) == pytest.approx(1.0, abs=1e-9)


def test_pca_matches_dense_eigensolver(rng):
    x = rng.standard_normal((40, 12)) @ rng.standard_normal((12, 12))
    emb = EmbeddingSet(x, ["x"] * 40, [str(i) for i in range(40)], "s")
    coords, ratios = pca_2d(emb)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / 40
    w, vecs = np.linalg.eigh(cov)
    assert ratios[0] == pytest.approx(w[-1] / np.trace(cov), abs=1e-8)
    assert ratios[1] == pytest.approx(w[-2] / np.trace(cov), abs=1e-8)
    for j, ev in enumerate((vecs[:, -1], vecs[:, -2])):
        ref = centered @ ev
        agree = min(np.max(np.abs(coords[:, j] - ref)),
                    np.max(np.abs(coords[:, j] + ref)))
        assert agree < 1e-8


def test_pca_degenerate_inputs(rng):
    flat = EmbeddingSet(np.ones((5, 4)), ["x"] * 5, list("abcde"), "s")
    with pytest.raises(DegenerateInput):
        pca_2d(flat)
    tiny = EmbeddingSet(rng.standard_normal((2, 4)), ["x"] * 2, ["a", "b"], "s")
    with pytest.raises(InvalidInput):
        pca_2d(tiny)
    thin = EmbeddingSet(rng.standard_normal((5, 1)), ["x"] * 5, list("abcde"), "s")
    with pytest.raises(InvalidInput):
        pca_2d(thin)


def test_pca_exports(tmp_path, rng):
    emb = blob_set(rng, per_class=10, dim=4)
    coords, ratios = pca_2d(emb)
    csv = tmp_path / "pca.csv"
    export_pca_csv(str(csv), emb, coords)
    lines = csv.read_text().splitlines()
    assert lines[0] == "clip_id,class,pc1,pc2"
    assert len(lines) == 21
    assert lines[1].startswith("p0,a,")

    svg = tmp_path / "pca.svg"
    render_pca_svg(str(svg), emb, coords, ratios)
    text = svg.read_text()
    assert text.startswith("<svg")
    assert text.count("<circle") == 20
    assert text.count("<rect") >= 2 + 2  # frame + background + legend swatches
    assert "PC1" in text and "PC2" in text
    render_pca_svg(str(tmp_path / "pca2.svg"), emb, coords, ratios)
    assert (tmp_path / "pca2.svg").read_bytes() == svg.read_bytes()
