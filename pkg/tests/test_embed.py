from __future__ import annotations

import numpy as np
import pytest

from scenediff.embed import (
    DEFAULT_COLORS,
    EmbeddingError,
    ToyEmbedderConfig,
    ToyJointEmbedder,
    bilinear_resize,
    create_embedder,
    crop_square,
    preprocess_segment,
    random_orthogonal,
)


# -- preprocessing geometry ---------------------------------------------------


def test_crop_square_hand_worked_example():
    # 3x2 mask block at rows 2..4, cols 5..6 on a 10x10 image: the bounding
    # box is 3x2, so the square side is 3 and the window pads the short
    # (column) axis; integer halving keeps the left edge at col 5.
    img = np.arange(300, dtype=float).reshape(10, 10, 3) / 300.0
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:5, 5:7] = True
    out = crop_square(img, mask)
    assert out.shape == (3, 3, 3)
    assert np.array_equal(out[:, 0:2], img[2:5, 5:7])
    assert np.all(out[:, 2] == 0.0)  # padding column stays black


def test_crop_square_blacks_out_off_mask_pixels():
    img = np.ones((8, 8, 3))
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:6, 2:6] = True
    mask[3, 3] = False  # a hole inside the box
    out = crop_square(img, mask)
    assert out.shape == (4, 4, 3)
    assert np.all(out[1, 1] == 0.0)
    assert np.all(out[0, 0] == 1.0)


def test_crop_square_clamps_window_at_image_edge():
    img = np.ones((6, 6, 3))
    mask = np.zeros((6, 6), dtype=bool)
    mask[0:5, 5:6] = True  # 5x1 box hugging the right edge
    out = crop_square(img, mask)
    assert out.shape == (5, 5, 3)
    # window shifted left to stay inside: mask column lands at local col 4
    assert np.all(out[:, 4] == 1.0)
    assert np.all(out[:, :4] == 0.0)


def test_crop_square_rejects_empty_mask():
    with pytest.raises(EmbeddingError, match="empty"):
        crop_square(np.ones((4, 4, 3)), np.zeros((4, 4), dtype=bool))


def test_bilinear_resize_identity_and_constant():
    img = np.random.default_rng(0).random((7, 5, 3))
    assert np.array_equal(bilinear_resize(img, 7, 5), img)
    const = np.full((9, 9, 3), 0.37)
    assert np.allclose(bilinear_resize(const, 4, 4), 0.37)


def test_preprocess_segment_output_shape(embedder):
    img = np.ones((12, 12, 3)) * 0.5
    mask = np.zeros((12, 12), dtype=bool)
    mask[3:9, 3:9] = True
    patch = preprocess_segment(img, mask, embedder.input_size)
    assert patch.shape == (embedder.input_size, embedder.input_size, 3)


# -- embedding space ----------------------------------------------------------


def test_embeddings_are_unit_norm(embedder):
    for caption, t, i in embedder.vocabulary_pairs():
        assert np.isclose(np.linalg.norm(t), 1.0), caption
        assert np.isclose(np.linalg.norm(i), 1.0), caption


def test_aligned_text_and_image_embeddings_agree(embedder):
    # without misalignment the two sides of each vocabulary pair must be close
    for caption, t, i in embedder.vocabulary_pairs():
        assert float(t @ i) > 0.9, caption


def test_matching_pairs_beat_mismatched_pairs(embedder):
    pairs = embedder.vocabulary_pairs()
    sims = np.array([[float(t @ i) for _, _, i in pairs] for _, t, _ in pairs])
    diag = np.diag(sims)
    off = sims[~np.eye(len(pairs), dtype=bool)]
    assert diag.min() > off.max()


def test_misalignment_is_orthogonal_and_breaks_alignment(misaligned_embedder):
    emb = misaligned_embedder
    r = emb.misalignment
    assert np.allclose(r @ r.T, np.eye(emb.d_embed), atol=1e-10)
    # rotation preserves norms but destroys raw text/image agreement
    worst = min(float(t @ i) for _, t, i in emb.vocabulary_pairs())
    assert worst < 0.9
    # canonical embeddings undo the rotation exactly
    for caption, t, _ in emb.vocabulary_pairs():
        assert np.allclose(r @ emb.canonical_text_embedding(caption), t)


def test_out_of_vocabulary_prompt_raises(embedder):
    with pytest.raises(EmbeddingError, match="out-of-vocabulary"):
        embedder.embed_text("seventeen flying toasters")


def test_prompt_parsing_finds_clauses_and_backgrounds(embedder):
    feats = embedder.parse_prompt("a red circle and a blue square on a gray background")
    assert feats.clauses == (("red", "circle"), ("blue", "square"))
    assert feats.backgrounds == ("gray",)


def test_black_content_distinct_from_blacked_out(embedder):
    # palette black is (0.1, 0.1, 0.1): above the support cutoff, so a black
    # shape embeds as content, not as the null-content direction
    v = embedder.canonical_image_embedding("black", "square")
    null = embedder.embed_image(np.zeros((16, 16, 3)))
    assert not np.allclose(v, null)
    assert float(v @ embedder.embed_text("a black square")) > 0.9


def test_null_text_vector_is_reserved(embedder):
    null = embedder.null_text_vector
    assert np.isclose(np.linalg.norm(null), 1.0)
    for caption, t, i in embedder.vocabulary_pairs():
        assert abs(float(null @ t)) < 0.5, caption
        assert not np.allclose(null, t)


def test_vocabulary_covers_all_color_shape_products(embedder):
    pairs = embedder.vocabulary_pairs()
    assert len(pairs) == len(DEFAULT_COLORS) * 3
    captions = {c for c, _, _ in pairs}
    assert "a gray triangle" in captions


def test_random_orthogonal_is_deterministic():
    a = random_orthogonal(16, 3)
    b = random_orthogonal(16, 3)
    assert np.array_equal(a, b)
    assert not np.allclose(a, random_orthogonal(16, 4))


def test_create_embedder_rejects_unknown_keys():
    e = create_embedder("toy", d_embed=20, misalignment_seed=1)
    assert e.d_embed == 20
    with pytest.raises(ValueError, match="unknown embedder config"):
        create_embedder("toy", bogus=1)
    with pytest.raises(ValueError, match="unknown embedder"):
        create_embedder("gigantic")


def test_d_embed_lower_bound():
    with pytest.raises(ValueError, match="too small"):
        ToyEmbedderConfig(d_embed=8)
