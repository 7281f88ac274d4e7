from __future__ import annotations

import numpy as np
import pytest

from scenediff.data import gen_shapes
from scenediff.metrics import (
    ColorRegionSegmenter,
    EvalConfig,
    EvalReport,
    MetricError,
    frechet_distance,
    global_distance,
    iou,
    local_distance,
    local_iou,
)
from scenediff.scene import RawSpatioTextualMatrix


def _scene_rst(sample):
    return RawSpatioTextualMatrix(
        labels=sample.labels(),
        prompts=tuple(f"a {name}" for name in sample.label_names()),
    )


# -- distances ------------------------------------------------------------------


def test_ground_truth_scores_beat_disjoint_lies(misaligned_embedder):
    # on real corpus frames, the true caption should read closer than a
    # caption built entirely from colors absent in the scene
    rng = np.random.default_rng(0)
    all_colors = ("red", "green", "blue", "yellow", "white", "black", "gray")
    wins_global = wins_local = total = 0
    for _ in range(20):
        s = gen_shapes(rng)
        rst = _scene_rst(s)
        used = {c for _, c, _ in s.segments} | {s.background}
        free = [c for c in all_colors if c not in used]
        lie_caption = f"a {free[0]} circle on a {free[1]} background"
        truth = global_distance(s.image, s.caption, misaligned_embedder)
        lie = global_distance(s.image, lie_caption, misaligned_embedder)
        wins_global += truth < lie
        wrong_prompts = tuple(f"a {free[i % len(free)]} circle" for i in range(len(rst.prompts)))
        wrong = RawSpatioTextualMatrix(rst.labels, wrong_prompts)
        wins_local += local_distance(s.image, rst, misaligned_embedder) < local_distance(
            s.image, wrong, misaligned_embedder
        )
        total += 1
    assert wins_global >= 18
    assert wins_local == total


def test_distances_use_corrected_text_space(misaligned_embedder):
    # scores must not pay for the embedder's text/image rotation: a perfect
    # canonical patch lands near zero distance even under misalignment
    emb = misaligned_embedder
    patch = emb.canonical_patch("red", "circle")
    labels = np.ones(patch.shape[:2], dtype=np.int32)
    rst = RawSpatioTextualMatrix(labels, ("a red circle",))
    d = local_distance(patch, rst, emb)
    assert d < 0.1
    # the raw (rotated) text embedding would sit much farther away
    v = emb.embed_image(patch)
    raw = 1.0 - float(v @ emb.embed_text("a red circle"))
    assert raw > d + 0.1


def test_local_distance_validates_rst(embedder):
    img = np.ones((8, 8, 3)) * 0.5
    with pytest.raises(MetricError, match="no segments"):
        local_distance(img, RawSpatioTextualMatrix(np.zeros((8, 8), int), ()), embedder)
    labels = np.zeros((8, 8), dtype=np.int32)
    rst = RawSpatioTextualMatrix(labels, ("a red circle",))
    with pytest.raises(MetricError, match="no pixels"):
        local_distance(img, rst, embedder)


# -- iou --------------------------------------------------------------------------


def test_iou_hand_cases():
    a = np.zeros((4, 4), bool)
    b = np.zeros((4, 4), bool)
    a[0:2, 0:2] = True  # 4 px
    b[1:3, 0:2] = True  # 4 px, overlap 2
    assert iou(a, b) == pytest.approx(2 / 6)
    assert iou(a, a) == 1.0
    assert iou(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 1.0
    assert iou(a, np.zeros((4, 4), bool)) == 0.0
    with pytest.raises(MetricError, match="differ"):
        iou(a, np.zeros((5, 5), bool))


def test_segmenter_recovers_corpus_segments():
    rng = np.random.default_rng(4)
    seg = ColorRegionSegmenter()
    for _ in range(10):
        s = gen_shapes(rng)
        rst = _scene_rst(s)
        score = local_iou(s.image, rst, seg)
        assert score > 0.95  # clean synthetic frames segment almost perfectly


def test_segmenter_drops_specks_and_validates():
    seg = ColorRegionSegmenter(min_region=4)
    img = np.zeros((8, 8, 3))
    img[:] = (0.5, 0.5, 0.5)
    img[0, 0] = (1.0, 0.0, 0.0)  # lone red pixel
    img[4:6, 4:6] = (1.0, 0.0, 0.0)  # 4-px red block
    mask = seg.predict(img, "a red circle")
    assert not mask[0, 0]
    assert mask[4:6, 4:6].all()
    assert seg.color_term_for("a big red circle") == "red"
    with pytest.raises(MetricError, match="no palette color"):
        seg.color_term_for("a large hexagon")
    with pytest.raises(MetricError, match="H x W x 3"):
        seg.predict(np.zeros((8, 8)), "a red circle")


# -- frechet ------------------------------------------------------------------------


def test_frechet_identical_sets_is_zero(rng):
    x = rng.standard_normal((40, 8))
    assert abs(frechet_distance(x, x)) <= 1e-8


def test_frechet_matches_univariate_closed_form():
    # exact-moment 1-D sets: {+-sqrt(1/2)} has mean 0, sample variance 1;
    # shifting by 1 gives squared distance (mu-mu')^2 = 1 with equal variances
    a = np.array([[np.sqrt(0.5)], [-np.sqrt(0.5)]] * 20)
    b = a + 1.0
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-3)
    # scaling changes the variance term: (sigma_a - sigma_b)^2 with zero mean
    # gap, where sigma^2 is the unbiased sample variance n/(n-1) * 1/2
    c = 2.0 * a
    var_a = 0.5 * len(a) / (len(a) - 1)
    assert frechet_distance(a, c) == pytest.approx(var_a, abs=1e-6)


def test_frechet_rotation_invariance(rng):
    from scenediff.embed import random_orthogonal

    x = rng.standard_normal((60, 8))
    y = rng.standard_normal((60, 8)) + 0.3
    r = random_orthogonal(8, 5)
    d1 = frechet_distance(x, y)
    d2 = frechet_distance(x @ r.T, y @ r.T)
    assert d1 == pytest.approx(d2, abs=1e-6)
    # and symmetric in its arguments
    assert frechet_distance(y, x) == pytest.approx(d1, rel=1e-9)


def test_frechet_sample_size_guard(rng):
    x = rng.standard_normal((8, 8))
    with pytest.raises(MetricError, match="d\\+1"):
        frechet_distance(x, x)
    with pytest.raises(MetricError, match="matching d"):
        frechet_distance(rng.standard_normal((20, 8)), rng.standard_normal((20, 4)))


# -- report ---------------------------------------------------------------------------


def _report_doc():
    records = [
        {"index": 0, "provenance": "a", "ok": True, "global_distance": 0.2,
         "local_distance": 0.3, "local_iou": 0.5},
        {"index": 1, "provenance": "b", "ok": True, "global_distance": 0.4,
         "local_distance": 0.5, "local_iou": 0.7},
    ]
    aggregates = {"global_distance": 0.3, "local_distance": 0.4, "local_iou": 0.6}
    return EvalReport(
        n=2, records=records, aggregates=aggregates, frechet=1.5,
        failures=0, config_fingerprint="feed", config={"seed": 0},
    )


def test_report_round_trip_and_validation(tmp_path):
    rep = _report_doc()
    rep.validate()
    text = rep.to_json()
    again = EvalReport.from_json(text)
    assert again.aggregates == rep.aggregates
    assert again.records == rep.records
    assert again.frechet == rep.frechet
    path = tmp_path / "report.json"
    rep.save(path)
    assert EvalReport.from_json(path.read_text()).n == 2


def test_report_rejects_inconsistent_aggregates():
    rep = _report_doc()
    rep.aggregates = {"global_distance": 0.9, "local_distance": 0.4, "local_iou": 0.6}
    with pytest.raises(MetricError, match="aggregate"):
        rep.validate()
    rep = _report_doc()
    rep.n = 5
    with pytest.raises(MetricError, match="record count"):
        rep.validate()
    rep = _report_doc()
    rep.records[1]["local_iou"] = 1.7
    with pytest.raises(MetricError):
        rep.validate()
