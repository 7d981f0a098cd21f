import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rodgen.core import BBoxNorm, Expression, ImageRecord, ObjectEntry, RLEMask, TargetSet
from rodgen.filter import (RetrievalBatch, RetrievalItem, VisualPromptSpec,
                           build_retrieval_batches, filter_expressions, render_visual_prompt,
                           retrieval_ratio, score_expression)
from rodgen.gateway import MockSegmenter, OracleScorer, RandomScorer, ScoringClient, ServiceProfile
from rodgen.imaging import (ImagingError, blur_radius, blur_sigma, ellipse_params, gaussian_blur,
                            gaussian_kernel)

from oracles import scipy_blur


class TableScorer(ScoringClient):
    """Score depends on the text only (same on plain and prompted images)."""

    def __init__(self, table):
        super().__init__(ServiceProfile(name="score", model="t"))
        self.table = table

    def _score(self, image, texts):
        return [self.table[t] for t in texts]


class MonotoneWrap(ScoringClient):
    def __init__(self, inner, fn):
        super().__init__(ServiceProfile(name="score", model="w"))
        self.inner, self.fn = inner, fn

    def _score(self, image, texts):
        return [self.fn(s) for s in self.inner._score(image, texts)]


def img(seed=0, h=100, w=100):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)


def test_kernel_normalized_and_symmetric():
    k = gaussian_kernel(2.0, 6)
    assert math.isclose(k.sum(), 1.0) and np.allclose(k, k[::-1])
    assert blur_radius(blur_sigma(100, 50)) == 6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(5, 80), st.integers(5, 80))
def test_blur_matches_scipy(seed, h, w):
    im = img(seed, h, w)
    s = blur_sigma(w, h)
    assert np.array_equal(gaussian_blur(im), scipy_blur(im, s, blur_radius(s)))


def test_ellipse_inscribed_geometry():
    assert ellipse_params((100, 100), BBoxNorm(0.25, 0.25, 0.75, 0.75)) == (50.0, 50.0, 25.0, 25.0)


def test_default_prompt_center_and_corner():
    im = img(1)
    out = render_visual_prompt(im, BBoxNorm(0.25, 0.25, 0.75, 0.75))
    s = blur_sigma(100, 100)
    assert (out[50, 50] == im[50, 50]).all()
    assert (out[1, 1] == scipy_blur(im, s, blur_radius(s))[1, 1]).all()
    assert not (out == im).all()


def test_crop_dimensions():
    out = render_visual_prompt(img(2, 80, 120), BBoxNorm(0.1, 0.25, 0.6, 0.75), spec=VisualPromptSpec("box", "crop"))
    assert out.shape == (40, 60, 3)


@pytest.mark.parametrize("spec", [VisualPromptSpec("box", "gray"), VisualPromptSpec("box", "mask"),
                                  VisualPromptSpec("box", "line"), VisualPromptSpec("circle", "blur"),
                                  VisualPromptSpec("contour", "line"), VisualPromptSpec("contour", "mask")])
def test_other_specs_keep_target_pixels(spec):
    im = img(3, 60, 60)
    b = BBoxNorm(0.3, 0.3, 0.7, 0.7)
    out = render_visual_prompt(im, b, spec=spec)
    assert out.shape == im.shape
    assert (out[30, 30] == im[30, 30]).all()


def test_spec_invariants():
    with pytest.raises(ValueError):
        VisualPromptSpec("circle", "crop")
    with pytest.raises(ValueError):
        VisualPromptSpec("contour", "gray")
    with pytest.raises(ValueError):
        VisualPromptSpec("box", "line", VisualPromptSpec("box", "blur", VisualPromptSpec("box", "mask")))


def test_contour_uses_mask():
    im = img(4, 50, 50)
    mask = np.zeros((50, 50), bool)
    mask[10:20, 10:20] = True
    out = render_visual_prompt(im, BBoxNorm(0.2, 0.2, 0.6, 0.6), mask, VisualPromptSpec("contour", "blur"))
    assert (out[15, 15] == im[15, 15]).all()
    blurred = gaussian_blur(im)
    assert (out[25, 25] == blurred[25, 25]).all()  # inside bbox but outside mask


def test_degenerate_bbox_faults():
    with pytest.raises(ImagingError):
        render_visual_prompt(img(0, 10, 10), BBoxNorm(0.5, 0.5, 0.52, 0.52))


def test_score_expression_algebra():
    s = score_expression(img(), BBoxNorm(0.2, 0.2, 0.8, 0.8), None, "dog", TableScorer({"dog": 0.8}), 0.5)
    assert s.s_l == 0.8 and s.s_g == 0.8 and math.isclose(s.s_f, 0.4) and s.s_e == 0.0
    with pytest.raises(ValueError):
        score_expression(img(), BBoxNorm(0.2, 0.2, 0.8, 0.8), None, " ", TableScorer({}), 0.5)


def _two_object_record(seeds=("the red car",)):
    return ImageRecord("im", "im.png", 100, 100, (
        ObjectEntry("a", "car", BBoxNorm(0.05, 0.05, 0.45, 0.45), tuple(seeds)),
        ObjectEntry("b", "dog", BBoxNorm(0.5, 0.5, 0.95, 0.95)),
    ))


def test_oracle_dynamic_threshold():
    rec = _two_object_record()
    im = img(5)
    oracle = OracleScorer()
    oracle.register(render_visual_prompt(im, rec.object("a").bbox), ["the red car", "car on the left"])
    oracle.register(render_visual_prompt(im, rec.object("b").bbox), ["dog", "brown dog"])
    cands = [Expression(t, TargetSet.of(o), "global") for o, t in
             [("a", "car on the left"), ("a", "flying saucer"), ("b", "brown dog"), ("b", "purple unicorn")]]
    res = filter_expressions(cands, rec, im, oracle, 0.5)
    assert sorted(e.text for e in res.kept) == ["brown dog", "car on the left"]
    assert sorted(e.text for e in res.dropped) == ["flying saucer", "purple unicorn"]
    assert res.references["a"][0] == "the red car" and res.references["b"][0] == "dog"
    assert all(e.scores is not None for e in res.kept + res.dropped)
    assert [e.text for e in res.seeds] == ["the red car"]
    assert len(res.rows) == 4 and {r["kept"] for r in res.rows} == {True, False}


def test_equality_is_kept_and_max_seed_reference():
    rec = _two_object_record(seeds=("weak seed", "strong seed"))
    table = {"weak seed": 0.2, "strong seed": 0.6, "tie": 0.6, "below": 0.59999, "dog": 0.1}
    cands = [Expression(t, TargetSet.of("a"), "local") for t in ("tie", "below")]
    res = filter_expressions(cands, rec, img(), TableScorer(table), 0.5)
    assert [e.text for e in res.kept] == ["tie"] and [e.text for e in res.dropped] == ["below"]
    assert res.references["a"][0] == "strong seed"


def test_filter_partition_and_multi_target_rejected():
    rec = _two_object_record()
    rng = random.Random(0)
    texts = [f"t{i}" for i in range(30)]
    table = {t: rng.random() for t in texts + ["the red car", "dog"]}
    cands = [Expression(t, TargetSet.of(rng.choice("ab")), "global") for t in texts]
    res = filter_expressions(cands, rec, img(), TableScorer(table), 0.5)
    assert sorted(e.text for e in res.kept + res.dropped) == sorted(texts)
    assert not {e.text for e in res.kept} & {e.text for e in res.dropped}
    with pytest.raises(ValueError):
        filter_expressions([Expression("x", TargetSet.of("a", "b"), "spliced")], rec, img(), TableScorer({}))


def test_stored_mask_and_segmenter_fallback():
    mask = np.zeros((100, 100), bool)
    mask[10:40, 10:40] = True
    rec = ImageRecord("im", "im.png", 100, 100, (
        ObjectEntry("a", "car", BBoxNorm(0.05, 0.05, 0.45, 0.45), mask=RLEMask.encode(mask)),))
    cands = [Expression("x", TargetSet.of("a"), "global")]
    scorer = TableScorer({"x": 0.5, "car": 0.5})
    down = MockSegmenter(available=False)
    assert len(filter_expressions(cands, rec, img(), scorer, 0.5, down).kept) == 1


# --- retrieval harness --------------------------------------------------------

def _items(n_images=12, per_image=3, seed=0):
    rng = random.Random(seed)
    items = []
    for i in range(n_images):
        im = img(100 + i, 32, 32)
        for j in range(per_image):
            x = rng.uniform(0, 0.5)
            y = rng.uniform(0, 0.5)
            items.append(RetrievalItem(f"img{i}", im, BBoxNorm(x, y, x + 0.4, y + 0.4),
                                       tuple(f"img{i} obj{j} phrase{k}" for k in range(3))))
    return items


def test_retrieval_oracle_is_perfect():
    items = _items()
    oracle = OracleScorer()
    for it in items:
        oracle.register(render_visual_prompt(it.image, it.bbox, it.mask), it.expressions)
    for mode in ("easy", "hard"):
        batches = build_retrieval_batches(items, 20, 2, 50, mode, random.Random(1))
        assert retrieval_ratio(batches, oracle, k=2) == 100.0


def test_hard_negatives_prefer_same_image():
    items = _items()
    (b,) = build_retrieval_batches(items, 8, 2, 1, "hard", random.Random(3))
    key = next(t for i, t in enumerate(b.texts) if i in b.correct).split()[0]
    negatives = [t for i, t in enumerate(b.texts) if i not in b.correct]
    assert sum(t.startswith(key + " ") for t in negatives) == 6  # 2 other targets x 3 phrases
    (e,) = build_retrieval_batches(items, 8, 2, 1, "easy", random.Random(3))
    key = next(t for i, t in enumerate(e.texts) if i in e.correct).split()[0]
    assert not any(t.startswith(key + " ") for i, t in enumerate(e.texts) if i not in e.correct)


def test_retrieval_k_greater_than_n_faults():
    b = RetrievalBatch(img(0, 16, 16), BBoxNorm(0.1, 0.1, 0.9, 0.9), ("a", "b"), frozenset({0, 1}))
    with pytest.raises(ValueError):
        retrieval_ratio([b], RandomScorer(0), k=3)
    with pytest.raises(ValueError):
        build_retrieval_batches(_items(), 2, 3, 1)


def test_ranking_invariant_under_monotone_transform():
    items = _items()
    batches = build_retrieval_batches(items, 10, 2, 100, "easy", random.Random(4))
    from rodgen.gateway import HashScorer
    base = HashScorer(seed=9)
    a = retrieval_ratio(batches, base, k=2)
    b = retrieval_ratio(batches, MonotoneWrap(base, lambda s: math.exp(3 * s) - 7), k=2)
    assert a == b
