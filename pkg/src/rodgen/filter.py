"""Expression filtering by image-text matching on visually prompted images."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BBoxNorm, Expression, FilterScores, ImageRecord, ObjectEntry, TargetSet
from .gateway import ScoringClient, SegmentationClient, SegmentationUnavailable
from .imaging import (ImagingError, draw_bbox_overlay, draw_ellipse, ellipse_fill_mask,
                      gaussian_blur, mask_outline, rect_mask, default_stroke, to_gray, RED)

SHAPES = ("box", "circle", "contour")
TOOLS = ("crop", "gray", "line", "mask", "blur")


@dataclass(frozen=True)
class VisualPromptSpec:
    """One highlighting edit; ``compose_with`` is applied first, then this one on top."""

    shape: str
    tool: str
    compose_with: Optional["VisualPromptSpec"] = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.tool not in TOOLS:
            raise ValueError(f"unknown tool {self.tool!r}")
        if self.tool in ("crop", "gray") and self.shape != "box":
            raise ValueError(f"{self.tool} is only defined for box prompts")
        if self.compose_with is not None:
            if self.compose_with.compose_with is not None:
                raise ValueError("visual prompts nest at most one level deep")
            if self.compose_with.tool == "crop":
                raise ValueError("a crop cannot be composed under another prompt")


# red ellipse drawn over a blur-reversed contour region
DEFAULT_SPEC = VisualPromptSpec("circle", "line", compose_with=VisualPromptSpec("contour", "blur"))


def region_mask(shape: tuple[int, int], bbox: BBoxNorm, spec_shape: str,
                mask: Optional[np.ndarray] = None) -> np.ndarray:
    if spec_shape == "circle":
        return ellipse_fill_mask(shape, bbox)
    if spec_shape == "contour" and mask is not None:
        return np.asarray(mask, dtype=bool)
    return rect_mask(shape, bbox)


def _apply(image: np.ndarray, bbox: BBoxNorm, mask, spec: VisualPromptSpec,
           stroke_px: int, sigma: Optional[float]) -> np.ndarray:
    h, w = image.shape[:2]
    if spec.tool == "crop":
        c0, r0, c1, r1 = bbox.pixel_rect(w, h)
        return np.array(image[r0:r1, c0:c1], copy=True)
    if spec.tool == "line":
        if spec.shape == "box":
            return draw_bbox_overlay(image, bbox, stroke_px)
        if spec.shape == "circle":
            return draw_ellipse(image, bbox, stroke_px)
        out = np.array(image, copy=True)
        out[mask_outline(region_mask((h, w), bbox, "contour", mask), stroke_px)] = RED
        return out
    region = region_mask((h, w), bbox, spec.shape, mask)
    if spec.tool == "blur":
        out = gaussian_blur(image, sigma)
    elif spec.tool == "gray":
        out = to_gray(image)
    else:  # mask: dim everything outside the target
        out = (image // 2).astype(np.uint8)
    out[region] = image[region]
    return out


def render_visual_prompt(image: np.ndarray, bbox: BBoxNorm, mask: Optional[np.ndarray] = None,
                         spec: VisualPromptSpec = DEFAULT_SPEC, stroke_px: Optional[int] = None,
                         sigma: Optional[float] = None) -> np.ndarray:
    """Highlight the target region for an image-text scorer.

    Contour prompts use *mask* when given and fall back to the bbox rectangle.
    """
    h, w = image.shape[:2]
    if not bbox.is_valid():
        raise ImagingError(f"invalid bbox {bbox}")
    c0, r0, c1, r1 = bbox.pixel_rect(w, h)
    if c1 - c0 < 1 or r1 - r0 < 1:
        raise ImagingError(f"bbox {bbox} covers no pixels at {w}x{h}")
    stroke_px = default_stroke(w, h) if stroke_px is None else stroke_px
    if spec.compose_with is not None:
        image = _apply(image, bbox, mask, spec.compose_with, stroke_px, sigma)
    return _apply(image, bbox, mask, spec, stroke_px, sigma)


def object_mask(record: ImageRecord, obj: ObjectEntry, image: np.ndarray,
                segmenter: Optional[SegmentationClient] = None) -> Optional[np.ndarray]:
    """Stored mask, else a segmentation of the bbox, else None (callers fall back to the box)."""
    if obj.mask is not None:
        return obj.mask.decode()
    if segmenter is None:
        return None
    try:
        return segmenter.segment(image, obj.bbox)
    except SegmentationUnavailable:
        return None


def score_expression(image: np.ndarray, bbox: BBoxNorm, mask: Optional[np.ndarray], text: str,
                     scorer: ScoringClient, alpha1: float = 0.5,
                     spec: VisualPromptSpec = DEFAULT_SPEC) -> FilterScores:
    if not text.strip():
        raise ValueError("empty expression")
    prompted = render_visual_prompt(image, bbox, mask, spec)
    s_g = scorer.score_image_text(image, [text])[0]
    s_l = scorer.score_image_text(prompted, [text])[0]
    return FilterScores.compute(s_l, s_g, alpha1)


@dataclass
class FilterResult:
    kept: list[Expression] = field(default_factory=list)
    dropped: list[Expression] = field(default_factory=list)
    # every seed expression, scored
    seeds: list[Expression] = field(default_factory=list)
    # object_id -> (reference text, its scores)
    references: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)


def filter_expressions(candidates: Sequence[Expression], record: ImageRecord, image: np.ndarray,
                       scorer: ScoringClient, alpha1: float = 0.5,
                       segmenter: Optional[SegmentationClient] = None,
                       spec: VisualPromptSpec = DEFAULT_SPEC,
                       masks: Optional[dict] = None) -> FilterResult:
    """Keep a candidate iff its final score reaches its object's reference score.

    The reference is the best-scoring seed expression of the object, or its
    category name when it has no seeds. Ties are kept.
    """
    by_obj: dict[str, list[Expression]] = {}
    for e in candidates:
        if e.target.is_multi:
            raise ValueError(f"filter takes single-object candidates, got {e.target}")
        by_obj.setdefault(e.target.object_ids[0], []).append(e)
    for oid in by_obj:
        record.object(oid)

    result = FilterResult()
    objects = [o for o in record.objects if o.object_id in by_obj or o.seed_expressions]
    all_texts = list(dict.fromkeys(
        t for o in objects for t in (list(o.seed_expressions or (o.category,))
                                     + [e.text for e in by_obj.get(o.object_id, [])])))
    if not all_texts:
        return result
    plain = dict(zip(all_texts, scorer.score_image_text(image, all_texts)))

    for obj in objects:
        refs = list(obj.seed_expressions) or [obj.category]
        cands = by_obj.get(obj.object_id, [])
        texts = list(dict.fromkeys(refs + [e.text for e in cands]))
        mask = (masks or {}).get(obj.object_id)
        if mask is None:
            mask = object_mask(record, obj, image, segmenter)
        prompted = render_visual_prompt(image, obj.bbox, mask, spec)
        local = dict(zip(texts, scorer.score_image_text(prompted, texts)))
        scores = {t: FilterScores.compute(local[t], plain[t], alpha1) for t in texts}
        ref_text = max(refs, key=lambda t: scores[t].s_f)
        ref = scores[ref_text]
        result.references[obj.object_id] = (ref_text, ref)
        result.seeds.extend(Expression(t, TargetSet.of(obj.object_id), "seed", scores[t])
                            for t in obj.seed_expressions)
        for e in cands:
            s = scores[e.text]
            keep = s.s_f >= ref.s_f
            (result.kept if keep else result.dropped).append(e.with_scores(s))
            result.rows.append({"image_id": record.image_id, "object_id": obj.object_id,
                                "text": e.text, "source": e.source, **s.to_dict(),
                                "reference": ref.s_f, "kept": keep})
    return result


# --- retrieval-ratio harness -------------------------------------------------

@dataclass(frozen=True)
class RetrievalBatch:
    image: np.ndarray
    bbox: BBoxNorm
    texts: tuple[str, ...]
    correct: frozenset
    mask: Optional[np.ndarray] = None


def retrieval_ratio(batches: Sequence[RetrievalBatch], scorer: ScoringClient,
                    spec: VisualPromptSpec = DEFAULT_SPEC, k: int = 2) -> float:
    """Mean share (in percent) of the k correct texts that land in the scorer's top k."""
    if not batches:
        raise ValueError("no batches")
    total = 0.0
    for b in batches:
        n = len(b.texts)
        if k > n:
            raise ValueError(f"k={k} exceeds batch size {n}")
        if len(b.correct) != k:
            raise ValueError(f"batch has {len(b.correct)} correct texts, expected {k}")
        prompted = render_visual_prompt(b.image, b.bbox, b.mask, spec)
        scores = np.asarray(scorer.score_image_text(prompted, list(b.texts)))
        top = np.argsort(-scores, kind="stable")[:k]
        total += len(set(top.tolist()) & set(b.correct)) / k
    return 100.0 * total / len(batches)


@dataclass(frozen=True)
class RetrievalItem:
    """One annotated target: its image, box, and the expressions known to describe it."""

    image_key: str
    image: np.ndarray
    bbox: BBoxNorm
    expressions: tuple[str, ...]
    mask: Optional[np.ndarray] = None


def build_retrieval_batches(items: Sequence[RetrievalItem], n: int, k: int, n_batches: int,
                            mode: str = "easy", rng: Optional[random.Random] = None) -> list[RetrievalBatch]:
    """Sample batches of k correct and n-k negative texts.

    Easy negatives come from other images; hard negatives come first from other
    targets of the same image, topped up from other images.
    """
    if mode not in ("easy", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    if k > n:
        raise ValueError(f"k={k} exceeds batch size {n}")
    rng = rng or random.Random(0)
    eligible = [i for i, it in enumerate(items) if len(it.expressions) >= k]
    batches = []
    for _ in range(n_batches):
        idx = rng.choice(eligible)
        item = items[idx]
        positives = rng.sample(list(item.expressions), k)
        pos_fold = {p.casefold() for p in positives}
        same = [t for j, it in enumerate(items) if j != idx and it.image_key == item.image_key
                for t in it.expressions]
        other = [t for it in items if it.image_key != item.image_key for t in it.expressions]
        pool_first = same if mode == "hard" else []
        negatives: list[str] = []
        for pool in (pool_first, other):
            pool = [t for t in dict.fromkeys(pool) if t.casefold() not in pos_fold and t not in negatives]
            rng.shuffle(pool)
            negatives.extend(pool[: n - k - len(negatives)])
        if len(negatives) < n - k:
            raise ValueError("not enough negative expressions for the requested batch size")
        texts = positives + negatives
        order = list(range(n))
        rng.shuffle(order)
        shuffled = tuple(texts[i] for i in order)
        correct = frozenset(pos for pos, i in enumerate(order) if i < k)
        batches.append(RetrievalBatch(item.image, item.bbox, shuffled, correct, item.mask))
    return batches
