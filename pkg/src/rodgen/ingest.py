"""Load COCO-style detections, RefCOCO-style expressions and caption files into ImageRecords."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .core import BBoxNorm, ImageRecord, ObjectEntry, normalize_text, read_jsonl

logger = logging.getLogger(__name__)

# clamping may shave this much of a box's area before it is rejected
MAX_CLAMP_LOSS = 0.05
SEED_MATCH_IOU = 0.95


class IngestError(ValueError):
    pass


def _load_json(path) -> dict:
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise IngestError(f"{path}: malformed JSON at byte offset {offset}: {exc.msg}") from exc


def normalize_xywh(x: float, y: float, w: float, h: float,
                   width_px: int, height_px: int) -> Optional[BBoxNorm]:
    """Pixel xywh to a clamped normalized box, or None when clamping loses >5% of the area."""
    if w <= 0 or h <= 0:
        return None
    raw = BBoxNorm.from_xywh_px(x, y, w, h, width_px, height_px)
    clamped = BBoxNorm(min(max(raw.x1, 0.0), 1.0), min(max(raw.y1, 0.0), 1.0),
                       min(max(raw.x2, 0.0), 1.0), min(max(raw.y2, 0.0), 1.0))
    if clamped.area() < (1.0 - MAX_CLAMP_LOSS) * raw.area() or not clamped.is_valid():
        return None
    return clamped


def load_detection_annotations(path, image_root=None, report: Optional[Counter] = None) -> list[ImageRecord]:
    """Read a COCO-style detection file; images without usable annotations are dropped.

    *report*, when given, is a Counter that receives skip counts by reason.
    """
    report = report if report is not None else Counter()
    data = _load_json(path)
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise IngestError(f"{path}: missing top-level key {key!r}")
    root = Path(image_root) if image_root else Path(path).parent
    categories = {c["id"]: normalize_text(c["name"]) for c in data["categories"]}

    by_image: dict = {}
    for ann in data["annotations"]:
        by_image.setdefault(ann["image_id"], []).append(ann)

    records = []
    for img in data["images"]:
        anns = by_image.get(img["id"], [])
        width, height = int(img["width"]), int(img["height"])
        objects = []
        for ann in anns:
            cat = categories.get(ann["category_id"])
            if not cat:
                report["unknown_category"] += 1
                continue
            box = normalize_xywh(*ann["bbox"], width, height)
            if box is None:
                report["bbox_outside_image"] += 1
                logger.warning("image %s annotation %s: bbox %s rejected",
                               img["id"], ann.get("id"), ann["bbox"])
                continue
            objects.append(ObjectEntry(object_id=str(ann["id"]), category=cat, bbox=box))
        if not objects:
            report["image_without_annotations"] += 1
            continue
        file_name = img.get("file_name", f"{img['id']}.png")
        uri = file_name if "://" in file_name else str(root / file_name)
        records.append(ImageRecord(str(img["id"]), uri, width, height, tuple(objects)))
    return records


def _dedup(existing: tuple[str, ...], new) -> tuple[str, ...]:
    out = list(existing)
    for text in new:
        text = normalize_text(text)
        if text and text not in out:
            out.append(text)
    return tuple(out)


def attach_seed_expressions(records: list[ImageRecord], refs_path,
                            report: Optional[Counter] = None) -> list[ImageRecord]:
    """Attach referring expressions from a refs JSONL to the matching objects.

    Objects are matched by object_id when the ref carries one, else by the
    best bbox IoU of at least 0.95 against ``bbox_px`` (pixel xywh).
    """
    report = report if report is not None else Counter()
    index = {r.image_id: i for i, r in enumerate(records)}
    seeds: dict[tuple[str, str], list[str]] = {}
    for ref in read_jsonl(refs_path):
        image_id = str(ref["image_id"])
        if image_id not in index:
            report["ref_unknown_image"] += 1
            continue
        rec = records[index[image_id]]
        obj_id = _match_ref(rec, ref)
        if obj_id is None:
            report["ref_unmatched_object"] += 1
            continue
        seeds.setdefault((image_id, obj_id), []).extend(ref.get("sentences", []))
        report["ref_attached"] += 1

    out = []
    for rec in records:
        objects = tuple(
            replace(o, seed_expressions=_dedup(o.seed_expressions, seeds[(rec.image_id, o.object_id)]))
            if (rec.image_id, o.object_id) in seeds else o
            for o in rec.objects
        )
        out.append(replace(rec, objects=objects))
    return out


def _match_ref(rec: ImageRecord, ref: dict) -> Optional[str]:
    if ref.get("object_id") is not None:
        oid = str(ref["object_id"])
        return oid if oid in rec.object_ids() else None
    if ref.get("bbox_px") is None:
        return None
    box = BBoxNorm.from_xywh_px(*ref["bbox_px"], rec.width_px, rec.height_px)
    best, best_iou = None, SEED_MATCH_IOU
    for obj in rec.objects:
        iou = obj.bbox.iou(box)
        if iou >= best_iou:
            best, best_iou = obj.object_id, iou
    return best


def attach_captions(records: list[ImageRecord], captions_path=None,
                    report: Optional[Counter] = None) -> list[ImageRecord]:
    report = report if report is not None else Counter()
    if not captions_path:
        return list(records)
    caps: dict[str, list[str]] = {}
    known = {r.image_id for r in records}
    for row in read_jsonl(captions_path):
        image_id = str(row["image_id"])
        if image_id not in known:
            report["caption_unknown_image"] += 1
            continue
        caps.setdefault(image_id, []).extend(row.get("captions", []))
    return [replace(r, captions=_dedup(r.captions, caps[r.image_id])) if r.image_id in caps else r
            for r in records]
