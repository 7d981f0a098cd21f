"""A tiny synthetic corpus for demos, tests and the mock end-to-end run."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import BBoxNorm, ImageRecord, ObjectEntry, dumps
from .imaging import save_image

# (file stem, size, [(category, xywh px, colour)], seed expressions by annotation index, captions)
_SCENES = [
    ("street", (200, 150),
     [("fire truck", (20, 60, 70, 50), (200, 30, 30)),
      ("fire truck", (110, 62, 68, 48), (210, 40, 40)),
      ("street light", (4, 10, 8, 70), (230, 230, 200))],
     {0: ["red truck on the left"], 2: ["tall street lamp"]},
     ["Two fire trucks are parked on a street next to a lamp post."]),
    ("kitchen", (180, 140),
     [("cup", (30, 80, 24, 24), (240, 240, 240)),
      ("bowl", (90, 90, 40, 20), (40, 90, 200)),
      ("cup", (140, 78, 22, 26), (250, 250, 250))],
     {1: ["blue bowl"]},
     []),
    ("park", (160, 160),
     [("person", (40, 30, 30, 90), (60, 60, 160)),
      ("dog", (90, 100, 40, 30), (140, 100, 60))],
     {0: ["man standing in the park"], 1: ["brown dog"]},
     ["A man walks his dog on the grass."]),
]


def _paint(size, objects, seed: int) -> np.ndarray:
    w, h = size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.stack([(xx * 255 // max(w - 1, 1)), (yy * 255 // max(h - 1, 1)),
                    np.full((h, w), 120)], axis=-1).astype(np.int16)
    img += rng.integers(-12, 13, size=img.shape, dtype=np.int16)
    for _, (x, y, bw, bh), colour in objects:
        img[y:y + bh, x:x + bw] = colour
    return np.clip(img, 0, 255).astype(np.uint8)


def write_demo_corpus(out_dir) -> dict[str, Path]:
    """Write images, a COCO-style detection file, refs JSONL and captions JSONL.

    Returns the paths keyed as in ``InputsConfig`` (annotations, image_root, refs, captions).
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    coco = {"images": [], "annotations": [], "categories": []}
    cat_ids: dict[str, int] = {}
    refs, caps = [], []
    ann_id = 100
    for img_id, (stem, size, objects, seeds, captions) in enumerate(_SCENES, start=1):
        save_image(_paint(size, objects, img_id), out / "images" / f"{stem}.png")
        coco["images"].append({"id": img_id, "file_name": f"{stem}.png", "width": size[0], "height": size[1]})
        for i, (cat, box, _) in enumerate(objects):
            if cat not in cat_ids:
                cat_ids[cat] = len(cat_ids) + 1
                coco["categories"].append({"id": cat_ids[cat], "name": cat})
            ann_id += 1
            coco["annotations"].append({"id": ann_id, "image_id": img_id, "category_id": cat_ids[cat],
                                        "bbox": list(box)})
            if i in seeds:
                refs.append({"image_id": img_id, "bbox_px": list(box), "sentences": seeds[i]})
        if captions:
            caps.append({"image_id": img_id, "captions": captions})
    paths = {"annotations": out / "instances.json", "image_root": out / "images",
             "refs": out / "refs.jsonl", "captions": out / "captions.jsonl"}
    paths["annotations"].write_text(json.dumps(coco, indent=1), encoding="utf-8")
    paths["refs"].write_text("".join(dumps(r) + "\n" for r in refs), encoding="utf-8")
    paths["captions"].write_text("".join(dumps(c) + "\n" for c in caps), encoding="utf-8")
    return paths


def fire_truck_record() -> ImageRecord:
    """The 1000x1000 street scene used by the golden prompt and parse examples (no pixels)."""
    trucks = [(0.05, 0.6, 0.21, 0.76), (0.19, 0.58, 0.37, 0.77), (0.33, 0.55, 0.61, 0.77),
              (0.56, 0.57, 0.74, 0.77), (0.72, 0.57, 1.0, 0.76)]
    objects = [ObjectEntry("1", "Street lights", BBoxNorm(0.0, 0.23, 0.03, 0.26))]
    objects += [ObjectEntry(str(i + 2), "Fire truck", BBoxNorm(*b)) for i, b in enumerate(trucks)]
    return ImageRecord("firetruck", "firetruck.png", 1000, 1000, tuple(objects))
