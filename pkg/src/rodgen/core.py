"""Domain types shared by every stage, their JSON forms, and record validation.

All types are frozen dataclasses holding tuples, so instances can be passed
between worker threads freely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional

import numpy as np

SOURCES = ("seed", "global", "local", "spliced", "summarized", "rewritten", "transferred")
GROUPS = ("G1", "G2", "G3", "G4", "G5", "G6")
SINGLE_GROUPS = GROUPS[:4]
MULTI_GROUPS = GROUPS[4:]

# mask bounding rect may exceed the bbox by this fraction of the image size
MASK_SLACK = 0.02


def normalize_text(text: str) -> str:
    """Trim and collapse internal whitespace; case is preserved."""
    return " ".join(text.split())


def fold_text(text: str) -> str:
    return normalize_text(text).casefold()


@dataclass(frozen=True)
class BBoxNorm:
    x1: float
    y1: float
    x2: float
    y2: float

    @classmethod
    def from_xywh_px(cls, x: float, y: float, w: float, h: float,
                     width_px: int, height_px: int) -> "BBoxNorm":
        return cls(x / width_px, y / height_px, (x + w) / width_px, (y + h) / height_px)

    def violations(self) -> list[str]:
        out = []
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                out.append(f"{name}={v} outside [0, 1]")
        if not self.x1 < self.x2:
            out.append(f"degenerate box: x1={self.x1} not < x2={self.x2}")
        if not self.y1 < self.y2:
            out.append(f"degenerate box: y1={self.y1} not < y2={self.y2}")
        return out

    def is_valid(self) -> bool:
        return not self.violations()

    def to_pixels(self, width_px: int, height_px: int) -> tuple[float, float, float, float]:
        return (self.x1 * width_px, self.y1 * height_px, self.x2 * width_px, self.y2 * height_px)

    def pixel_rect(self, width_px: int, height_px: int) -> tuple[int, int, int, int]:
        """Integer half-open rectangle (c0, r0, c1, r1) covered by the box."""
        x1, y1, x2, y2 = self.to_pixels(width_px, height_px)
        c0, r0 = int(round(x1)), int(round(y1))
        c1, r1 = int(round(x2)), int(round(y2))
        return (max(0, c0), max(0, r0), min(width_px, c1), min(height_px, r1))

    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    def iou(self, other: "BBoxNorm") -> float:
        ix = max(0.0, min(self.x2, other.x2) - max(self.x1, other.x1))
        iy = max(0.0, min(self.y2, other.y2) - max(self.y1, other.y1))
        inter = ix * iy
        union = self.area() + other.area() - inter
        return inter / union if union > 0 else 0.0

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def to_dict(self) -> dict:
        return {"x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2}

    @classmethod
    def from_dict(cls, d: dict) -> "BBoxNorm":
        return cls(d["x1"], d["y1"], d["x2"], d["y2"])


@dataclass(frozen=True)
class RLEMask:
    """Row-major run-length encoded binary mask; runs alternate 0,1,0,... starting with zeros."""

    height: int
    width: int
    counts: tuple[int, ...]

    @classmethod
    def encode(cls, mask: np.ndarray) -> "RLEMask":
        flat = np.asarray(mask, dtype=bool).ravel()
        h, w = mask.shape
        if flat.size == 0:
            return cls(h, w, ())
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return cls(h, w, tuple(int(r) for r in runs))

    def decode(self) -> np.ndarray:
        flat = np.zeros(self.height * self.width, dtype=bool)
        pos, val = 0, False
        for run in self.counts:
            if val:
                flat[pos:pos + run] = True
            pos += run
            val = not val
        return flat.reshape(self.height, self.width)

    def to_dict(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "RLEMask":
        h, w = d["size"]
        return cls(int(h), int(w), tuple(int(c) for c in d["counts"]))


@dataclass(frozen=True)
class ObjectEntry:
    object_id: str
    category: str
    bbox: BBoxNorm
    seed_expressions: tuple[str, ...] = ()
    mask: Optional[RLEMask] = None

    @property
    def content(self) -> str:
        """Text standing for the object in prompts: its seed expressions, else its category."""
        if self.seed_expressions:
            return "/".join(self.seed_expressions)
        return self.category

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "category": self.category,
            "seed_expressions": list(self.seed_expressions),
            "bbox": self.bbox.to_dict(),
            "mask": self.mask.to_dict() if self.mask is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectEntry":
        mask = d.get("mask")
        return cls(
            object_id=str(d["object_id"]),
            category=d["category"],
            bbox=BBoxNorm.from_dict(d["bbox"]),
            seed_expressions=tuple(d.get("seed_expressions") or ()),
            mask=RLEMask.from_dict(mask) if mask else None,
        )


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    uri: str
    width_px: int
    height_px: int
    objects: tuple[ObjectEntry, ...]
    captions: tuple[str, ...] = ()

    def object(self, object_id: str) -> ObjectEntry:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"image {self.image_id} has no object {object_id!r}")

    def object_ids(self) -> list[str]:
        return [o.object_id for o in self.objects]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "uri": self.uri,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "objects": [o.to_dict() for o in self.objects],
            "captions": list(self.captions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        return cls(
            image_id=str(d["image_id"]),
            uri=d["uri"],
            width_px=int(d["width_px"]),
            height_px=int(d["height_px"]),
            objects=tuple(ObjectEntry.from_dict(o) for o in d["objects"]),
            captions=tuple(d.get("captions") or ()),
        )


@dataclass(frozen=True)
class TargetSet:
    object_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.object_ids:
            raise ValueError("target set must not be empty")
        if len(set(self.object_ids)) != len(self.object_ids):
            raise ValueError(f"duplicate object ids in target {self.object_ids}")

    @classmethod
    def of(cls, *ids: str) -> "TargetSet":
        return cls(tuple(ids))

    def __len__(self) -> int:
        return len(self.object_ids)

    @property
    def is_multi(self) -> bool:
        return len(self.object_ids) >= 2

    def to_dict(self) -> dict:
        return {"object_ids": list(self.object_ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetSet":
        return cls(tuple(str(i) for i in d["object_ids"]))


@dataclass(frozen=True)
class FilterScores:
    s_l: float
    s_g: float
    s_e: float
    s_f: float

    @classmethod
    def compute(cls, s_l: float, s_g: float, alpha1: float) -> "FilterScores":
        # S_f = a1*S_e + a2*S_l with a1 + a2 = 1 collapses to S_l - a1*S_g
        return cls(s_l=s_l, s_g=s_g, s_e=s_l - s_g, s_f=s_l - alpha1 * s_g)

    def to_dict(self) -> dict:
        return {"s_l": self.s_l, "s_g": self.s_g, "s_e": self.s_e, "s_f": self.s_f}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterScores":
        return cls(d["s_l"], d["s_g"], d["s_e"], d["s_f"])


@dataclass(frozen=True)
class Expression:
    text: str
    target: TargetSet
    source: str
    scores: Optional[FilterScores] = None

    def __post_init__(self):
        text = normalize_text(self.text)
        if not text:
            raise ValueError("expression text must not be empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown expression source {self.source!r}")
        object.__setattr__(self, "text", text)

    def with_scores(self, scores: FilterScores) -> "Expression":
        return Expression(self.text, self.target, self.source, scores)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "target": self.target.to_dict(),
            "source": self.source,
            "scores": self.scores.to_dict() if self.scores is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Expression":
        scores = d.get("scores")
        return cls(
            text=d["text"],
            target=TargetSet.from_dict(d["target"]),
            source=d["source"],
            scores=FilterScores.from_dict(scores) if scores else None,
        )


@dataclass(frozen=True)
class InDetRecord:
    image_id: str
    target: TargetSet
    bboxes: tuple[BBoxNorm, ...]
    instruction: str
    group: str
    source: str
    scores: Optional[FilterScores] = None

    def violations(self) -> list[str]:
        out = []
        if len(self.bboxes) != len(self.target):
            out.append(f"{len(self.bboxes)} boxes for a target of {len(self.target)}")
        if not self.instruction.strip():
            out.append("empty instruction")
        if self.group not in GROUPS:
            out.append(f"unknown group {self.group!r}")
        elif self.target.is_multi != (self.group in MULTI_GROUPS):
            out.append(f"group {self.group} does not fit a target of {len(self.target)}")
        return out

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "target": {"object_ids": list(self.target.object_ids),
                       "bboxes": [b.to_dict() for b in self.bboxes]},
            "instruction": self.instruction,
            "group": self.group,
            "source": self.source,
            "scores": self.scores.to_dict() if self.scores is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InDetRecord":
        scores = d.get("scores")
        return cls(
            image_id=str(d["image_id"]),
            target=TargetSet.from_dict(d["target"]),
            bboxes=tuple(BBoxNorm.from_dict(b) for b in d["target"]["bboxes"]),
            instruction=d["instruction"],
            group=d["group"],
            source=d["source"],
            scores=FilterScores.from_dict(scores) if scores else None,
        )


def validate_record(record: ImageRecord) -> list[str]:
    """Every invariant violation of *record*; an empty list admits it to the pipeline."""
    problems: list[str] = []
    if not record.image_id:
        problems.append("empty image_id")
    if record.width_px <= 0 or record.height_px <= 0:
        problems.append(f"image size {record.width_px}x{record.height_px} not positive")
    if not record.objects:
        problems.append(f"image {record.image_id} has no objects")
    seen: set[str] = set()
    for obj in record.objects:
        where = f"object {obj.object_id}"
        if obj.object_id in seen:
            problems.append(f"{where}: duplicate object_id")
        seen.add(obj.object_id)
        if not obj.category.strip():
            problems.append(f"{where}: empty category")
        problems.extend(f"{where}: {v}" for v in obj.bbox.violations())
        if obj.mask is not None:
            problems.extend(f"{where}: {v}" for v in _mask_violations(obj, record))
    return problems


def _mask_violations(obj: ObjectEntry, record: ImageRecord) -> list[str]:
    mask = obj.mask
    if (mask.height, mask.width) != (record.height_px, record.width_px):
        return [f"mask size {mask.height}x{mask.width} differs from image"]
    arr = mask.decode()
    if not arr.any():
        return []
    rows = np.flatnonzero(arr.any(axis=1))
    cols = np.flatnonzero(arr.any(axis=0))
    w, h = record.width_px, record.height_px
    x1, y1, x2, y2 = obj.bbox.to_pixels(w, h)
    sx, sy = MASK_SLACK * w, MASK_SLACK * h
    if cols[0] < x1 - sx or cols[-1] + 1 > x2 + sx or rows[0] < y1 - sy or rows[-1] + 1 > y2 + sy:
        return ["mask extends beyond its bbox"]
    return []


# --- JSONL helpers --------------------------------------------------------

def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON line: {exc}") from exc


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(dumps(row) + "\n")
            n += 1
    return n


def read_records(path) -> list[ImageRecord]:
    return [ImageRecord.from_dict(d) for d in read_jsonl(path)]


def write_records(path, records: Iterable[ImageRecord]) -> int:
    return write_jsonl(path, (r.to_dict() for r in records))


@dataclass
class Report:
    """Counts of drops and notable events keyed by reason."""

    counts: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)

    def add(self, reason: str, n: int = 1, **detail) -> None:
        self.counts[reason] = self.counts.get(reason, 0) + n
        if detail:
            self.entries.append({"reason": reason, **detail})

    def merge(self, other: "Report") -> None:
        for k, v in other.counts.items():
            self.counts[k] = self.counts.get(k, 0) + v
        self.entries.extend(other.entries)
