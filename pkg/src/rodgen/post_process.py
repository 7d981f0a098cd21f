"""Final refinement: dedup, synonymous rewriting, group assignment, statistics and dataset emission."""
from __future__ import annotations

import csv
import json
import logging
import math
import random
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import prompts
from .core import (GROUPS, Expression, ImageRecord, InDetRecord, Report, fold_text, normalize_text,
                   dumps)
from .gateway import ChatClient, ChatMessage, EmbeddingClient, GatewayError

logger = logging.getLogger(__name__)

SOURCE_PRECEDENCE = ("seed", "global", "local", "transferred", "summarized", "spliced", "rewritten")
MAX_REWRITE_WORDS = 25
SPLITS = ("train", "val", "test")
LEVEL_TO_GROUP = {0: "G1", 1: "G2", 2: "G3", 3: "G4"}
DEFAULT_GROUP = "G2"

_LEVEL = re.compile(r"\blevel\s*:?\s*([0-3])\b", re.IGNORECASE)


class EmitError(ValueError):
    pass


def _rank(source: str) -> int:
    return SOURCE_PRECEDENCE.index(source)


def dedup(expressions: Sequence[Expression]) -> list[Expression]:
    """Collapse expressions with the same target and case-folded text.

    The first occurrence keeps its place and text; it takes the source (and
    scores) of the highest-precedence duplicate.
    """
    out: list[Expression] = []
    index: dict[tuple, int] = {}
    for e in expressions:
        key = (frozenset(e.target.object_ids), fold_text(e.text))
        if key not in index:
            index[key] = len(out)
            out.append(e)
            continue
        i = index[key]
        kept = out[i]
        if _rank(e.source) < _rank(kept.source):
            out[i] = Expression(kept.text, kept.target, e.source, e.scores or kept.scores)
    return out


def rewrite_messages(expression: Expression) -> list[ChatMessage]:
    return [ChatMessage("system", prompts.rewrite_prompt()), ChatMessage("user", expression.text)]


def rewrite_synonymous(expression: Expression, chat: ChatClient,
                       report: Optional[Report] = None) -> Optional[Expression]:
    """A paraphrase with the same target, or None when the reply is empty, too long or unchanged."""
    report = report if report is not None else Report()
    try:
        reply = chat.chat(rewrite_messages(expression))
    except GatewayError as exc:
        if "empty response" not in str(exc):
            raise
        reply = ""
    text = normalize_text(reply.strip().strip('"\''))
    if not text:
        report.add("rewrite_empty")
        return None
    if len(text.split()) > MAX_REWRITE_WORDS:
        report.add("rewrite_too_long")
        return None
    if fold_text(text) == fold_text(expression.text):
        report.add("rewrite_unchanged")
        return None
    return Expression(text, expression.target, "rewritten")


def leveling_messages(text: str) -> list[ChatMessage]:
    ex = prompts.leveling_example()
    return [ChatMessage("system", prompts.leveling_task()),
            ChatMessage("user", ex.image2text),
            ChatMessage("assistant", ex.response),
            ChatMessage("user", f"Grade description: {text}.")]


def parse_level(response: str) -> Optional[int]:
    """The last "level N" in the reply, N in 0..3."""
    found = _LEVEL.findall(response or "")
    return int(found[-1]) if found else None


def assign_group(expression: Expression, chat: Optional[ChatClient] = None,
                 report: Optional[Report] = None) -> str:
    report = report if report is not None else Report()
    if expression.target.is_multi:
        return "G5" if expression.source == "spliced" else "G6"
    if chat is None:
        raise ValueError("single-object grouping needs a chat client")
    messages = leveling_messages(expression.text)
    for _ in range(2):
        level = parse_level(chat.chat(messages))
        if level is not None:
            return LEVEL_TO_GROUP[level]
    report.add("group_default", text=expression.text)
    return DEFAULT_GROUP


# --- statistics ----------------------------------------------------------------

def _mean_pairwise_cosine(vectors: np.ndarray) -> float:
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    sim = unit @ unit.T
    n = len(unit)
    return float((sim.sum() - np.trace(sim)) / (n * (n - 1)))


def compute_stats(dataset: Sequence[InDetRecord], embedder: Optional[EmbeddingClient] = None) -> dict:
    """Word-count histogram, per-target diversity, group ratios and totals."""
    if not dataset:
        raise ValueError("empty dataset")
    lengths = [len(r.instruction.split()) for r in dataset]
    hist = Counter(lengths)
    vocab = {tok.casefold() for r in dataset for tok in r.instruction.split()}
    groups = Counter(r.group for r in dataset)
    targets: dict[tuple, list[str]] = {}
    for r in dataset:
        targets.setdefault((r.image_id, tuple(sorted(r.target.object_ids))), []).append(r.instruction)

    diversity = None
    per_target = []
    if embedder is not None:
        multi = {k: v for k, v in targets.items() if len(v) >= 2}
        texts = sorted({t for v in multi.values() for t in v})
        if texts:
            vecs = dict(zip(texts, embedder.embed(texts)))
            for key in sorted(multi):
                per_target.append(_mean_pairwise_cosine(np.stack([vecs[t] for t in multi[key]])))
            diversity = float(np.mean(per_target))

    n = len(dataset)
    return {
        "instructions": n,
        "targets": len(targets),
        "images": len({r.image_id for r in dataset}),
        "mean_length_words": float(np.mean(lengths)),
        "vocabulary_size": len(vocab),
        "word_histogram": {str(k): hist[k] for k in sorted(hist)},
        "diversity_mean_pairwise_cosine": diversity,
        "diversity_targets": len(per_target),
        "group_counts": {g: groups.get(g, 0) for g in GROUPS},
        "group_ratios": {g: groups.get(g, 0) / n for g in GROUPS},
    }


def write_stats(stats: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"stats": out / "stats.json", "histogram": out / "histogram.csv",
             "group_ratios": out / "group_ratios.csv"}
    paths["stats"].write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(paths["histogram"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["words", "count"])
        for k, v in stats["word_histogram"].items():
            w.writerow([k, v])
    with open(paths["group_ratios"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["group", "count", "ratio"])
        for g in GROUPS:
            w.writerow([g, stats["group_counts"][g], repr(stats["group_ratios"][g])])
    return paths


# --- splits and emission -------------------------------------------------------

def split_images(image_ids: Iterable[str], ratios: Sequence[float] = (0.8, 0.1, 0.1),
                 explicit: Optional[dict] = None, seed: int = 0) -> dict[str, str]:
    """Map image_id -> split. Explicit lists are used verbatim and must be disjoint;
    otherwise a seeded shuffle is cut by largest-remainder rounding of the ratios."""
    ids = sorted(set(image_ids))
    if explicit is not None:
        assignment: dict[str, str] = {}
        for split in SPLITS:
            for iid in explicit.get(split, []):
                if iid in assignment:
                    raise EmitError(f"image {iid} listed in both {assignment[iid]} and {split}")
                assignment[iid] = split
        return {i: assignment[i] for i in ids if i in assignment}
    total = float(sum(ratios))
    exact = [r / total * len(ids) for r in ratios]
    counts = [math.floor(x) for x in exact]
    for i in sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))[: len(ids) - sum(counts)]:
        counts[i] += 1
    rng = random.Random(f"{seed}|split")
    shuffled = list(ids)
    rng.shuffle(shuffled)
    out, pos = {}, 0
    for split, c in zip(SPLITS, counts):
        for iid in shuffled[pos:pos + c]:
            out[iid] = split
        pos += c
    return out


def to_indet(record: ImageRecord, expression: Expression, group: str) -> InDetRecord:
    try:
        boxes = tuple(record.object(oid).bbox for oid in expression.target.object_ids)
    except KeyError as exc:
        raise EmitError(str(exc)) from exc
    rec = InDetRecord(record.image_id, expression.target, boxes, expression.text, group,
                      expression.source, expression.scores)
    problems = rec.violations()
    if problems:
        raise EmitError(f"image {record.image_id}: {'; '.join(problems)}")
    return rec


def indet_sort_key(r: InDetRecord):
    return (r.image_id, r.target.object_ids, r.group, _rank(r.source), r.instruction)


def emit_indet(records: Sequence[ImageRecord], grouped: dict[str, list[tuple[Expression, str]]],
               out_dir, ratios: Sequence[float] = (0.8, 0.1, 0.1),
               explicit: Optional[dict] = None, seed: int = 0) -> dict[str, Path]:
    """Write one InDET JSONL per split, records sorted canonically."""
    by_id = {r.image_id: r for r in records}
    missing = set(grouped) - set(by_id)
    if missing:
        raise EmitError(f"expressions for unknown images {sorted(missing)}")
    assignment = split_images(grouped, ratios, explicit, seed)
    rows: dict[str, list[InDetRecord]] = {s: [] for s in SPLITS}
    for image_id, items in grouped.items():
        split = assignment.get(image_id)
        if split is None:
            logger.warning("image %s is in no split; not emitted", image_id)
            continue
        rows[split].extend(to_indet(by_id[image_id], e, g) for e, g in items)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split in SPLITS:
        path = out / f"{split}.jsonl"
        with open(path, "w", encoding="utf-8") as f:
            for r in sorted(rows[split], key=indet_sort_key):
                f.write(dumps(r.to_dict()) + "\n")
        paths[split] = path
    return paths


def read_indet(paths: Iterable) -> list[InDetRecord]:
    out = []
    for p in paths:
        with open(p, encoding="utf-8") as f:
            out.extend(InDetRecord.from_dict(json.loads(line)) for line in f if line.strip())
    return out
