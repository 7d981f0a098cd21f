"""Caption-driven generation: captions plus box coordinates go to a text LLM with
in-context examples, and its block-formatted reply is parsed back into
per-object expressions."""
from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from . import prompts
from .core import Expression, ImageRecord, Report, TargetSet, fold_text, normalize_text
from .gateway import ChatClient, ChatMessage, GatewayError
from .prompts import InContextExample

logger = logging.getLogger(__name__)

_HEADING = re.compile(r"^[\s*_#>`]*(?:\\textbf\{)?\s*\[(?P<names>[^\]]+)\]\s*\}?[\s*_:`]*$")
_ITEM = re.compile(r"^[\s*_]*\((?P<n>[12])\)[\s*_:]*(?P<body>.*)$")
_ARTICLE = re.compile(r"^(?:a|an|the)\s+", re.IGNORECASE)


class BlockParseError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectBlock:
    names: tuple[str, ...]
    attrs_self: tuple[str, ...]
    attrs_rel: tuple[str, ...]

    def render(self) -> str:
        return (f"[{'/'.join(self.names)}]\n(1) {', '.join(self.attrs_self)}\n"
                f"(2) {', '.join(self.attrs_rel)}")

    @property
    def phrases(self) -> tuple[str, ...]:
        return self.attrs_self + self.attrs_rel


def object_names(record: ImageRecord) -> list[str]:
    """Distinct object contents in order of first appearance."""
    return list(dict.fromkeys(o.content for o in record.objects))


def build_caption_prompt(record: ImageRecord, rng: random.Random) -> str:
    if not record.objects:
        raise ValueError(f"image {record.image_id} has no objects")
    base = rng.choice(prompts.caption_prompts())
    return f"{base}, including objects: {', '.join(object_names(record))}"


def generate_captions(record: ImageRecord, vision: ChatClient, image, rng: random.Random,
                      repeats: int = 2) -> ImageRecord:
    """Ask the vision model for *repeats* image descriptions unless the record already has captions."""
    if record.captions:
        return record
    captions = []
    for _ in range(repeats):
        prompt = build_caption_prompt(record, rng)
        try:
            text = vision.vision_chat(image, [ChatMessage("user", prompt)])
        except GatewayError as exc:
            raise GatewayError(f"image {record.image_id}: caption generation failed: {exc}",
                               exc.attempts) from exc
        captions.append(normalize_text(text))
    return replace(record, captions=tuple(captions))


def _fmt(v: float) -> str:
    return repr(round(float(v), 2))


def image2text(record: ImageRecord, captions: Sequence[str]) -> str:
    boxes: dict[str, list[str]] = {}
    for obj in record.objects:
        b = obj.bbox
        boxes.setdefault(obj.content, []).append(f"[{_fmt(b.x1)}, {_fmt(b.y1)}, {_fmt(b.x2)}, {_fmt(b.y2)}]")
    lines = list(captions) + [f"{name}: {', '.join(bs)}" for name, bs in boxes.items()]
    return "\n".join(lines)


def build_task_messages(record: ImageRecord, captions: Sequence[str],
                        examples: Optional[Sequence[InContextExample]] = None) -> list[ChatMessage]:
    if examples is None:
        examples = prompts.in_context_examples()
    messages = [ChatMessage("system", prompts.task_description())]
    for ex in examples:
        messages.append(ChatMessage("user", ex.image2text))
        messages.append(ChatMessage("assistant", ex.response))
    messages.append(ChatMessage("user", image2text(record, captions)))
    return messages


def _dedup_key(phrase: str) -> str:
    return _ARTICLE.sub("", fold_text(phrase))


def _split_phrases(body: str) -> tuple[str, ...]:
    out, seen = [], set()
    for part in body.split(","):
        phrase = normalize_text(part.strip(" *_.;"))
        if not phrase:
            continue
        key = _dedup_key(phrase)
        if key in seen:
            continue
        seen.add(key)
        out.append(phrase)
    return tuple(out)


def parse_object_blocks(response: str) -> list[ObjectBlock]:
    """Parse ``[name/alias]`` headings followed by ``(1) ...`` and ``(2) ...`` phrase lines.

    Phrases that repeat within a line, ignoring case and a leading article, are dropped.
    """
    blocks: list[ObjectBlock] = []
    current = None
    lines: dict[str, list[str]] = {}
    active = None

    def flush():
        if current is not None:
            blocks.append(ObjectBlock(current, _split_phrases(", ".join(lines["1"])),
                                      _split_phrases(", ".join(lines["2"]))))

    for raw in (response or "").splitlines():
        line = raw.strip()
        if not line:
            continue
        head = _HEADING.match(line)
        if head:
            flush()
            names = tuple(n for n in (normalize_text(x) for x in head.group("names").split("/")) if n)
            current = names or None
            lines, active = {"1": [], "2": []}, None
            continue
        if current is None:
            continue
        item = _ITEM.match(line)
        if item:
            active = item.group("n")
            lines[active].append(item.group("body").rstrip("\\ "))
        elif active is not None:
            lines[active].append(line.rstrip("\\ "))
    flush()
    if not blocks:
        raise BlockParseError("no object blocks in response")
    return blocks


def bind_blocks(blocks: Sequence[ObjectBlock], record: ImageRecord,
                report: Optional[Report] = None) -> list[Expression]:
    """Attach each block's phrases to every object whose category or seed expression matches an alias."""
    report = report if report is not None else Report()
    out: list[Expression] = []
    for block in blocks:
        aliases = {fold_text(n) for n in block.names}
        matched = [o for o in record.objects
                   if fold_text(o.category) in aliases
                   or any(fold_text(s) in aliases for s in o.seed_expressions)
                   or fold_text(o.content) in aliases]
        if not matched:
            report.add("unmatched_block", image_id=record.image_id, block="/".join(block.names))
            continue
        for obj in matched:
            target = TargetSet.of(obj.object_id)
            out.extend(Expression(p, target, "global") for p in block.phrases)
    return out


def run_global(record: ImageRecord, chat: ChatClient,
               examples: Optional[Sequence[InContextExample]] = None,
               report: Optional[Report] = None) -> list[Expression]:
    """One generation call for an image, retried once on an unparseable reply.

    Returns [] (with a report entry) when both replies fail to parse.
    """
    report = report if report is not None else Report()
    messages = build_task_messages(record, record.captions, examples)
    for attempt in (1, 2):
        reply = chat.chat(messages)
        try:
            blocks = parse_object_blocks(reply)
        except BlockParseError:
            logger.info("image %s: unparseable generation reply (attempt %d)", record.image_id, attempt)
            continue
        return bind_blocks(blocks, record, report)
    report.add("global_parse_failure", image_id=record.image_id)
    return []
