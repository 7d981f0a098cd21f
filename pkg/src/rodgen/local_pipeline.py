"""Box-marked generation: the object is outlined in red and a vision model describes it."""
from __future__ import annotations

import random
from pathlib import Path
from typing import Optional

import numpy as np

from . import prompts
from .core import Expression, ImageRecord, ObjectEntry, Report, TargetSet, normalize_text
from .gateway import ChatClient, ChatMessage, GatewayError
from .imaging import draw_bbox_overlay, save_image

MODES = ("single", "cot")


def run_local(record: ImageRecord, obj: ObjectEntry, image: np.ndarray, vision: ChatClient,
              rng: random.Random, mode: str = "single", report: Optional[Report] = None,
              debug_dir: Optional[str] = None) -> list[tuple[Expression, str]]:
    """Describe one object; returns ``(expression, prompt_used)`` pairs (at most one).

    ``single`` sends one randomly drawn prompt. ``cot`` walks the six chained
    questions as one conversation and keeps only the final answer.
    """
    if mode not in MODES:
        raise ValueError(f"unknown local mode {mode!r}")
    record.object(obj.object_id)
    report = report if report is not None else Report()
    marked = draw_bbox_overlay(image, obj.bbox)
    if debug_dir:
        save_image(marked, Path(debug_dir) / f"{record.image_id}_{obj.object_id}_box.png")

    try:
        if mode == "single":
            prompt = rng.choice(prompts.local_prompts())
            answer = vision.vision_chat(marked, [ChatMessage("user", prompt)])
        else:
            history: list[ChatMessage] = []
            answer = ""
            for i, prompt in enumerate(prompts.cot_prompts()):
                history.append(ChatMessage("user", prompt, marked if i == 0 else None))
                answer = vision.chat(history)
                history.append(ChatMessage("assistant", answer))
    except GatewayError as exc:
        reason = "local_empty_answer" if "empty response" in str(exc) else "local_gateway_fault"
        report.add(reason, image_id=record.image_id, object_id=obj.object_id, error=str(exc))
        return []

    text = normalize_text(answer)
    if not text:
        report.add("local_empty_answer", image_id=record.image_id, object_id=obj.object_id)
        return []
    return [(Expression(text, TargetSet.of(obj.object_id), "local"), prompt)]
