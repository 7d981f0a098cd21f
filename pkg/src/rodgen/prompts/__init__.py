"""Prompt texts and in-context examples, kept as editable data files."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class InContextExample:
    image2text: str
    response: str


def _text(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")


def _lines(name: str) -> tuple[str, ...]:
    return tuple(line.strip() for line in _text(name).splitlines() if line.strip())


@lru_cache(maxsize=None)
def caption_prompts() -> tuple[str, ...]:
    return _lines("caption_prompts.txt")


@lru_cache(maxsize=None)
def local_prompts() -> tuple[str, ...]:
    return _lines("local_prompts.txt")


@lru_cache(maxsize=None)
def cot_prompts() -> tuple[str, ...]:
    return _lines("cot_prompts.txt")


@lru_cache(maxsize=None)
def task_description() -> str:
    return _text("task_description.txt").strip()


@lru_cache(maxsize=None)
def in_context_examples() -> tuple[InContextExample, ...]:
    data = json.loads(_text("in_context_examples.json"))
    return tuple(InContextExample(d["image2text"], d["response"]) for d in data)


@lru_cache(maxsize=None)
def summary_task() -> str:
    return _text("summary_task.txt").strip()


@lru_cache(maxsize=None)
def summary_example() -> InContextExample:
    d = json.loads(_text("summary_example.json"))
    return InContextExample(d["prompt"], d["response"])


@lru_cache(maxsize=None)
def leveling_task() -> str:
    return _text("leveling_task.txt").strip()


@lru_cache(maxsize=None)
def leveling_example() -> InContextExample:
    d = json.loads(_text("leveling_example.json"))
    return InContextExample(d["prompt"], d["response"])


@lru_cache(maxsize=None)
def rewrite_prompt() -> str:
    return _text("rewrite_prompt.txt").strip()
