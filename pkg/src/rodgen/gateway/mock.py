"""Deterministic in-process stand-ins for the model services.

Every reply is a pure function of (seed, canonical request). Chat mocks first
look the request up in a fixture table keyed by :func:`request_key`; unkeyed
requests go to a seeded fallback that recognises the engine's own prompts and
answers in the expected shape.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
import threading
import time
from typing import Callable, Iterable, Optional

import numpy as np

from .. import prompts
from .base import (ChatClient, ChatMessage, EmbeddingClient, GatewayError, ScoringClient,
                   SegmentationClient, SegmentationUnavailable, ServiceProfile, TransientError)


def image_digest(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(image)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def request_key(messages: list[ChatMessage]) -> str:
    canon = [{"role": m.role, "content": m.content,
              "image": image_digest(m.image) if m.image is not None else None} for m in messages]
    return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()


def seeded_rng(seed: int, *parts) -> random.Random:
    h = hashlib.sha256(repr((seed,) + parts).encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


class FaultInjection:
    """Scripted failures for tests: the first *transient* calls fail transiently,
    and every call after *fail_after* successes fails permanently."""

    def __init__(self, transient: int = 0, fail_after: Optional[int] = None, delay_s: float = 0.0):
        self.transient = transient
        self.fail_after = fail_after
        self.delay_s = delay_s
        self.calls = 0
        self.successes = 0
        self._lock = threading.Lock()

    def before(self) -> None:
        if self.delay_s:
            time.sleep(self.delay_s)
        with self._lock:
            self.calls += 1
            if self.calls <= self.transient:
                raise TransientError("injected HTTP 500")
            if self.fail_after is not None and self.successes >= self.fail_after:
                raise GatewayError("injected service exhaustion")
            self.successes += 1


_NO_FAULTS = FaultInjection()


def _profile(name: str, max_in_flight: int = 4, **kw) -> ServiceProfile:
    return ServiceProfile(name=name, model=f"mock-{name}", max_in_flight=max_in_flight, **kw)


# --- chat ------------------------------------------------------------------

COLORS = ["red", "blue", "white", "black", "green", "yellow", "gray", "brown", "silver", "orange"]
PLACES = ["on the left", "on the right", "in the middle", "near the top", "at the bottom",
          "in the foreground", "in the background"]
STATES = ["standing still", "parked", "in use", "partly visible", "close to the camera", "far away"]
RELATIONS = ["next to", "behind", "in front of", "near", "beside", "to the left of", "to the right of"]
THINGS = ["object", "item", "thing"]
STOPWORDS = {"a", "an", "the", "of", "on", "in", "to", "with", "and", "at", "is", "are", "by",
             "for", "near", "next", "left", "right", "object", "objects", "item", "its", "his", "her"}
SYNONYMS = {"next to": "beside", "near": "close to", "big": "large", "small": "little",
            "on the left": "at the left side", "on the right": "at the right side",
            "standing": "upright", "person": "individual", "man": "gentleman", "car": "automobile",
            "in front of": "ahead of", "parked": "stationary"}
_COORD_LINE = re.compile(r"^(?P<name>[^\n:]+):\s*\[[-0-9.]+,")


def _words(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.casefold())


def synthetic_reply(messages: list[ChatMessage], rng: random.Random) -> str:
    """Answer an engine prompt in the shape a cooperative model would."""
    system = messages[0].content if messages[0].role == "system" else ""
    last = messages[-1].content
    if system == prompts.task_description():
        return _reply_blocks(last, rng)
    if system == prompts.summary_task():
        return _reply_summary(last)
    if system == prompts.leveling_task():
        return _reply_level(last)
    if system == prompts.rewrite_prompt():
        return _reply_rewrite(last, rng)
    if "including objects:" in last:
        return _reply_caption(last, rng)
    return _reply_local(messages, rng)


def _reply_blocks(image2text: str, rng: random.Random) -> str:
    names = []
    for line in image2text.splitlines():
        m = _COORD_LINE.match(line.strip())
        if m and m.group("name") not in names:
            names.append(m.group("name").strip())
    others = [n.split("/")[0] for n in names]
    lines = []
    for name in names:
        noun = name.split("/")[0]
        rest = [o for o in others if o != noun] or ["the scene"]
        own = [noun, f"{rng.choice(COLORS)} {noun}", f"{noun} {rng.choice(PLACES)}",
               f"{noun} {rng.choice(STATES)}", f"{rng.choice(COLORS)} {noun} {rng.choice(PLACES)}"]
        rel = [f"{noun} {rng.choice(RELATIONS)} the {rng.choice(rest)}" for _ in range(rng.randint(2, 4))]
        lines += [f"**[{name}]**", "(1) " + ", ".join(own), "(2) " + ", ".join(rel)]
    return "\n".join(lines)


def _reply_summary(prompt: str) -> str:
    profiles = [line.split(":", 1)[1] for line in prompt.splitlines()
                if line.startswith("## object") and ":" in line]
    common = None
    for p in profiles:
        ws = [w for w in _words(p) if w not in STOPWORDS]
        common = list(ws) if common is None else [w for w in common if w in ws]
    common = list(dict.fromkeys(common or []))
    if not common:
        return "There are no common properties between given objects."
    key = common[0]
    phrases = [f"{key} objects", f"all the {key} things"]
    if len(common) > 1:
        phrases.append(f"{key} and {common[1]} objects")
    return "Summary of common properties of given objects:\n## " + "; ".join(phrases) + ";"


def _reply_level(prompt: str) -> str:
    desc = prompt.removeprefix("Grade description:").strip().rstrip(".")
    n = len(desc.split())
    level = 0 if n <= 1 else 1 if n <= 3 else 2 if n <= 7 else 3
    return (f"My grading for description {desc}: This phrase has {n} words. "
            f"The level of this description is: level {level}.")


def _reply_rewrite(text: str, rng: random.Random) -> str:
    out = text
    for src, dst in SYNONYMS.items():
        if re.search(rf"\b{re.escape(src)}\b", out):
            out = re.sub(rf"\b{re.escape(src)}\b", dst, out, count=1)
            break
    else:
        out = f"{rng.choice(['the', 'that', 'this'])} {text}" if not text.lower().startswith(("the ", "that ", "this ")) \
            else f"{text} shown in the image"
    return out


def _reply_caption(prompt: str, rng: random.Random) -> str:
    names = [n.strip() for n in prompt.split("including objects:", 1)[1].split(",") if n.strip()]
    parts = [f"The image shows {', '.join(n.split('/')[0] for n in names)}."]
    for n in names:
        noun = n.split("/")[0]
        parts.append(f"The {noun} is {rng.choice(PLACES)} and looks {rng.choice(COLORS)}.")
    return " ".join(parts)


def _reply_local(messages: list[ChatMessage], rng: random.Random) -> str:
    last = messages[-1].content
    if "attributes" in last:
        return f"It is {rng.choice(COLORS)} and {rng.choice(STATES)}."
    if "around" in last:
        return f"There is another {rng.choice(THINGS)} {rng.choice(PLACES)}."
    if "relationship" in last:
        return f"It is {rng.choice(RELATIONS)} another {rng.choice(THINGS)}."
    if "review" in last:
        return "The previous answers are correct."
    return f"the {rng.choice(COLORS)} {rng.choice(THINGS)} {rng.choice(PLACES)}"


class MockChatClient(ChatClient):
    def __init__(self, profile: Optional[ServiceProfile] = None, seed: int = 0,
                 fixtures: Optional[dict[str, str]] = None,
                 fallback: Optional[Callable[[list[ChatMessage], random.Random], str]] = None,
                 faults: Optional[FaultInjection] = None, **kw):
        super().__init__(profile or _profile("chat"), **kw)
        self.seed = seed
        self.fixtures = dict(fixtures or {})
        self.fallback = fallback or synthetic_reply
        self.faults = faults or _NO_FAULTS
        self.log: list[list[ChatMessage]] = []
        self._log_lock = threading.Lock()

    def add_fixture(self, messages: list[ChatMessage], reply: str) -> None:
        self.fixtures[request_key(messages)] = reply

    def _complete(self, messages: list[ChatMessage]) -> str:
        self.faults.before()
        with self._log_lock:
            self.log.append(list(messages))
        key = request_key(messages)
        if key in self.fixtures:
            return self.fixtures[key]
        return self.fallback(messages, seeded_rng(self.seed, key))


class ScriptedChatClient(ChatClient):
    """Replies from a fixed queue regardless of the request; for parser retry tests."""

    def __init__(self, replies: Iterable[str], profile: Optional[ServiceProfile] = None, **kw):
        super().__init__(profile or _profile("chat"), **kw)
        self.replies = list(replies)
        self.log: list[list[ChatMessage]] = []
        self._lock = threading.Lock()

    def _complete(self, messages: list[ChatMessage]) -> str:
        with self._lock:
            self.log.append(list(messages))
            if not self.replies:
                raise GatewayError("script exhausted")
            return self.replies.pop(0)


# --- embeddings ------------------------------------------------------------

class MockEmbeddingClient(EmbeddingClient):
    """Bag-of-words of seeded hash vectors, normalized to unit length."""

    def __init__(self, profile: Optional[ServiceProfile] = None, seed: int = 0, dim: int = 64,
                 fixtures: Optional[dict[str, np.ndarray]] = None,
                 faults: Optional[FaultInjection] = None, **kw):
        super().__init__(profile or _profile("embed"), **kw)
        self.seed, self.dim = seed, dim
        self.fixtures = dict(fixtures or {})
        self.faults = faults or _NO_FAULTS

    def _token_vector(self, token: str) -> np.ndarray:
        h = hashlib.sha256(f"{self.seed}|{token}".encode()).digest()
        return np.random.default_rng(int.from_bytes(h[:8], "big")).standard_normal(self.dim)

    def vector(self, text: str) -> np.ndarray:
        if text in self.fixtures:
            return np.asarray(self.fixtures[text], dtype=np.float64)
        tokens = _words(text) or [text]
        v = np.sum([self._token_vector(t) for t in tokens], axis=0)
        return v / np.linalg.norm(v)

    def _embed(self, texts: list[str]) -> list:
        self.faults.before()
        return [self.vector(t) for t in texts]


# --- image-text scoring ----------------------------------------------------

class HashScorer(ScoringClient):
    """Score is a seeded hash of (image, text), uniform in [0.2, 0.8)."""

    def __init__(self, profile: Optional[ServiceProfile] = None, seed: int = 0,
                 faults: Optional[FaultInjection] = None, **kw):
        super().__init__(profile or _profile("score"), **kw)
        self.seed = seed
        self.faults = faults or _NO_FAULTS

    def _score(self, image, texts):
        self.faults.before()
        digest = image_digest(image)
        out = []
        for t in texts:
            h = hashlib.sha256(f"{self.seed}|{digest}|{t}".encode()).digest()
            out.append(0.2 + 0.6 * int.from_bytes(h[:8], "big") / 2 ** 64)
        return out


class OracleScorer(ScoringClient):
    """1.0 when the text is registered as ground truth for that exact image, else 0.0."""

    def __init__(self, truth: Optional[dict[str, set]] = None, profile: Optional[ServiceProfile] = None, **kw):
        super().__init__(profile or _profile("score"), **kw)
        self.truth: dict[str, set] = {k: {t.casefold() for t in v} for k, v in (truth or {}).items()}

    def register(self, image: np.ndarray, texts: Iterable[str]) -> None:
        self.truth.setdefault(image_digest(image), set()).update(t.casefold() for t in texts)

    def _score(self, image, texts):
        known = self.truth.get(image_digest(image), set())
        return [1.0 if t.casefold() in known else 0.0 for t in texts]


class RandomScorer(ScoringClient):
    """Independent uniform scores from one seeded stream; ignores its inputs."""

    def __init__(self, seed: int = 0, profile: Optional[ServiceProfile] = None, **kw):
        super().__init__(profile or _profile("score"), **kw)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def _score(self, image, texts):
        with self._lock:
            return self._rng.random(len(texts)).tolist()


# --- segmentation ----------------------------------------------------------

class MockSegmenter(SegmentationClient):
    """Returns the bbox rectangle as the mask; ``available=False`` mimics an absent service."""

    def __init__(self, profile: Optional[ServiceProfile] = None, available: bool = True, **kw):
        super().__init__(profile or _profile("segment"), **kw)
        self.available = available

    def _segment(self, image, bbox):
        if not self.available:
            raise SegmentationUnavailable("segmentation unavailable")
        h, w = image.shape[:2]
        c0, r0, c1, r1 = bbox.pixel_rect(w, h)
        mask = np.zeros((h, w), dtype=bool)
        mask[r0:r1, c0:c1] = True
        return mask
