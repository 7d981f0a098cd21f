"""Request plumbing shared by every model client: in-flight caps, retries, latency stats."""
from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, TypeVar

import numpy as np

T = TypeVar("T")

ROLES = ("system", "user", "assistant")
DEFAULT_MAX_IMAGE_BYTES = 20 * 1024 * 1024


class GatewayError(RuntimeError):
    def __init__(self, message: str, attempts: int = 0):
        self.attempts = attempts
        super().__init__(message if not attempts else f"{message} (after {attempts} attempts)")


class TransientError(GatewayError):
    """A failure worth retrying: 5xx, 429, connection reset, timeout."""


class SegmentationUnavailable(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    image: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown chat role {self.role!r}")


def check_messages(messages: list[ChatMessage]) -> None:
    """Raise ValueError unless system comes at most once and first, then user/assistant alternate."""
    if not messages:
        raise ValueError("no messages")
    rest = messages
    if messages[0].role == "system":
        rest = messages[1:]
    expected = "user"
    for m in rest:
        if m.role == "system":
            raise ValueError("system message must come first and only once")
        if m.role != expected:
            raise ValueError(f"expected a {expected} turn, got {m.role}")
        expected = "assistant" if expected == "user" else "user"
    if not rest or rest[-1].role != "user":
        raise ValueError("conversation must end with a user turn")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_s: float = 0.5
    backoff_max_s: float = 8.0
    jitter: float = 0.25

    def delay(self, attempt: int, rng: random.Random) -> float:
        base = min(self.backoff_max_s, self.backoff_base_s * 2 ** (attempt - 1))
        return base * (1.0 + rng.uniform(-self.jitter, self.jitter))


@dataclass(frozen=True)
class ServiceProfile:
    name: str
    model: str = "mock"
    endpoint: str = ""
    temperature: float = 0.7
    max_in_flight: int = 4
    retry: RetryPolicy = RetryPolicy()
    timeout_s: float = 60.0
    api_key: str = field(default="", repr=False)
    top_p: Optional[float] = None
    max_tokens: Optional[int] = None
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class CallStats:
    """Thread-safe request accounting for one client."""

    def __init__(self):
        self._lock = threading.Lock()
        self.requests = 0
        self.attempts = 0
        self.failures = 0
        self.latencies: list[float] = []
        self.in_flight = 0
        self.max_in_flight_observed = 0
        self.last_attempts = 0

    def enter(self) -> None:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight_observed = max(self.max_in_flight_observed, self.in_flight)

    def leave(self, latency: float, attempts: int, ok: bool) -> None:
        with self._lock:
            self.in_flight -= 1
            self.requests += 1
            self.attempts += attempts
            self.last_attempts = attempts
            self.latencies.append(latency)
            if not ok:
                self.failures += 1

    def summary(self) -> dict:
        with self._lock:
            lat = list(self.latencies)
            return {
                "requests": self.requests,
                "attempts": self.attempts,
                "failures": self.failures,
                "max_in_flight_observed": self.max_in_flight_observed,
                "latency_total_s": float(sum(lat)),
                "latency_mean_s": float(np.mean(lat)) if lat else 0.0,
                "latency_p95_s": float(np.percentile(lat, 95)) if lat else 0.0,
            }


class ServiceClient:
    """Base for every client: a semaphore caps concurrent requests, transient faults are retried."""

    def __init__(self, profile: ServiceProfile, sleep: Callable[[float], None] = time.sleep):
        self.profile = profile
        self.stats = CallStats()
        self._slots = threading.BoundedSemaphore(profile.max_in_flight)
        self._sleep = sleep
        self._jitter_rng = random.Random(profile.name)

    def _call(self, fn: Callable[[], T]) -> T:
        policy = self.profile.retry
        with self._slots:
            self.stats.enter()
            start = time.perf_counter()
            attempt, ok = 0, False
            try:
                while True:
                    attempt += 1
                    try:
                        result = fn()
                        ok = True
                        return result
                    except TransientError as exc:
                        if attempt >= policy.max_attempts:
                            raise GatewayError(f"{self.profile.name}: {exc}", attempt) from exc
                        self._sleep(policy.delay(attempt, self._jitter_rng))
                    except GatewayError as exc:
                        if not exc.attempts:
                            exc.attempts = attempt
                        raise
            finally:
                self.stats.leave(time.perf_counter() - start, attempt, ok)

    def _guard_image(self, image: np.ndarray) -> None:
        if image is None:
            raise GatewayError(f"{self.profile.name}: no image payload")
        arr = np.asarray(image)
        if arr.ndim not in (2, 3) or arr.dtype != np.uint8:
            raise GatewayError(f"{self.profile.name}: image payload not decodable")
        if arr.nbytes > self.profile.max_image_bytes:
            raise GatewayError(f"{self.profile.name}: payload too large ({arr.nbytes} bytes)")


class ChatClient(ServiceClient):
    def chat(self, messages: list[ChatMessage]) -> str:
        check_messages(messages)
        for m in messages:
            if m.image is not None:
                self._guard_image(m.image)
        text = self._call(lambda: self._complete(messages))
        if not text or not text.strip():
            raise GatewayError(f"{self.profile.name}: empty response", self.stats.last_attempts)
        return text

    def vision_chat(self, image: np.ndarray, messages: list[ChatMessage]) -> str:
        """Chat with *image* attached to the first user turn that carries none."""
        self._guard_image(image)
        if not any(m.image is not None for m in messages):
            out, attached = [], False
            for m in messages:
                if not attached and m.role == "user":
                    m = ChatMessage(m.role, m.content, image)
                    attached = True
                out.append(m)
            messages = out
        return self.chat(messages)

    def _complete(self, messages: list[ChatMessage]) -> str:
        raise NotImplementedError


class EmbeddingClient(ServiceClient):
    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            return []
        vectors = self._call(lambda: self._embed(list(texts)))
        if len(vectors) != len(texts):
            raise GatewayError(f"{self.profile.name}: {len(vectors)} vectors for {len(texts)} texts")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise GatewayError(f"{self.profile.name}: dimension mismatch in batch {sorted(dims)}")
        return [np.asarray(v, dtype=np.float64) for v in vectors]

    def _embed(self, texts: list[str]) -> list:
        raise NotImplementedError


class ScoringClient(ServiceClient):
    def score_image_text(self, image: np.ndarray, texts: list[str]) -> list[float]:
        if not texts:
            raise ValueError("no texts to score")
        self._guard_image(image)
        scores = self._call(lambda: self._score(image, list(texts)))
        if len(scores) != len(texts):
            raise GatewayError(f"{self.profile.name}: {len(scores)} scores for {len(texts)} texts")
        return [float(s) for s in scores]

    def _score(self, image: np.ndarray, texts: list[str]) -> list[float]:
        raise NotImplementedError


class SegmentationClient(ServiceClient):
    def segment(self, image: np.ndarray, bbox) -> np.ndarray:
        if not bbox.is_valid():
            raise ValueError(f"invalid bbox {bbox}")
        self._guard_image(image)
        mask = self._call(lambda: self._segment(image, bbox))
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != image.shape[:2]:
            raise GatewayError(f"{self.profile.name}: mask shape {mask.shape} != image {image.shape[:2]}")
        return mask

    def _segment(self, image: np.ndarray, bbox) -> np.ndarray:
        raise NotImplementedError
