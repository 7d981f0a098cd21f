"""Chat-completions-style JSON over HTTP.

Wire formats (POST, JSON bodies):

* chat:     ``{endpoint}/chat/completions``  {model, temperature, messages:[{role, content}]}
            -> {choices:[{message:{content}}]}; images are inlined in the content
            list as ``{"type": "image_url", "image_url": {"url": "data:image/png;base64,..."}}``
* embed:    ``{endpoint}/embeddings``  {model, input:[text]} -> {data:[{embedding:[...]}]}
* score:    ``{endpoint}/score``  {model, image:<base64 png>, texts:[text]} -> {scores:[...]}
* segment:  ``{endpoint}/segment``  {model, image:<base64 png>, bbox:[x1,y1,x2,y2]}
            -> {mask:{size:[h,w], counts:[...]}}
"""
from __future__ import annotations

import base64
import io
from typing import Callable, Optional

import numpy as np
import requests
from PIL import Image

from ..core import RLEMask
from .base import (ChatClient, ChatMessage, EmbeddingClient, GatewayError, ScoringClient,
                   SegmentationClient, SegmentationUnavailable, ServiceProfile, TransientError)

# transport(url, payload, headers, timeout) -> (status_code, parsed_json_or_None)
Transport = Callable[[str, dict, dict, float], tuple]

RETRY_STATUS = {408, 429, 500, 502, 503, 504}


def encode_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(data: str) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB"))


def requests_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple:
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except (requests.ConnectionError, requests.Timeout) as exc:
        raise TransientError(f"transport failure: {exc}") from exc
    try:
        body = resp.json()
    except ValueError:
        body = None
    return resp.status_code, body


def message_payload(m: ChatMessage) -> dict:
    if m.image is None:
        return {"role": m.role, "content": m.content}
    return {"role": m.role, "content": [
        {"type": "text", "text": m.content},
        {"type": "image_url", "image_url": {"url": "data:image/png;base64," + encode_png(m.image)}},
    ]}


class _HttpMixin:
    profile: ServiceProfile

    def _init_transport(self, transport: Optional[Transport]):
        self._transport = transport or requests_transport

    def _post(self, path: str, payload: dict) -> dict:
        url = self.profile.endpoint.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        if self.profile.api_key:
            headers["Authorization"] = f"Bearer {self.profile.api_key}"
        status, body = self._transport(url, payload, headers, self.profile.timeout_s)
        if status in RETRY_STATUS:
            raise TransientError(f"HTTP {status} from {url}")
        if status == 404 and path == "/segment":
            raise SegmentationUnavailable("segmentation unavailable")
        if status >= 400:
            raise GatewayError(f"HTTP {status} from {url}: {body}")
        if not isinstance(body, dict):
            raise GatewayError(f"non-JSON response from {url}")
        return body


class HttpChatClient(_HttpMixin, ChatClient):
    def __init__(self, profile: ServiceProfile, transport: Optional[Transport] = None, **kw):
        super().__init__(profile, **kw)
        self._init_transport(transport)

    def _complete(self, messages: list[ChatMessage]) -> str:
        payload = {"model": self.profile.model, "temperature": self.profile.temperature,
                   "messages": [message_payload(m) for m in messages]}
        if self.profile.top_p is not None:
            payload["top_p"] = self.profile.top_p
        if self.profile.max_tokens is not None:
            payload["max_tokens"] = self.profile.max_tokens
        body = self._post("/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {body}") from exc


class HttpEmbeddingClient(_HttpMixin, EmbeddingClient):
    def __init__(self, profile: ServiceProfile, transport: Optional[Transport] = None, **kw):
        super().__init__(profile, **kw)
        self._init_transport(transport)

    def _embed(self, texts: list[str]) -> list:
        body = self._post("/embeddings", {"model": self.profile.model, "input": texts})
        try:
            return [d["embedding"] for d in body["data"]]
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed embedding response: {body}") from exc


class HttpScoringClient(_HttpMixin, ScoringClient):
    def __init__(self, profile: ServiceProfile, transport: Optional[Transport] = None, **kw):
        super().__init__(profile, **kw)
        self._init_transport(transport)

    def _score(self, image: np.ndarray, texts: list[str]) -> list[float]:
        body = self._post("/score", {"model": self.profile.model, "image": encode_png(image), "texts": texts})
        try:
            return list(body["scores"])
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed score response: {body}") from exc


class HttpSegmentationClient(_HttpMixin, SegmentationClient):
    def __init__(self, profile: ServiceProfile, transport: Optional[Transport] = None, **kw):
        super().__init__(profile, **kw)
        self._init_transport(transport)

    def _segment(self, image: np.ndarray, bbox) -> np.ndarray:
        if not self.profile.endpoint:
            raise SegmentationUnavailable("segmentation unavailable")
        body = self._post("/segment", {"model": self.profile.model, "image": encode_png(image),
                                       "bbox": bbox.as_list()})
        try:
            return RLEMask.from_dict(body["mask"]).decode()
        except (KeyError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed segment response: {body}") from exc

    def segment(self, image: np.ndarray, bbox) -> np.ndarray:
        # an unreachable service counts as absent so callers fall back to the box
        try:
            return super().segment(image, bbox)
        except SegmentationUnavailable:
            raise
        except GatewayError as exc:
            raise SegmentationUnavailable(f"segmentation unavailable: {exc}", exc.attempts) from exc
