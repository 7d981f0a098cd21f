"""Clients for the external model capabilities, real (HTTP) or mocked."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from .base import (ChatClient, ChatMessage, EmbeddingClient, GatewayError, RetryPolicy,
                   ScoringClient, SegmentationClient, SegmentationUnavailable, ServiceProfile,
                   TransientError, check_messages)
from .http import (HttpChatClient, HttpEmbeddingClient, HttpScoringClient,
                   HttpSegmentationClient)
from .mock import (FaultInjection, HashScorer, MockChatClient, MockEmbeddingClient,
                   MockSegmenter, OracleScorer, RandomScorer, ScriptedChatClient, image_digest,
                   request_key)

ENV_PREFIX = "RODGEN_"


@dataclass
class Gateway:
    chat: ChatClient
    vision: ChatClient
    embed: EmbeddingClient
    diversity_embed: EmbeddingClient
    scorer: ScoringClient
    segmenter: Optional[SegmentationClient] = None

    def clients(self) -> dict:
        out = {"chat": self.chat, "vision": self.vision, "embed": self.embed,
               "diversity_embed": self.diversity_embed, "score": self.scorer}
        if self.segmenter is not None:
            out["segment"] = self.segmenter
        return out

    def stats(self) -> dict:
        return {name: c.stats.summary() for name, c in self.clients().items()}


def mock_gateway(seed: int = 0, max_in_flight: int | dict = 4, temperature: float = 0.7,
                 segmentation: bool = True) -> Gateway:
    def cap(name):
        return max_in_flight.get(name, 4) if isinstance(max_in_flight, dict) else max_in_flight

    def prof(name):
        return ServiceProfile(name=name, model=f"mock-{name}", temperature=temperature,
                              max_in_flight=cap(name))

    return Gateway(
        chat=MockChatClient(prof("chat"), seed=seed),
        vision=MockChatClient(prof("vision"), seed=seed),
        embed=MockEmbeddingClient(prof("embed"), seed=seed),
        diversity_embed=MockEmbeddingClient(prof("diversity_embed"), seed=seed + 1),
        scorer=HashScorer(prof("score"), seed=seed),
        segmenter=MockSegmenter(prof("segment"), available=segmentation),
    )


def _env(name: str, field: str, default: str) -> str:
    return os.environ.get(f"{ENV_PREFIX}{name.upper()}_{field}", default)


def http_profile(name: str, cfg) -> ServiceProfile:
    svc = cfg.service(name)
    key_env = svc.api_key_env or f"{ENV_PREFIX}{name.upper()}_API_KEY"
    return ServiceProfile(
        name=name,
        model=_env(name, "MODEL", svc.model),
        endpoint=_env(name, "ENDPOINT", svc.endpoint),
        temperature=cfg.temperature,
        max_in_flight=cfg.in_flight(name),
        retry=RetryPolicy(svc.max_attempts, svc.backoff_base_s, svc.backoff_max_s),
        timeout_s=svc.timeout_s,
        api_key=os.environ.get(key_env, ""),
        top_p=svc.top_p,
        max_tokens=svc.max_tokens,
    )


def build_gateway(cfg) -> Gateway:
    """Mock clients when ``cfg.mock`` is set, HTTP clients otherwise (endpoints from config or env)."""
    if cfg.mock:
        return mock_gateway(cfg.rng_seed, dict(cfg.max_in_flight), cfg.temperature, cfg.use_segmentation)
    missing = [n for n in ("chat", "vision", "embed", "score") if not http_profile(n, cfg).endpoint]
    if missing:
        raise GatewayError(f"no endpoint configured for {', '.join(missing)} "
                           f"(set services.<name>.endpoint or {ENV_PREFIX}<NAME>_ENDPOINT)")
    div = http_profile("diversity_embed", cfg)
    seg = http_profile("segment", cfg)
    return Gateway(
        chat=HttpChatClient(http_profile("chat", cfg)),
        vision=HttpChatClient(http_profile("vision", cfg)),
        embed=HttpEmbeddingClient(http_profile("embed", cfg)),
        diversity_embed=HttpEmbeddingClient(div if div.endpoint else http_profile("embed", cfg)),
        scorer=HttpScoringClient(http_profile("score", cfg)),
        segmenter=HttpSegmentationClient(seg) if (seg.endpoint and cfg.use_segmentation) else None,
    )


__all__ = [
    "ChatClient", "ChatMessage", "EmbeddingClient", "FaultInjection", "Gateway", "GatewayError",
    "HashScorer", "HttpChatClient", "HttpEmbeddingClient", "HttpScoringClient",
    "HttpSegmentationClient", "MockChatClient", "MockEmbeddingClient", "MockSegmenter",
    "OracleScorer", "RandomScorer", "RetryPolicy", "ScoringClient", "ScriptedChatClient",
    "SegmentationClient", "SegmentationUnavailable", "ServiceProfile", "TransientError",
    "build_gateway", "check_messages", "image_digest", "mock_gateway", "request_key",
]
