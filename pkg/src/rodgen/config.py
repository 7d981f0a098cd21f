"""Run configuration with defaults, range checks and file loading."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import yaml

SERVICES = ("chat", "vision", "embed", "diversity_embed", "score", "segment")


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid config: " + "; ".join(violations))


@dataclass(frozen=True)
class ServiceConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 60.0
    max_attempts: int = 3
    backoff_base_s: float = 0.5
    backoff_max_s: float = 8.0
    top_p: Optional[float] = None
    max_tokens: Optional[int] = None


@dataclass(frozen=True)
class InputsConfig:
    annotations: str = ""
    image_root: str = ""
    refs: str = ""
    captions: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    alpha1: float = 0.5
    dbscan_eps: float = 1.5
    dbscan_min_pts: int = 2
    temperature: float = 0.7
    rng_seed: int = 0
    max_in_flight: dict = field(default_factory=lambda: {s: 4 for s in SERVICES})
    retrieval_k: int = 2
    splice_cap: int = 10
    caption_repeats: int = 2
    n_in_context: int = 3
    local_mode: str = "single"  # or "cot"
    local_repeats: int = 1
    rewrite_fraction: float = 0.2
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_ids: Optional[dict] = None
    concurrency: int = 4
    mock: bool = False
    use_segmentation: bool = True
    debug_dir: str = ""
    inputs: InputsConfig = field(default_factory=InputsConfig)
    services: dict = field(default_factory=dict)

    def service(self, name: str) -> ServiceConfig:
        return self.services.get(name, ServiceConfig())

    def in_flight(self, name: str) -> int:
        return int(self.max_in_flight.get(name, 4))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d


def _check(cfg: PipelineConfig) -> list[str]:
    v = []
    if not 0.0 <= cfg.alpha1 <= 1.0:
        v.append(f"alpha1: {cfg.alpha1} not in [0, 1]")
    if not cfg.dbscan_eps > 0:
        v.append(f"dbscan_eps: {cfg.dbscan_eps} must be positive")
    if cfg.dbscan_min_pts < 1:
        v.append(f"dbscan_min_pts: {cfg.dbscan_min_pts} must be >= 1")
    if cfg.temperature < 0:
        v.append(f"temperature: {cfg.temperature} must be >= 0")
    for name, cap in cfg.max_in_flight.items():
        if name not in SERVICES:
            v.append(f"max_in_flight.{name}: unknown service")
        elif int(cap) < 1:
            v.append(f"max_in_flight.{name}: {cap} must be >= 1")
    if cfg.retrieval_k < 1:
        v.append(f"retrieval_k: {cfg.retrieval_k} must be >= 1")
    if cfg.splice_cap < 0:
        v.append(f"splice_cap: {cfg.splice_cap} must be >= 0")
    if cfg.caption_repeats < 1:
        v.append(f"caption_repeats: {cfg.caption_repeats} must be >= 1")
    if cfg.n_in_context < 0:
        v.append(f"n_in_context: {cfg.n_in_context} must be >= 0")
    if cfg.local_mode not in ("single", "cot"):
        v.append(f"local_mode: {cfg.local_mode!r} not one of single, cot")
    if cfg.local_repeats < 0:
        v.append(f"local_repeats: {cfg.local_repeats} must be >= 0")
    if not 0.0 <= cfg.rewrite_fraction <= 1.0:
        v.append(f"rewrite_fraction: {cfg.rewrite_fraction} not in [0, 1]")
    if len(cfg.split_ratios) != 3 or any(r < 0 for r in cfg.split_ratios) or sum(cfg.split_ratios) <= 0:
        v.append(f"split_ratios: {list(cfg.split_ratios)} must be 3 non-negative numbers with positive sum")
    if cfg.split_ids is not None:
        unknown = set(cfg.split_ids) - {"train", "val", "test"}
        if unknown:
            v.append(f"split_ids: unknown splits {sorted(unknown)}")
    if cfg.concurrency < 1:
        v.append(f"concurrency: {cfg.concurrency} must be >= 1")
    for name in cfg.services:
        if name not in SERVICES:
            v.append(f"services.{name}: unknown service")
    return v


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    """Build a config from plain data, applying defaults; raises ConfigError listing every violation."""
    data = dict(data or {})
    violations: list[str] = []
    known = {f.name for f in fields(PipelineConfig)}
    for key in sorted(set(data) - known):
        violations.append(f"{key}: unknown field")
        data.pop(key)

    kwargs: dict[str, Any] = {}
    scalar_types = {"alpha1": float, "dbscan_eps": float, "temperature": float,
                    "rewrite_fraction": float, "dbscan_min_pts": int, "rng_seed": int,
                    "retrieval_k": int, "splice_cap": int, "caption_repeats": int,
                    "n_in_context": int, "local_repeats": int, "concurrency": int,
                    "mock": bool, "use_segmentation": bool, "local_mode": str, "debug_dir": str}
    for key, typ in scalar_types.items():
        if key in data:
            raw = data[key]
            if typ in (int, float) and isinstance(raw, bool):
                violations.append(f"{key}: expected a number, got {raw!r}")
                continue
            try:
                kwargs[key] = typ(raw)
            except (TypeError, ValueError):
                violations.append(f"{key}: cannot read {raw!r} as {typ.__name__}")

    if "max_in_flight" in data:
        raw = data["max_in_flight"]
        caps = {s: 4 for s in SERVICES}
        if isinstance(raw, int) and not isinstance(raw, bool):
            caps = {s: raw for s in SERVICES}
        elif isinstance(raw, dict):
            caps.update(raw)
        else:
            violations.append(f"max_in_flight: expected int or mapping, got {raw!r}")
        kwargs["max_in_flight"] = caps
    if "split_ratios" in data:
        kwargs["split_ratios"] = tuple(float(r) for r in data["split_ratios"])
    if "split_ids" in data and data["split_ids"] is not None:
        kwargs["split_ids"] = {k: [str(i) for i in v] for k, v in data["split_ids"].items()}
    if "inputs" in data:
        try:
            kwargs["inputs"] = InputsConfig(**(data["inputs"] or {}))
        except TypeError as exc:
            violations.append(f"inputs: {exc}")
    if "services" in data:
        services = {}
        for name, svc in (data["services"] or {}).items():
            try:
                services[name] = ServiceConfig(**(svc or {}))
            except TypeError as exc:
                violations.append(f"services.{name}: {exc}")
        kwargs["services"] = services

    cfg = PipelineConfig(**kwargs)
    violations.extend(_check(cfg))
    if violations:
        raise ConfigError(violations)
    return cfg


def validate_config(path: Optional[str | os.PathLike] = None, **overrides) -> PipelineConfig:
    """Load a JSON or YAML config file (or none), apply CLI-style overrides, validate."""
    data: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        if str(path).endswith((".yaml", ".yml")):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text) if text.strip() else {}
        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


def with_overrides(cfg: PipelineConfig, **overrides) -> PipelineConfig:
    new = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    problems = _check(new)
    if problems:
        raise ConfigError(problems)
    return new
