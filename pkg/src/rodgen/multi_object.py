"""Expressions for sets of objects: splicing, clustering-based commonality summaries,
and transfer of expressions that fit several objects."""
from __future__ import annotations

import logging
import random
import re
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import prompts
from .core import Expression, ImageRecord, Report, TargetSet, fold_text, normalize_text
from .gateway import ChatClient, ChatMessage, EmbeddingClient

logger = logging.getLogger(__name__)

NOISE = -1
_NO_COMMON = re.compile(r"no common propert", re.IGNORECASE)


class SummaryParseError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectProfile:
    object_id: str
    profile_text: str
    embedding: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, ObjectProfile) and self.object_id == other.object_id
                and self.profile_text == other.profile_text
                and np.array_equal(self.embedding, other.embedding))

    def __hash__(self):
        return hash((self.object_id, self.profile_text))


def build_profiles(record: ImageRecord, kept: Sequence[Expression],
                   embedder: EmbeddingClient) -> list[ObjectProfile]:
    """One profile per object with kept single-object expressions, in ascending object_id order."""
    texts: dict[str, list[str]] = {}
    for e in kept:
        if e.target.is_multi:
            raise ValueError("profiles are built from single-object expressions")
        oid = e.target.object_ids[0]
        record.object(oid)
        texts.setdefault(oid, []).append(e.text)
    ids = sorted(texts)
    joined = [", ".join(texts[oid]) for oid in ids]
    vectors = embedder.embed(joined) if joined else []
    return [ObjectProfile(oid, t, v) for oid, t, v in zip(ids, joined, vectors)]


def dbscan(points, eps: float, min_pts: int) -> list[int]:
    """DBSCAN with Euclidean closed-ball neighbourhoods (self included).

    Clusters are numbered 0, 1, ... in order of discovery; noise is -1. A
    border point reachable from several clusters joins the first one found
    when scanning points in input order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(points)
    if n == 0:
        return []
    dims = {len(p) for p in points}
    if len(dims) != 1:
        raise ValueError(f"points have mixed dimensions {sorted(dims)}")
    x = np.asarray(points, dtype=np.float64)
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    neighbours = [np.flatnonzero(row <= eps) for row in dist]
    core = np.array([len(nb) >= min_pts for nb in neighbours])

    labels = [None] * n
    cluster = -1
    for i in range(n):
        if labels[i] is not None or not core[i]:
            continue
        cluster += 1
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbours[p]:
                if labels[q] is None:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
    return [NOISE if lab is None else lab for lab in labels]


def cluster_profiles(profiles: Sequence[ObjectProfile], eps: float, min_pts: int) -> tuple[list, list]:
    """Split profiles into multi-member clusters and leftover (noise or singleton) ids."""
    labels = dbscan([p.embedding for p in profiles], eps, min_pts)
    groups: dict[int, list[ObjectProfile]] = {}
    noise = []
    for p, lab in zip(profiles, labels):
        if lab == NOISE:
            noise.append(p.object_id)
        else:
            groups.setdefault(lab, []).append(p)
    clusters = []
    for lab in sorted(groups):
        if len(groups[lab]) >= 2:
            clusters.append(groups[lab])
        else:
            noise.extend(p.object_id for p in groups[lab])
    return clusters, noise


def _object_number(record: ImageRecord, object_id: str) -> int:
    return record.object_ids().index(object_id) + 1


def summary_prompt(record: ImageRecord, cluster: Sequence[ObjectProfile]) -> str:
    lines = ["Objects and their descriptions:"]
    lines += [f"## object {_object_number(record, p.object_id)}: {p.profile_text}" for p in cluster]
    lines.append("Please find an summarize the similar properties of given objects.")
    return "\n".join(lines)


def build_summary_messages(record: ImageRecord, cluster: Sequence[ObjectProfile]) -> list[ChatMessage]:
    ex = prompts.summary_example()
    return [ChatMessage("system", prompts.summary_task()),
            ChatMessage("user", ex.image2text),
            ChatMessage("assistant", ex.response),
            ChatMessage("user", summary_prompt(record, cluster))]


def parse_summary(response: str) -> list[str]:
    """Phrases of the first ``##`` line split on ';'; an explicit "no common properties" gives []."""
    if _NO_COMMON.search(response or ""):
        return []
    for line in (response or "").splitlines():
        line = line.strip()
        if line.startswith("##"):
            phrases = [normalize_text(p.strip(" .")) for p in line.lstrip("#").split(";")]
            phrases = list(dict.fromkeys(p for p in phrases if p))
            if phrases:
                return phrases
    raise SummaryParseError("no '##' summary line in response")


def summarize_cluster(record: ImageRecord, cluster: Sequence[ObjectProfile], chat: ChatClient,
                      report: Optional[Report] = None) -> list[Expression]:
    if len(cluster) < 2:
        raise ValueError("summaries need a cluster of at least two objects")
    report = report if report is not None else Report()
    messages = build_summary_messages(record, cluster)
    ids = sorted((p.object_id for p in cluster), key=record.object_ids().index)
    target = TargetSet(tuple(ids))
    for _ in range(2):
        try:
            phrases = parse_summary(chat.chat(messages))
        except SummaryParseError:
            continue
        return [Expression(p, target, "summarized") for p in phrases]
    report.add("summary_parse_failure", image_id=record.image_id, object_ids=ids)
    return []


def _join(parts: list[str], joiner: str) -> str:
    if joiner == "and":
        return " and ".join(parts) if len(parts) == 2 else ", ".join(parts[:-1]) + " and " + parts[-1]
    return ", ".join(parts)


def splice_expressions(record: ImageRecord, kept: Sequence[Expression], rng: random.Random,
                       cap: int = 10, triple_rate: float = 0.2) -> list[Expression]:
    """Join expressions of 2 (sometimes 3) distinct objects with "and" or a comma, at most *cap*."""
    by_obj: dict[str, list[str]] = {}
    for e in kept:
        if not e.target.is_multi:
            by_obj.setdefault(e.target.object_ids[0], []).append(e.text)
    order = record.object_ids()
    ids = sorted(by_obj, key=order.index)
    if cap <= 0 or len(ids) < 2:
        return []
    out, seen = [], set()
    for _ in range(cap * 4):
        if len(out) >= cap:
            break
        size = 3 if len(ids) >= 3 and rng.random() < triple_rate else 2
        members = sorted(rng.sample(ids, size), key=order.index)
        parts = [rng.choice(by_obj[m]) for m in members]
        text = _join(parts, rng.choice(("and", "comma")))
        key = (fold_text(text), tuple(members))
        if key in seen:
            continue
        seen.add(key)
        out.append(Expression(text, TargetSet(tuple(members)), "spliced"))
    return out


def transfer_ambiguous(record: ImageRecord, kept: Sequence[Expression]) -> tuple[list, list]:
    """Re-target texts kept for two or more objects to the set of those objects.

    Returns ``(moved, remaining)``: one ``transferred`` expression per shared text,
    and the single-object expressions whose text is unique to one object.
    """
    order = record.object_ids()
    owners: dict[str, list[str]] = {}
    first_text: dict[str, str] = {}
    for e in kept:
        if e.target.is_multi:
            continue
        key = fold_text(e.text)
        first_text.setdefault(key, e.text)
        oid = e.target.object_ids[0]
        if oid not in owners.setdefault(key, []):
            owners[key].append(oid)
    shared = {k for k, ids in owners.items() if len(ids) >= 2}
    moved = [Expression(first_text[k], TargetSet(tuple(sorted(owners[k], key=order.index))), "transferred")
             for k in sorted(shared, key=list(first_text).index)]
    remaining = [e for e in kept if e.target.is_multi or fold_text(e.text) not in shared]
    return moved, remaining
