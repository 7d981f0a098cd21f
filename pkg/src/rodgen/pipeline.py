"""Staged execution with per-image JSONL checkpoints, resume, and run reports.

Each stage reads the previous stage's files from the output directory, processes
images on a bounded thread pool and appends one checkpoint line per finished
image. When a stage completes, its checkpoint is rewritten in image_id order so
outputs do not depend on scheduling.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import time
from collections import Counter
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from . import prompts
from .config import PipelineConfig
from .core import Expression, ImageRecord, Report, dumps, read_jsonl, read_records, validate_record, write_records
from .filter import filter_expressions
from .gateway import Gateway, build_gateway
from .global_pipeline import generate_captions, run_global
from .imaging import load_image, save_image
from .ingest import attach_captions, attach_seed_expressions, load_detection_annotations
from .local_pipeline import run_local
from .multi_object import (build_profiles, cluster_profiles, splice_expressions, summarize_cluster,
                           transfer_ambiguous)
from .post_process import (assign_group, compute_stats, dedup, emit_indet, read_indet,
                           rewrite_synonymous, write_stats)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "global", "local", "filter", "multiobj", "postprocess", "stats")
CHECKPOINTS = {"global": "global.jsonl", "local": "local.jsonl", "filter": "filter.jsonl",
               "multiobj": "multiobj.jsonl", "postprocess": "postprocess.jsonl"}
STAGE_INPUTS = {
    "global": ["records.jsonl"],
    "local": ["records.jsonl"],
    "filter": ["records.jsonl", "global.jsonl", "local.jsonl"],
    "multiobj": ["records.jsonl", "filter.jsonl"],
    "postprocess": ["records.jsonl", "multiobj.jsonl"],
    "stats": ["indet/train.jsonl", "indet/val.jsonl", "indet/test.jsonl"],
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


def derive_rng(seed: int, stage: str, image_id: str, *extra) -> random.Random:
    """Independent stream per (root seed, stage, image) so scheduling order never matters."""
    h = hashlib.sha256(repr((seed, stage, image_id) + extra).encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


class Checkpoint:
    """Append-only per-image JSONL, one line per finished image_id."""

    def __init__(self, path: Path, resume: bool):
        self.path = path
        self.rows: dict[str, dict] = {}
        if resume and path.exists():
            self._recover()
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("", encoding="utf-8")
        self._fh = open(path, "a", encoding="utf-8")

    def _recover(self) -> None:
        data = self.path.read_bytes()
        cut = data.rfind(b"\n") + 1
        if cut < len(data):  # drop a line torn by a crash
            with open(self.path, "r+b") as f:
                f.truncate(cut)
        for line in data[:cut].decode("utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                self.rows[row["image_id"]] = row

    def done(self, image_id: str) -> bool:
        return image_id in self.rows

    def append(self, row: dict) -> None:
        if row["image_id"] in self.rows:
            return
        self._fh.write(dumps(row) + "\n")
        self._fh.flush()
        self.rows[row["image_id"]] = row

    def close(self) -> None:
        self._fh.close()

    def finalize(self) -> list[dict]:
        """Rewrite in canonical image_id order (atomic replace)."""
        self.close()
        rows = [self.rows[k] for k in sorted(self.rows)]
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(dumps(row) + "\n")
        os.replace(tmp, self.path)
        return rows


def load_checkpoint(path: Path) -> dict[str, dict]:
    return {row["image_id"]: row for row in read_jsonl(path)}


def _exprs(rows: Iterable[dict]) -> list[Expression]:
    return [Expression.from_dict(d) for d in rows]


def format_rate(seconds: float, count: int, unit: str) -> Optional[str]:
    if count <= 0:
        return None
    return f"{seconds / count:.2f} s/{unit}"


class Pipeline:
    def __init__(self, config: PipelineConfig, out_dir, gateway: Optional[Gateway] = None,
                 image_loader: Callable[[str], object] = load_image):
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.gateway = gateway or build_gateway(config)
        self.load_image = image_loader

    # --- helpers -------------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def _require(self, stage: str) -> None:
        missing = [n for n in STAGE_INPUTS.get(stage, []) if not self.path(n).exists()]
        if missing:
            raise StageError(stage, f"missing input {', '.join(missing)}")

    def records(self) -> list[ImageRecord]:
        return read_records(self.path("records.jsonl"))

    def _per_image(self, stage: str, records: Sequence[ImageRecord], work, resume: bool,
                   stage_report: dict) -> list[dict]:
        ckpt = Checkpoint(self.path(CHECKPOINTS[stage]), resume)
        todo = [r for r in records if not ckpt.done(r.image_id)]
        stage_report["resumed"] = len(records) - len(todo)
        drops = Counter()
        error: Optional[BaseException] = None
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            pending = {pool.submit(work, r): r for r in todo}
            while pending:
                done, _ = wait(pending, return_when=FIRST_EXCEPTION)
                for fut in done:
                    rec = pending.pop(fut)
                    exc = fut.exception()
                    if exc is not None:
                        if error is None:
                            error = exc
                            for f in pending:
                                f.cancel()
                        logger.error("stage %s image %s failed: %s", stage, rec.image_id, exc)
                        continue
                    row = fut.result()
                    drops.update(row.get("report", {}))
                    ckpt.append(row)
                pending = {f: r for f, r in pending.items() if not f.cancelled()}
        if error is not None:
            ckpt.close()
            raise StageError(stage, f"aborted, checkpoint kept ({len(ckpt.rows)} images done): {error}") from error
        stage_report["dropped"] = dict(sorted(drops.items()))
        return ckpt.finalize()

    # --- stages --------------------------------------------------------------

    def stage_ingest(self, resume: bool, rep: dict) -> None:
        inputs = self.config.inputs
        if not inputs.annotations:
            raise StageError("ingest", "no inputs.annotations configured")
        counts = Counter()
        records = load_detection_annotations(inputs.annotations, inputs.image_root or None, counts)
        if inputs.refs:
            records = attach_seed_expressions(records, inputs.refs, counts)
        if inputs.captions:
            records = attach_captions(records, inputs.captions, counts)
        valid = []
        for r in records:
            problems = validate_record(r)
            if problems:
                counts["invalid_record"] += 1
                logger.warning("image %s rejected: %s", r.image_id, "; ".join(problems))
            else:
                valid.append(r)
        seen = set()
        for r in valid:
            if r.image_id in seen:
                raise StageError("ingest", f"duplicate image_id {r.image_id}")
            seen.add(r.image_id)
        rep["in"] = len(records)
        rep["out"] = write_records(self.path("records.jsonl"), valid)
        rep["refs_attached"] = counts.pop("ref_attached", 0)
        rep["dropped"] = dict(sorted(counts.items()))

    def stage_global(self, resume: bool, rep: dict) -> None:
        records = self.records()
        cfg, gw = self.config, self.gateway

        def work(record: ImageRecord) -> dict:
            report = Report()
            rng = derive_rng(cfg.rng_seed, "global", record.image_id)
            if not record.captions:
                image = self.load_image(record.uri)
                record = generate_captions(record, gw.vision, image, rng, cfg.caption_repeats)
            examples = prompts.in_context_examples()[: cfg.n_in_context]
            exprs = run_global(record, gw.chat, examples, report)
            return {"image_id": record.image_id, "captions": list(record.captions),
                    "expressions": [e.to_dict() for e in exprs], "report": report.counts}

        rows = self._per_image("global", records, work, resume, rep)
        rep["in"], rep["out"] = len(records), sum(len(r["expressions"]) for r in rows)

    def stage_local(self, resume: bool, rep: dict) -> None:
        records = self.records()
        cfg, gw = self.config, self.gateway

        def work(record: ImageRecord) -> dict:
            report = Report()
            items = []
            if cfg.local_repeats > 0:
                image = self.load_image(record.uri)
                for obj in record.objects:
                    for rep_i in range(cfg.local_repeats):
                        rng = derive_rng(cfg.rng_seed, "local", record.image_id, obj.object_id, rep_i)
                        for expr, prompt in run_local(record, obj, image, gw.vision, rng,
                                                      cfg.local_mode, report, cfg.debug_dir or None):
                            items.append({"expression": expr.to_dict(), "prompt": prompt})
            return {"image_id": record.image_id, "expressions": items, "report": report.counts}

        rows = self._per_image("local", records, work, resume, rep)
        rep["in"], rep["out"] = len(records), sum(len(r["expressions"]) for r in rows)

    def stage_filter(self, resume: bool, rep: dict) -> None:
        records = self.records()
        glob = load_checkpoint(self.path("global.jsonl"))
        local = load_checkpoint(self.path("local.jsonl"))
        cfg, gw = self.config, self.gateway

        def work(record: ImageRecord) -> dict:
            cands = _exprs(glob.get(record.image_id, {}).get("expressions", []))
            cands += _exprs(it["expression"] for it in local.get(record.image_id, {}).get("expressions", []))
            image = self.load_image(record.uri)
            res = filter_expressions(cands, record, image, gw.scorer, cfg.alpha1, gw.segmenter)
            if cfg.debug_dir:
                from .filter import object_mask, render_visual_prompt
                for obj in record.objects:
                    mask = object_mask(record, obj, image, gw.segmenter)
                    save_image(render_visual_prompt(image, obj.bbox, mask),
                               Path(cfg.debug_dir) / f"{record.image_id}_{obj.object_id}_vp.png")
            return {"image_id": record.image_id,
                    "candidates": len(cands),
                    "seeds": [e.to_dict() for e in res.seeds],
                    "kept": [e.to_dict() for e in res.kept],
                    "dropped": [e.to_dict() for e in res.dropped],
                    "references": {k: {"text": t, **s.to_dict()} for k, (t, s) in sorted(res.references.items())},
                    "rows": res.rows,
                    "report": {"filtered_out": len(res.dropped)} if res.dropped else {}}

        rows = self._per_image("filter", records, work, resume, rep)
        with open(self.path("filter_report.jsonl"), "w", encoding="utf-8") as f:
            for row in rows:
                for r in row["rows"]:
                    f.write(dumps(r) + "\n")
        rep["in"] = sum(r["candidates"] for r in rows)
        rep["out"] = sum(len(r["kept"]) for r in rows)

    def stage_multiobj(self, resume: bool, rep: dict) -> None:
        records = self.records()
        filt = load_checkpoint(self.path("filter.jsonl"))
        cfg, gw = self.config, self.gateway

        def work(record: ImageRecord) -> dict:
            report = Report()
            row = filt.get(record.image_id, {})
            kept = _exprs(row.get("seeds", [])) + _exprs(row.get("kept", []))
            moved, remaining = transfer_ambiguous(record, kept)
            profiles = build_profiles(record, kept, gw.embed)
            clusters, noise = cluster_profiles(profiles, cfg.dbscan_eps, cfg.dbscan_min_pts)
            summarized, cluster_rows = [], []
            for cluster in clusters:
                phrases = summarize_cluster(record, cluster, gw.chat, report)
                summarized.extend(phrases)
                cluster_rows.append({"object_ids": list(phrases[0].target.object_ids) if phrases else
                                     sorted(p.object_id for p in cluster),
                                     "phrases": [e.text for e in phrases]})
            rng = derive_rng(cfg.rng_seed, "splice", record.image_id)
            spliced = splice_expressions(record, remaining, rng, cfg.splice_cap)
            out = remaining + moved + summarized + spliced
            return {"image_id": record.image_id, "in": len(kept),
                    "expressions": [e.to_dict() for e in out],
                    "clusters": cluster_rows, "noise": sorted(noise), "report": report.counts}

        rows = self._per_image("multiobj", records, work, resume, rep)
        with open(self.path("cluster_report.jsonl"), "w", encoding="utf-8") as f:
            for row in rows:
                f.write(dumps({"image_id": row["image_id"], "clusters": row["clusters"],
                               "noise": row["noise"]}) + "\n")
        rep["in"] = sum(r["in"] for r in rows)
        rep["out"] = sum(len(r["expressions"]) for r in rows)

    def stage_postprocess(self, resume: bool, rep: dict) -> None:
        records = self.records()
        multi = load_checkpoint(self.path("multiobj.jsonl"))
        cfg, gw = self.config, self.gateway

        def work(record: ImageRecord) -> dict:
            report = Report()
            exprs = dedup(_exprs(multi.get(record.image_id, {}).get("expressions", [])))
            rng = derive_rng(cfg.rng_seed, "rewrite", record.image_id)
            rewrites = []
            for e in exprs:
                if not e.target.is_multi and rng.random() < cfg.rewrite_fraction:
                    new = rewrite_synonymous(e, gw.chat, report)
                    if new is not None:
                        rewrites.append(new)
            exprs = dedup(exprs + rewrites)
            items = [{"expression": e.to_dict(), "group": assign_group(e, gw.chat, report)} for e in exprs]
            return {"image_id": record.image_id, "items": items, "report": report.counts}

        rows = self._per_image("postprocess", records, work, resume, rep)
        by_id = {r.image_id: r for r in records}
        grouped = {row["image_id"]: [(Expression.from_dict(it["expression"]), it["group"]) for it in row["items"]]
                   for row in rows if row["image_id"] in by_id and row["items"]}
        emit_indet(records, grouped, self.path("indet"), cfg.split_ratios, cfg.split_ids, cfg.rng_seed)
        rep["in"] = len(records)
        rep["out"] = sum(len(v) for v in grouped.values())

    def stage_stats(self, resume: bool, rep: dict) -> None:
        dataset = read_indet(self.path(f"indet/{s}.jsonl") for s in ("train", "val", "test"))
        if not dataset:
            raise StageError("stats", "no instructions to summarize")
        stats = compute_stats(dataset, self.gateway.diversity_embed)
        write_stats(stats, self.path("stats"))
        rep["in"] = rep["out"] = len(dataset)

    # --- driver ----------------------------------------------------------------

    def run(self, stages: Iterable[str] = STAGES, resume: bool = False) -> dict:
        wanted = set(stages)
        unknown = wanted - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stages {sorted(unknown)}")
        report = {"config": self.config.to_dict(), "stages": {}}
        start = time.perf_counter()
        try:
            for stage in STAGES:
                if stage not in wanted:
                    continue
                self._require(stage)
                rep: dict = {}
                before = self.gateway.stats()
                t0 = time.perf_counter()
                logger.info("stage %s: start", stage)
                getattr(self, f"stage_{stage}")(resume, rep)
                rep["wall_s"] = time.perf_counter() - t0
                rep["requests"] = _stats_delta(before, self.gateway.stats())
                rep["throughput"] = self._throughput(stage, rep)
                report["stages"][stage] = rep
                logger.info("stage %s: done in %.2fs", stage, rep["wall_s"])
        finally:
            report["wall_s"] = time.perf_counter() - start
            report["services"] = self.gateway.stats()
            self.path("report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n",
                                                encoding="utf-8")
        return report

    def _throughput(self, stage: str, rep: dict) -> dict:
        images = len(self.records()) if self.path("records.jsonl").exists() else 0
        processed = max(images - rep.get("resumed", 0), 0)
        instr = rep.get("out", 0) if stage in CHECKPOINTS else 0
        latency = sum(s["latency_total_s"] for s in rep["requests"].values())
        wall = rep["wall_s"]
        return {
            "images": processed,
            "instructions": instr,
            "s_per_image": wall / processed if processed else None,
            "s_per_instr": wall / instr if instr else None,
            "model_latency_s": latency,
            "per_image": format_rate(wall, processed, "image"),
            "per_instruction": format_rate(wall, instr, "instr."),
        }


def _stats_delta(before: dict, after: dict) -> dict:
    out = {}
    for name, a in after.items():
        b = before.get(name, {})
        n = a["requests"] - b.get("requests", 0)
        if n <= 0:
            continue
        lat = a["latency_total_s"] - b.get("latency_total_s", 0.0)
        out[name] = {"requests": n, "attempts": a["attempts"] - b.get("attempts", 0),
                     "failures": a["failures"] - b.get("failures", 0),
                     "latency_total_s": lat, "latency_mean_s": lat / n,
                     "per_request": f"{lat / n:.3f} s/request",
                     "max_in_flight_observed": a["max_in_flight_observed"]}
    return out
