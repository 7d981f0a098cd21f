import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rodgen import prompts
from rodgen.core import BBoxNorm, Expression, ImageRecord, ObjectEntry, Report, TargetSet
from rodgen.gateway import MockEmbeddingClient, ScriptedChatClient, check_messages
from rodgen.multi_object import (NOISE, ObjectProfile, build_profiles, build_summary_messages,
                                 cluster_profiles, dbscan, parse_summary, splice_expressions,
                                 summarize_cluster, transfer_ambiguous)

from oracles import brute_dbscan_partition

B = BBoxNorm(0.1, 0.1, 0.4, 0.4)


def bed_record():
    return ImageRecord("bed", "bed.png", 100, 100, (
        ObjectEntry("1", "bed", B), ObjectEntry("2", "girl", B), ObjectEntry("3", "man", B)))


def single(oid, text, source="global"):
    return Expression(text, TargetSet.of(oid), source)


def assert_matches_oracle(points, eps, min_pts, labels):
    clusters, border, noise = brute_dbscan_partition(points, eps, min_pts)
    assert {i for i, lab in enumerate(labels) if lab == NOISE} == noise
    found = {}
    for i, lab in enumerate(labels):
        if lab != NOISE:
            found.setdefault(lab, set()).add(i)
    # every produced cluster = one core component plus some of its border points
    cores = set().union(*clusters) if clusters else set()
    assert {frozenset(m & cores) for m in found.values()} == clusters
    for i, opts in border.items():
        core_of_label = frozenset(found[labels[i]] & cores)
        assert core_of_label in opts


def test_dbscan_worked_example():
    labels = dbscan([(0, 0), (0, 1), (10, 10)], 1.5, 2)
    assert labels[0] == labels[1] != NOISE and labels[2] == NOISE


def test_dbscan_identical_and_empty():
    assert dbscan([(1.0, 2.0)] * 5, 0.1, 2) == [0] * 5
    assert dbscan([], 1.5, 2) == []


def test_dbscan_errors():
    with pytest.raises(ValueError):
        dbscan([(0, 0), (0, 0, 0)], 1.0, 2)
    with pytest.raises(ValueError):
        dbscan([(0, 0)], 0.0, 2)
    with pytest.raises(ValueError):
        dbscan([(0, 0)], 1.0, 0)


def test_dbscan_border_goes_to_first_cluster():
    # two dense groups sharing one border point (index 4) within eps of both
    pts = [(0, 0), (0, 0.5), (0, 1.0), (4, 0), (2, 0), (4, 0.5), (4, 1.0)]
    labels = dbscan(pts, 2.0, 4)
    assert labels[4] == labels[0]


@given(st.integers(0, 2 ** 31))
def test_dbscan_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    n, d = int(r.integers(1, 51)), int(r.integers(1, 9))
    pts = r.normal(size=(n, d)) * r.uniform(0.5, 3)
    eps, min_pts = float(r.uniform(0.2, 3.0)), int(r.integers(1, 6))
    labels = dbscan(pts.tolist(), eps, min_pts)
    assert_matches_oracle(pts.tolist(), eps, min_pts, labels)
    # noise points have fewer than min_pts neighbours
    for i, lab in enumerate(labels):
        if lab == NOISE:
            assert (np.linalg.norm(pts - pts[i], axis=1) <= eps).sum() < min_pts


def test_build_profiles():
    rec = bed_record()
    kept = [single("2", "girl sitting on bed"), single("2", "girl with toy"), single("3", "man looking down")]
    profiles = build_profiles(rec, kept, MockEmbeddingClient(seed=0))
    assert [p.object_id for p in profiles] == ["2", "3"]
    assert profiles[0].profile_text == "girl sitting on bed, girl with toy"
    assert build_profiles(rec, [], MockEmbeddingClient()) == []


def _profiles(rec, texts):
    emb = MockEmbeddingClient(seed=0)
    return [ObjectProfile(oid, t, emb.vector(t)) for oid, t in texts]


def test_summary_messages_shape():
    rec = bed_record()
    cluster = _profiles(rec, [("2", "girl sitting on bed, girl with toy"), ("3", "man looking down")])
    msgs = build_summary_messages(rec, cluster)
    check_messages(msgs)
    assert msgs[0].content == prompts.summary_task()
    assert "## object 2: girl sitting on bed, girl with toy\n## object 3: man looking down" in msgs[-1].content


def test_parse_summary_golden():
    reply = prompts.summary_example().response
    assert parse_summary(reply) == ["people on bed", "person sitting on bed", "people playing on bed",
                                    "who sitting on bed"]
    assert parse_summary("there are no common properties") == []


def test_summarize_cluster_targets_and_retry():
    rec = bed_record()
    cluster = _profiles(rec, [("3", "man"), ("2", "girl")])
    reply = prompts.summary_example().response
    out = summarize_cluster(rec, cluster, ScriptedChatClient(["nonsense", reply]))
    assert len(out) == 4 and all(e.target.object_ids == ("2", "3") and e.source == "summarized" for e in out)
    report = Report()
    assert summarize_cluster(rec, cluster, ScriptedChatClient(["x", "y"]), report) == []
    assert report.counts["summary_parse_failure"] == 1
    with pytest.raises(ValueError):
        summarize_cluster(rec, cluster[:1], ScriptedChatClient([reply]))


def test_cluster_profiles_with_fixture_vectors():
    rec = bed_record()
    emb = MockEmbeddingClient(fixtures={"a": [0, 0], "b": [0, 1], "c": [10, 10]})
    profiles = build_profiles(rec, [single("1", "a"), single("2", "b"), single("3", "c")], emb)
    clusters, noise = cluster_profiles(profiles, 1.5, 2)
    assert [[p.object_id for p in c] for c in clusters] == [["1", "2"]] and noise == ["3"]


def test_splice_examples():
    rec = bed_record()
    kept = [single("2", "girl sitting on bed"), single("3", "man looking down")]
    seen = {e.text for e in splice_expressions(rec, kept, random.Random(0), cap=10)}
    assert "girl sitting on bed and man looking down" in seen or "girl sitting on bed, man looking down" in seen
    assert splice_expressions(rec, kept, random.Random(0), cap=0) == []
    assert splice_expressions(rec, kept[:1], random.Random(0)) == []


@given(st.integers(0, 10 ** 6), st.integers(0, 15))
def test_splice_properties(seed, cap):
    rec = bed_record()
    kept = [single(o, f"{o} text {k}") for o in "123" for k in range(3)]
    out = splice_expressions(rec, kept, random.Random(seed), cap=cap)
    assert len(out) <= cap
    for e in out:
        assert e.target.is_multi and len(set(e.target.object_ids)) == len(e.target.object_ids)
        assert e.source == "spliced"
        for oid in e.target.object_ids:
            assert f"{oid} text" in e.text


def test_transfer_ambiguous():
    rec = bed_record()
    kept = [single("1", "man in red"), single("2", "Man in red"), single("3", "man in red"),
            single("2", "unique one")]
    moved, remaining = transfer_ambiguous(rec, kept)
    assert len(moved) == 1 and moved[0].target.object_ids == ("1", "2", "3") and moved[0].source == "transferred"
    assert [e.text for e in remaining] == ["unique one"]
    assert transfer_ambiguous(rec, kept[3:]) == ([], kept[3:])


@given(st.lists(st.tuples(st.sampled_from("123"), st.sampled_from(["a", "b", "c", "d"])), max_size=20))
def test_transfer_conserves_pairs(pairs):
    rec = bed_record()
    kept = [single(o, t) for o, t in dict.fromkeys(pairs)]
    moved, remaining = transfer_ambiguous(rec, kept)
    assert sum(len(m.target) for m in moved) + len(remaining) == len(kept)
    assert all(len(m.target) >= 2 for m in moved)
