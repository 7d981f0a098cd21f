import csv
import json
import math

import pytest
from hypothesis import given, strategies as st

from rodgen import prompts
from rodgen.core import BBoxNorm, Expression, ImageRecord, InDetRecord, ObjectEntry, Report, TargetSet
from rodgen.gateway import MockChatClient, MockEmbeddingClient, ScriptedChatClient
from rodgen.post_process import (EmitError, assign_group, compute_stats, dedup, emit_indet,
                                 leveling_messages, parse_level, read_indet, rewrite_synonymous,
                                 split_images, write_stats)

B1, B2 = BBoxNorm(0, 0, 0.5, 0.5), BBoxNorm(0.5, 0.5, 1, 1)


def e(text, *ids, source="global"):
    return Expression(text, TargetSet(tuple(ids)), source)


def test_dedup_examples():
    out = dedup([e("Fire engine", "1"), e("fire engine", "1", source="seed")])
    assert len(out) == 1 and out[0].text == "Fire engine" and out[0].source == "seed"
    assert len(dedup([e("x", "1"), e("x", "2")])) == 2
    assert dedup([]) == []


texts = st.sampled_from(["a", "A", "b", "B ", "c d", "C  D"])


@given(st.lists(st.tuples(texts, st.sampled_from(["1", "2"]),
                          st.sampled_from(["seed", "global", "local", "rewritten"])), max_size=15))
def test_dedup_idempotent(rows):
    items = [e(t, o, source=s) for t, o, s in rows]
    once = dedup(items)
    assert dedup(once) == once


def test_rewrite_rules():
    x = e("2 kids playing on a seesaw", "1")
    new = rewrite_synonymous(x, ScriptedChatClient(["two children playing on a teeter totter"]))
    assert new.text == "two children playing on a teeter totter" and new.target == x.target
    assert new.source == "rewritten"
    report = Report()
    assert rewrite_synonymous(x, ScriptedChatClient([" ".join(["word"] * 30)]), report) is None
    assert rewrite_synonymous(x, ScriptedChatClient([" "]), report) is None
    assert rewrite_synonymous(x, ScriptedChatClient(["2 Kids playing on a seesaw"]), report) is None
    assert report.counts == {"rewrite_too_long": 1, "rewrite_empty": 1, "rewrite_unchanged": 1}


def test_rewrite_mock_deterministic():
    x = e("man next to the car", "1")
    a = rewrite_synonymous(x, MockChatClient(seed=2))
    b = rewrite_synonymous(x, MockChatClient(seed=2))
    assert a == b and a.text != x.text


def test_level_parsing_umbrella_example():
    reply = prompts.leveling_example().response
    assert parse_level(reply) == 2
    assert assign_group(e("people who are sitting under an umbrella", "1"), ScriptedChatClient([reply])) == "G3"
    assert parse_level("no grade here") is None


def test_group_rules():
    assert assign_group(e("A and B", "1", "2", source="spliced")) == "G5"
    assert assign_group(e("red things", "1", "2", source="summarized")) == "G6"
    assert assign_group(e("man in red", "1", "2", source="transferred")) == "G6"
    report = Report()
    assert assign_group(e("dog", "1"), ScriptedChatClient(["?", "??"]), report) == "G2"
    assert report.counts["group_default"] == 1
    assert assign_group(e("dog", "1"), ScriptedChatClient(["?", "level 0"])) == "G1"


def test_leveling_messages_end_with_grade_request():
    msgs = leveling_messages("dog")
    assert msgs[-1].content == "Grade description: dog." and msgs[0].content == prompts.leveling_task()


def _dataset():
    return [InDetRecord("i1", TargetSet.of("1"), (B1,), "red car", "G2", "global", None),
            InDetRecord("i1", TargetSet.of("1"), (B1,), "red car", "G2", "local", None),
            InDetRecord("i1", TargetSet.of("1", "2"), (B1, B2), "car and dog", "G5", "spliced", None),
            InDetRecord("i2", TargetSet.of("1"), (B1,), "a Dog", "G1", "seed", None)]


def test_stats_identical_instructions_diversity_one(tmp_path):
    stats = compute_stats(_dataset(), MockEmbeddingClient(seed=0))
    assert math.isclose(stats["diversity_mean_pairwise_cosine"], 1.0)
    assert sum(stats["word_histogram"].values()) == stats["instructions"] == 4
    assert math.isclose(sum(stats["group_ratios"].values()), 1.0, abs_tol=1e-9)
    assert stats["targets"] == 3 and stats["images"] == 2
    assert stats["vocabulary_size"] == 5  # red, car, and, dog, a
    paths = write_stats(stats, tmp_path)
    rows = list(csv.reader(open(paths["histogram"])))
    assert rows[0] == ["words", "count"] and sum(int(r[1]) for r in rows[1:]) == 4
    assert json.loads(paths["stats"].read_text())["instructions"] == 4


def test_stats_orthogonal_diversity_zero():
    data = [InDetRecord("i", TargetSet.of("1"), (B1,), t, "G1", "global", None) for t in ("x", "y", "z")]
    emb = MockEmbeddingClient(fixtures={"x": [1, 0, 0], "y": [0, 1, 0], "z": [0, 0, 1]})
    assert compute_stats(data, emb)["diversity_mean_pairwise_cosine"] == 0.0


def test_split_ratio_and_explicit():
    assert sorted(split_images(["a", "b", "c"], (1, 1, 1), seed=5).values()) == ["test", "train", "val"]
    assert split_images(["a", "b", "c"], (1, 1, 1), seed=5) == split_images(["c", "b", "a"], (1, 1, 1), seed=5)
    explicit = {"train": ["a"], "val": ["c"], "test": ["b"]}
    assert split_images(["a", "b", "c"], explicit=explicit) == {"a": "train", "b": "test", "c": "val"}
    with pytest.raises(EmitError):
        split_images(["a"], explicit={"train": ["a"], "test": ["a"]})


@given(st.sets(st.text(alphabet="abcdef", min_size=1, max_size=4), max_size=40),
       st.tuples(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5)), st.integers(0, 99))
def test_splits_partition(ids, ratios, seed):
    out = split_images(ids, ratios, seed=seed)
    assert set(out) == ids and set(out.values()) <= {"train", "val", "test"}


def test_emit_and_read(tmp_path):
    rec = ImageRecord("i1", "x", 10, 10, (ObjectEntry("1", "car", B1), ObjectEntry("2", "dog", B2)))
    grouped = {"i1": [(e("car and dog", "1", "2", source="spliced"), "G5"), (e("car", "1"), "G1")]}
    paths = emit_indet([rec], grouped, tmp_path, explicit={"train": ["i1"]})
    rows = read_indet([paths["train"]])
    assert [r.instruction for r in rows] == ["car", "car and dog"]
    assert rows[1].bboxes == (B1, B2)
    assert paths["val"].read_text() == ""
    with pytest.raises(EmitError):
        emit_indet([rec], {"i1": [(e("ghost", "9"), "G1")]}, tmp_path)
    with pytest.raises(EmitError):
        emit_indet([rec], {"i1": [(e("car", "1"), "G5")]}, tmp_path)
