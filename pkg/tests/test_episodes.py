import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskbot.episodes import (
    COLLECTORS,
    Episode,
    EpisodeIdGen,
    Frame,
    Observation,
    ObjectState,
    RawAction,
    StoreError,
    StoreHeader,
    ValidationError,
    ZoneState,
    annotate_episode,
    canon_float,
    create_store,
    intervention_run_count,
    merge_datasets,
    new_episode_id,
    obs_dim,
    read_dataset,
    read_header,
    validate_episode,
    write_episode,
)

OBS_DIM = obs_dim(2, 1)
HEADER = StoreHeader(obs_dim=OBS_DIM, roster="deadbeef")


def make_frame(t, source="expert", rng=None):
    rng = rng or np.random.default_rng(t)
    return Frame(
        t=t,
        obs=rng.uniform(-1, 1, OBS_DIM),
        action=RawAction(0.01, -0.02, 0.05, 1.0),
        source=source,
    )


def make_episode(eid="01ARZ3NDEKTSV4RRFFQ69G5FAV", n=5, sources=None, outcome="success"):
    sources = sources or ["expert"] * n
    frames = [make_frame(t, src) for t, src in enumerate(sources)]
    return Episode(eid, "pick-place:apple:tray", frames, outcome, 3, "scripted-expert")


def test_observation_flatten_round_trip():
    obs = Observation(
        0.5, 0.25, -1.2, 0.8,
        objects=(ObjectState("apple", 0.3, 0.4, True), ObjectState("fork", 0.7, 0.1, False)),
        zones=(ZoneState("tray", 0.8, 0.8, 0.07),),
    )
    vec = obs.to_vector()
    assert vec.shape == (OBS_DIM,)
    back = Observation.from_vector(vec, ("apple", "fork"), ("tray",))
    assert back == obs
    with pytest.raises(ValidationError):
        Observation.from_vector(vec[:-1], ("apple", "fork"), ("tray",))


def test_store_round_trip_is_identity(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, HEADER)
    ep = make_episode()
    write_episode(ep, path)
    (loaded,) = read_dataset(path)
    # first cycle canonicalizes floats; a second cycle must be the identity
    path2 = str(tmp_path / "eps2.jsonl")
    create_store(path2, HEADER)
    write_episode(loaded, path2)
    (loaded2,) = read_dataset(path2)
    assert loaded2 == loaded
    for f1, f2 in zip(loaded.frames, loaded2.frames):
        assert np.array_equal(f1.obs, f2.obs)


def test_nine_digit_canonicalization(tmp_path):
    x = 0.123456789123456789
    c = canon_float(x)
    assert c == float("0.123456789")
    assert canon_float(c) == c


def test_header_checked(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, HEADER)
    assert read_header(path) == HEADER
    bad = str(tmp_path / "bad.jsonl")
    with open(bad, "w") as fh:
        fh.write('{"format":"other/9"}\n')
    with pytest.raises(StoreError, match="header"):
        read_header(bad)


def test_obs_dim_mismatch_rejected(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, StoreHeader(obs_dim=OBS_DIM + 1, roster="deadbeef"))
    with pytest.raises(StoreError, match="obs dim"):
        write_episode(make_episode(), path)


def test_validation_rejects_bad_episodes():
    ep = make_episode(n=0)
    with pytest.raises(ValidationError, match="no frames"):
        validate_episode(ep)
    ep = make_episode()
    ep.frames[2] = Frame(1, ep.frames[2].obs, ep.frames[2].action, "expert")
    with pytest.raises(ValidationError, match="increasing"):
        validate_episode(ep)
    ep = make_episode()
    ep.frames[0] = Frame(0, ep.frames[0].obs, RawAction(0.2, 0, 0, 1.0), "expert")
    with pytest.raises(ValidationError, match="clamp"):
        validate_episode(ep)
    ep = make_episode()
    ep.frames[0] = Frame(0, ep.frames[0].obs, RawAction(0.0, 0, 0, 1.5), "expert")
    with pytest.raises(ValidationError, match="gripper"):
        validate_episode(ep)
    ep = make_episode(outcome="unknown")
    with pytest.raises(ValidationError, match="outcome"):
        validate_episode(ep)
    ep = make_episode()
    ep.frames[1] = Frame(1, ep.frames[1].obs, ep.frames[1].action, "martian")
    with pytest.raises(ValidationError, match="source"):
        validate_episode(ep)


def test_intervention_run_count_oracle():
    # E P P I I P I P I I I -> 3 runs
    sources = ["expert", "policy", "policy", "human-intervention", "human-intervention",
               "policy", "oracle-intervention", "policy", "human-intervention",
               "human-intervention", "human-intervention"]
    ep = make_episode(sources=sources, n=len(sources))
    assert intervention_run_count(ep) == 3
    assert intervention_run_count(make_episode()) == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["expert", "policy", "human-intervention",
                                 "oracle-intervention"]), min_size=1, max_size=40))
def test_intervention_run_count_property(sources):
    ep = make_episode(sources=sources, n=len(sources))
    flags = [s in ("human-intervention", "oracle-intervention") for s in sources]
    brute = sum(1 for i, f in enumerate(flags) if f and (i == 0 or not flags[i - 1]))
    assert intervention_run_count(ep) == brute


def test_filters(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, HEADER)
    gen = EpisodeIdGen(0)
    for i, (task, coll, outcome) in enumerate([
        ("a", "scripted-expert", "success"),
        ("a", "shared-autonomy", "failure"),
        ("b", "teleop", "success"),
    ]):
        ep = make_episode(eid=gen(), n=3)
        ep.task_id, ep.collected_by, ep.outcome = task, coll, outcome
        write_episode(ep, path)
    assert len(read_dataset(path)) == 3
    assert len(read_dataset(path, task_id="a")) == 2
    assert len(read_dataset(path, collected_by="teleop")) == 1
    assert len(read_dataset(path, outcome="success")) == 2
    assert len(read_dataset(path, task_id="a", outcome="success")) == 1
    assert len(read_dataset(path, task_id=["a", "b"])) == 3
    only_long = read_dataset(path, predicate=lambda e: len(e.frames) > 99)
    assert only_long == []


def test_malformed_record_names_index(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, HEADER)
    write_episode(make_episode(), path)
    with open(path, "a") as fh:
        fh.write('{"episode_id": "x", "frames": [}\n')
    with pytest.raises(StoreError, match="index 2"):
        read_dataset(path)


def test_merge(tmp_path):
    a, b, out = (str(tmp_path / n) for n in ("a.jsonl", "b.jsonl", "out.jsonl"))
    gen = EpisodeIdGen(1)
    ids = [gen() for _ in range(4)]
    create_store(a, HEADER)
    create_store(b, HEADER)
    for eid in ids[:2]:
        write_episode(make_episode(eid=eid), a)
    for eid in ids[2:]:
        write_episode(make_episode(eid=eid), b)
    merge_datasets(a, b, out)
    merged = read_dataset(out)
    assert [e.episode_id for e in merged] == ids

    dup = str(tmp_path / "dup.jsonl")
    create_store(dup, HEADER)
    write_episode(make_episode(eid=ids[0]), dup)
    with pytest.raises(StoreError, match="duplicate"):
        merge_datasets(a, dup, str(tmp_path / "boom.jsonl"))

    other = str(tmp_path / "other.jsonl")
    create_store(other, StoreHeader(obs_dim=OBS_DIM, roster="cafef00d"))
    with pytest.raises(StoreError, match="fingerprint"):
        merge_datasets(a, other, str(tmp_path / "boom2.jsonl"))


def test_annotate(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, HEADER)
    ep = make_episode(outcome="failure")
    write_episode(ep, path)
    annotate_episode(path, ep.episode_id, "success", timestamp="2026-01-01T00:00:00Z")
    (loaded,) = read_dataset(path)
    assert loaded.outcome == "success"
    assert loaded.audit == [{"old": "failure", "new": "success",
                             "timestamp": "2026-01-01T00:00:00Z"}]
    annotate_episode(path, ep.episode_id, "aborted", timestamp="2026-01-02T00:00:00Z")
    (loaded,) = read_dataset(path)
    assert loaded.outcome == "aborted"
    assert len(loaded.audit) == 2
    assert loaded.audit[-1]["old"] == "success"
    with pytest.raises(StoreError, match="unknown episode_id"):
        annotate_episode(path, "nope", "success")
    with pytest.raises(ValidationError):
        annotate_episode(path, ep.episode_id, "greatness")


def test_episode_ids():
    a, b = new_episode_id(), new_episode_id()
    assert len(a) == len(b) == 26
    assert all(c in "0123456789ABCDEFGHJKMNPQRSTVWXYZ" for c in a + b)
    gen1, gen2 = EpisodeIdGen(42), EpisodeIdGen(42)
    seq1 = [gen1() for _ in range(5)]
    seq2 = [gen2() for _ in range(5)]
    assert seq1 == seq2
    assert seq1 == sorted(seq1)
    assert len(set(seq1)) == 5
    assert EpisodeIdGen(43)() != seq1[0]


def test_store_lines_are_compact_json(tmp_path):
    path = str(tmp_path / "eps.jsonl")
    create_store(path, HEADER)
    write_episode(make_episode(), path)
    lines = open(path).read().splitlines()
    assert len(lines) == 2
    head = json.loads(lines[0])
    assert head == {"format": "deskbot-episodes/1", "obs_dim": OBS_DIM, "roster": "deadbeef"}
    rec = json.loads(lines[1])
    assert set(rec) == {"episode_id", "task_id", "seed", "outcome",
                        "collected_by", "frames", "audit"}
    assert set(rec["frames"][0]) == {"t", "obs", "action", "source"}


def test_collectors_enum_is_closed():
    ep = make_episode()
    ep.collected_by = "drone"
    with pytest.raises(ValidationError, match="collected_by"):
        validate_episode(ep)
    assert "shared-autonomy" in COLLECTORS
